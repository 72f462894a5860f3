//! Small bias / SE / coverage grid, written as CSV and plot JSON.
//!
//!     cargo run --release --example monte_carlo -- /tmp/grid

use std::path::PathBuf;

use bellman_calib::pipeline::{Method, PipelineOptions};
use bellman_calib::simulation::{run_experiment, summarize, write_outputs, ExperimentConfig};

fn main() -> bellman_calib::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("bellman-grid"));
    let cfg = ExperimentConfig {
        gammas: vec![0.0, 0.5],
        betas: vec![0.0],
        ns: vec![1000],
        reps: 20,
        seed: 3,
        methods: vec![Method::PluginCalibrated, Method::DrlNonparam, Method::OraclePlugin],
        pipeline: PipelineOptions {
            folds: 2,
            ..PipelineOptions::default()
        },
        ..ExperimentConfig::default()
    };
    let result = run_experiment(&cfg)?;
    for s in summarize(&result.rows) {
        println!(
            "gamma {:.1} {:<18} bias {:+.4} sd {:.4} se {:.4} coverage {:.2}",
            s.gamma, s.method.name(), s.bias, s.emp_sd, s.mean_se, s.coverage
        );
    }
    for p in write_outputs(&result, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
