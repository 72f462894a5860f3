//! The four estimators on one simulated dataset, sharing nuisances.
//!
//!     cargo run --release --example estimators

use bellman_calib::pipeline::{Analysis, Method, PipelineOptions};
use bellman_calib::simulation::{arm_policy, ate_functional, generate_dataset, oracle_truth, SimConfig};

fn main() -> bellman_calib::Result<()> {
    let sim = SimConfig::new(2000, 0.5, 0.3, 5)?;
    let data = generate_dataset(&sim)?;
    let truth = oracle_truth(&sim)?;
    let (pi, f) = (arm_policy(), ate_functional());

    let analysis = Analysis::new(&data, &pi, &f, sim.gamma, PipelineOptions::default(), 99)?;
    println!("true ATE {:.4}", truth.true_ate);
    for m in [Method::PluginCalibrated, Method::DrlSemi, Method::DrlRobust, Method::DrlNonparam] {
        let r = analysis.run(m, None)?;
        println!("{:<18} {:.4} ({:.4})  [{:.4}, {:.4}]", r.method, r.estimate, r.se, r.ci_lo, r.ci_hi);
        for (k, v) in &r.diagnostics {
            println!("    {k} = {v:.4}");
        }
    }
    Ok(())
}
