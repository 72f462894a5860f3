//! One replicate of the retention simulation: every estimator against the
//! exact ATE.
//!
//!     cargo run --release --example simulate_one -- 0.8 0.6 2000

use std::time::Instant;

use bellman_calib::pipeline::{Analysis, Method, PipelineOptions};
use bellman_calib::simulation::{arm_policy, ate_functional, generate_dataset, oracle_truth, SimConfig};

fn main() -> bellman_calib::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let sim = SimConfig::new(arg(2, 2000.0) as usize, arg(0, 0.8), arg(1, 0.6), 7)?;

    let truth = oracle_truth(&sim)?;
    let data = generate_dataset(&sim)?;
    let (pi, f) = (arm_policy(), ate_functional());
    println!("truth ATE {:.5}  (psi1 {:.5}, psi0 {:.5})", truth.true_ate, truth.psi1, truth.psi0);

    let analysis = Analysis::new(&data, &pi, &f, sim.gamma, PipelineOptions::default(), sim.seed)?;
    for m in Method::ALL {
        let t = Instant::now();
        match analysis.run(m, truth.q.as_ref().map(|q| q as _)) {
            Ok(r) => println!(
                "{:<28} {:>9.5}  se {:.5}  [{:.5}, {:.5}]  covers {}  ({:.2?})",
                m.name(),
                r.estimate,
                r.se,
                r.ci_lo,
                r.ci_hi,
                r.covers(truth.true_ate),
                t.elapsed()
            ),
            Err(e) => println!("{:<28} failed: {e}", m.name()),
        }
    }
    Ok(())
}
