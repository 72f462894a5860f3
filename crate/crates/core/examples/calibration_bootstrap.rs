//! Percentile interval for the calibrated plug-in from resampling only the
//! calibration step.

use std::sync::Arc;

use bellman_calib::calibration::CalibrationConfig;
use bellman_calib::estimators::bootstrap_calibration_ci;
use bellman_calib::fqi::{cross_fitted_fqi, FqiConfig};
use bellman_calib::regression::{RegressorSpec, TreeParams, TupleFeatures};
use bellman_calib::simulation::{arm_policy, ate_functional, generate_dataset, oracle_truth, SimConfig};

fn main() -> bellman_calib::Result<()> {
    let sim = SimConfig::new(2000, 0.5, 0.0, 8)?;
    let data = generate_dataset(&sim)?;
    let (pi, f) = (arm_policy(), ate_functional());

    let fqi = FqiConfig::new(sim.gamma, RegressorSpec::boosted_trees(TreeParams::default())?)?;
    let features = Arc::new(TupleFeatures::new(data.alphabet().clone()));
    let q_hat = cross_fitted_fqi(&data, &pi, features, &fqi, 5, 4)?;

    let cfg = CalibrationConfig::new(sim.gamma)?;
    let b = bootstrap_calibration_ci(&data, &pi, &f, &q_hat, &cfg, 500, 0.95, 12)?;
    println!("estimate {:.4}  95% [{:.4}, {:.4}]  bootstrap sd {:.4}", b.estimate, b.lo, b.hi, b.sd());
    println!("truth    {:.4}", oracle_truth(&sim)?.true_ate);
    Ok(())
}
