//! Fitted Q-calibration of a cross-fitted boosted-tree Q-function, with the
//! empirical Bellman orthogonality certificate.

use std::sync::Arc;

use bellman_calib::calibration::{check_bellman_orthogonality, cross_fitted_calibration, CalibrationConfig};
use bellman_calib::fqi::{cross_fitted_fqi, FqiConfig};
use bellman_calib::regression::{RegressorSpec, TreeParams, TupleFeatures};
use bellman_calib::simulation::{arm_policy, generate_dataset, SimConfig};

fn main() -> bellman_calib::Result<()> {
    let sim = SimConfig::new(2000, 0.8, 0.0, 1)?;
    let data = generate_dataset(&sim)?;
    let pi = arm_policy();

    let fqi = FqiConfig::new(0.8, RegressorSpec::boosted_trees(TreeParams::default())?)?;
    let features = Arc::new(TupleFeatures::new(data.alphabet().clone()));
    let q_hat = cross_fitted_fqi(&data, &pi, features, &fqi, 5, 17)?;

    let before = check_bellman_orthogonality(&data, &pi, &q_hat, 0.8)?;
    let (qstar, report) = cross_fitted_calibration(&data, &pi, &q_hat, &CalibrationConfig::new(0.8)?)?;
    let after = check_bellman_orthogonality(&data, &pi, &qstar, 0.8)?;

    println!("orthogonality residual before {before:.3e}, after {after:.3e}");
    println!(
        "{} iterations, {} levels, converged {}, exact fixed point {}",
        report.iterations, report.n_levels, report.converged, report.refined
    );
    println!("calibrator levels {:.3?}", qstar.calibrator().levels());
    Ok(())
}
