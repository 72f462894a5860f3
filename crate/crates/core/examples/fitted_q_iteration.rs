//! Fitted Q-iteration: the tabular backend on population pseudo-data hits
//! the linear-solve answer; boosted trees on a sample get close.

use std::sync::Arc;

use bellman_calib::fqi::{fitted_q_iteration, FqiConfig};
use bellman_calib::mdp::{population_dataset, tabular_q_solve, QFunction};
use bellman_calib::regression::{CellFeatures, RegressorSpec, TreeParams, TupleFeatures};
use bellman_calib::simulation::{analytic_mdp, arm_policy, generate_dataset, sim_alphabet, SimConfig};

fn main() -> bellman_calib::Result<()> {
    let sim = SimConfig::new(4000, 0.8, 0.3, 3)?;
    let mdp = analytic_mdp(&sim)?;
    let pi = arm_policy();
    let exact = tabular_q_solve(&mdp, &pi)?;

    let population = population_dataset(&mdp, &pi, sim_alphabet())?;
    let cfg = FqiConfig::new(0.8, RegressorSpec::TabularMean)?
        .with_tol(1e-12)?
        .with_max_iters(2000)?;
    let (q, diag) = fitted_q_iteration(&population, &pi, Arc::new(CellFeatures), &cfg)?;
    let err = population
        .records()
        .iter()
        .map(|r| (q.value(r.a0, r.s0) - exact.value(r.a0, r.s0)).abs())
        .fold(0.0, f64::max);
    println!("tabular: {} iterations, max error {err:.2e}", diag.iterations);

    let data = generate_dataset(&sim)?;
    let cfg = FqiConfig::new(0.8, RegressorSpec::boosted_trees(TreeParams::default())?)?;
    let features = Arc::new(TupleFeatures::new(data.alphabet().clone()));
    let (q, diag) = fitted_q_iteration(&data, &pi, features, &cfg)?;
    let rmse = (data
        .records()
        .iter()
        .map(|r| (q.value(r.a0, r.s0) - exact.value(r.a0, r.s0)).powi(2))
        .sum::<f64>()
        / data.len() as f64)
        .sqrt();
    println!(
        "boosted trees: {} iterations (converged {}), rmse on the sample {rmse:.4}",
        diag.iterations, diag.converged
    );
    Ok(())
}
