//! Nonparametric efficiency bound of the simulation's ATE, computed exactly
//! from the analytic law. Only the dominant term
//! `E[w(A,S)^2 Var(Y + gamma V(q)(S1) | A, S)]` is counted.
//!
//! The bound tells how precise any regular estimator can be at a given n.

use bellman_calib::estimators::nonparametric_weights;
use bellman_calib::mdp::{population_dataset, Action, QFunction, State};
use bellman_calib::simulation::{
    analytic_mdp, arm_policy, ate_functional, oracle_truth, sim_alphabet, SimConfig, N_COVARIATE_STATES,
};

fn main() -> bellman_calib::Result<()> {
    let n = 2000.0;
    for (gamma, beta) in [(0.0, 0.0), (0.5, 0.0), (0.8, 0.0), (0.5, 0.6), (0.8, 0.6)] {
        let sim = SimConfig::new(2000, gamma, beta, 0)?;
        let mdp = analytic_mdp(&sim)?;
        let pi = arm_policy();
        let truth = oracle_truth(&sim)?;
        let q = truth.q.as_ref().expect("oracle Q");
        let data = population_dataset(&mdp, &pi, sim_alphabet())?;
        let w = nonparametric_weights(&data, &pi, &ate_functional(), gamma, 1e4)?;

        let ns = mdp.n_states();
        let arm = |s: usize| (s / N_COVARIATE_STATES) as Action;
        let v: Vec<f64> = (0..ns).map(|s| q.value(arm(s), s as State)).collect();
        let mut var = 0.0;
        for (i, r) in data.records().iter().enumerate() {
            // one record per (s0, s1); take each s0 once
            if i > 0 && data.record(i - 1).s0 == r.s0 {
                continue;
            }
            let s = r.s0 as usize;
            let row = mdp.transition_row(r.s0, r.a0);
            let mean: f64 = row.iter().zip(&v).map(|(p, x)| p * x).sum();
            let spread: f64 = row.iter().zip(&v).map(|(p, x)| p * (x - mean).powi(2)).sum();
            let y = mdp.reward(r.s0, r.a0);
            var += mdp.init_dist()[s] * w.weight(i).powi(2) * (y * (1.0 - y) + gamma * gamma * spread);
        }
        println!(
            "gamma {gamma:.1} beta {beta:.1}: ATE {:.4}, bound sd {:.3}, se at n=2000 {:.4}, max |w| {:.1}",
            truth.true_ate,
            var.sqrt(),
            (var / n).sqrt(),
            w.max_abs_weight()
        );
    }
    Ok(())
}
