//! Three routes to the Riesz representer of a policy value on population
//! pseudo-data: exact tabular weights, the one-hot linear representer, and
//! the representer of the model reduced to the levels of the true Q.

use std::sync::Arc;

use bellman_calib::estimators::{nonparametric_weights, FunctionalSpec};
use bellman_calib::mdp::{population_dataset, tabular_q_solve, Policy, TabularMDP};
use bellman_calib::regression::OneHotCells;
use bellman_calib::riesz::{estimate_representer_dimreduced, estimate_representer_linear};
use bellman_calib::mdp::StateAlphabet;

fn main() -> bellman_calib::Result<()> {
    let gamma = 0.7;
    let transition = vec![
        0.8, 0.2, 0.0, //
        0.1, 0.6, 0.3, //
        0.3, 0.4, 0.3, //
        0.0, 0.5, 0.5, //
        0.5, 0.0, 0.5, //
        0.2, 0.2, 0.6, //
    ];
    let reward = vec![0.0, 0.5, 0.2, 0.9, 1.0, 0.4];
    let mdp = TabularMDP::new(3, 2, transition, reward, vec![0.5, 0.3, 0.2], gamma)?;
    let behavior = Policy::uniform(3, 2)?;
    let target = Policy::deterministic(3, 2, 1)?;
    let data = population_dataset(&mdp, &behavior, Arc::new(StateAlphabet::indexed(3)))?;
    let f = FunctionalSpec::policy_value(target.clone());

    let exact = nonparametric_weights(&data, &target, &f, gamma, 1e4)?;
    let onehot = Arc::new(OneHotCells { n_states: 3, n_actions: 2 });
    let linear = estimate_representer_linear(&data, &target, &f, onehot, gamma, Some(0.0))?;
    let q = tabular_q_solve(&mdp, &target)?;
    let reduced = estimate_representer_dimreduced(&data, &target, &f, &q, gamma)?;

    println!("{:>4} {:>3} {:>3} {:>10} {:>10} {:>10}", "i", "s", "a", "tabular", "linear", "reduced");
    for (i, r) in data.records().iter().enumerate().step_by(3) {
        println!(
            "{i:>4} {:>3} {:>3} {:>10.5} {:>10.5} {:>10.5}",
            r.s0,
            r.a0,
            exact.weight(i),
            linear.weight(i),
            reduced.weight(i)
        );
    }
    Ok(())
}
