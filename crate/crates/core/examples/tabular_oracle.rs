//! Exact Q-function, discounted occupancy and weighting function of a small
//! hand-built MDP.

use bellman_calib::mdp::{
    discounted_occupancy, tabular_occupancy_ratio, tabular_q_solve, Policy, QFunction, TabularMDP,
};

fn main() -> bellman_calib::Result<()> {
    // two states, two actions; action 1 pushes toward state 1, which pays more
    let transition = vec![
        0.9, 0.1, // s0 a0
        0.3, 0.7, // s0 a1
        0.6, 0.4, // s1 a0
        0.2, 0.8, // s1 a1
    ];
    let reward = vec![0.0, 0.1, 1.0, 1.1];
    let mdp = TabularMDP::new(2, 2, transition, reward, vec![0.5, 0.5], 0.9)?;

    let target = Policy::deterministic(2, 2, 1)?;
    let behavior = Policy::uniform(2, 2)?;
    let q = tabular_q_solve(&mdp, &target)?;
    for s in 0..2 {
        println!("q(a=1, s={s}) = {:.4}   q(a=0, s={s}) = {:.4}", q.value(1, s), q.value(0, s));
    }

    // start measure over (s, a) cells, row-major by state
    let start: Vec<f64> = (0..2)
        .flat_map(|s| (0..2).map(move |a| (a, s)))
        .map(|(a, s)| mdp.init_dist()[s as usize] * target.prob(a, s))
        .collect();
    let occ = discounted_occupancy(&mdp, &target, &start)?;
    println!("discounted occupancy {occ:.4?}  (sums to 1/(1-gamma) = {:.1})", occ.iter().sum::<f64>());

    let d = tabular_occupancy_ratio(&mdp, &target, &behavior, 1e4)?;
    for s in 0..2 {
        println!("d(a=1, s={s}) = {:.4}", d.value(1, s));
    }
    Ok(())
}
