mod common;

use std::sync::Arc;

use bellman_calib::calibration::{check_bellman_orthogonality, fitted_q_calibration, CalibrationConfig};
use bellman_calib::mdp::{
    population_dataset, tabular_q_solve, Action, QFunction, State, StateAlphabet, TabularQ,
};
use bellman_calib::regression::pava_isotonic;
use common::*;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tabular_q_is_a_bellman_fixed_point(seed in any::<u64>(), ns in 2usize..8, na in 1usize..4, gamma in 0.0f64..0.97) {
        let mut rng = rng(seed);
        let mdp = random_mdp(&mut rng, ns, na, gamma);
        let pi = random_policy(&mut rng, ns, na);
        let q = tabular_q_solve(&mdp, &pi).unwrap();
        for s in 0..ns as State {
            for a in 0..na as Action {
                let next: f64 = mdp.transition_row(s, a).iter().enumerate().map(|(t, p)| {
                    p * (0..na as Action).map(|b| pi.prob(b, t as State) * q.value(b, t as State)).sum::<f64>()
                }).sum();
                prop_assert!((q.value(a, s) - mdp.reward(s, a) - gamma * next).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn calibration_certificate_on_random_mdps(seed in any::<u64>(), ns in 2usize..7, na in 1usize..4, gamma in 0.0f64..0.95) {
        let mut rng = rng(seed);
        let mdp = random_mdp(&mut rng, ns, na, gamma);
        let pi = random_policy(&mut rng, ns, na);
        let b = random_policy(&mut rng, ns, na);
        let alphabet = Arc::new(StateAlphabet::product(&["s"], &[ns]).unwrap());
        let data = population_dataset(&mdp, &b, alphabet).unwrap();
        let values = (0..ns * na).map(|_| rng.random_range(-2.0..2.0)).collect();
        let base: Arc<dyn QFunction> = Arc::new(TabularQ::new(ns, na, values).unwrap());
        let cfg = CalibrationConfig::new(gamma).unwrap().with_min_pool_weight(0.0).unwrap();
        let (qstar, _) = fitted_q_calibration(&data, &pi, base, &cfg).unwrap();
        prop_assert!(check_bellman_orthogonality(&data, &pi, &qstar, gamma).unwrap() <= 1e-8);
    }

    #[test]
    fn pava_is_monotone_and_mean_preserving(
        pts in prop::collection::vec((-10.0f64..10.0, -5.0f64..5.0, 0.1f64..3.0), 1..60),
    ) {
        let mut pts = pts;
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (x, (y, w)): (Vec<f64>, (Vec<f64>, Vec<f64>)) = pts.iter().map(|p| (p.0, (p.1, p.2))).unzip();
        let f = pava_isotonic(&x, &y, &w, 0.0).unwrap();
        let fit: Vec<f64> = x.iter().map(|&v| f.evaluate(v)).collect();
        for k in 1..fit.len() {
            prop_assert!(fit[k] >= fit[k - 1] - 1e-12);
        }
        let wsum: f64 = w.iter().sum();
        let lhs: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum;
        let rhs: f64 = fit.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum;
        prop_assert!((lhs - rhs).abs() < 1e-10);
        // refitting the fit returns it
        let again = pava_isotonic(&x, &fit, &w, 0.0).unwrap();
        for &v in &x {
            prop_assert!((again.evaluate(v) - f.evaluate(v)).abs() < 1e-12);
        }
    }
}
