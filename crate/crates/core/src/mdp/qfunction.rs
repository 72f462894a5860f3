use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Action, Policy, State, Transition};
use crate::error::{Error, Result};

/// Which family a Q-function belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QKind {
    Tabular,
    Regressor,
    Calibrated,
}

/// A pure map `(a, s) -> R`.
pub trait QFunction: Send + Sync {
    fn value(&self, a: Action, s: State) -> f64;
    fn kind(&self) -> QKind;
}

impl<T: QFunction + ?Sized> QFunction for Arc<T> {
    fn value(&self, a: Action, s: State) -> f64 {
        (**self).value(a, s)
    }
    fn kind(&self) -> QKind {
        (**self).kind()
    }
}

impl<T: QFunction + ?Sized> QFunction for &T {
    fn value(&self, a: Action, s: State) -> f64 {
        (**self).value(a, s)
    }
    fn kind(&self) -> QKind {
        (**self).kind()
    }
}

/// A Q-function that may depend on which record it is evaluated for.
///
/// Cross-fitted estimates evaluate record `i` with the model that did not see
/// it; every plain [`QFunction`] ignores the record index.
pub trait RecordQ: Send + Sync {
    fn value_for(&self, record: usize, a: Action, s: State) -> f64;
}

impl<T: QFunction + ?Sized> RecordQ for T {
    fn value_for(&self, _record: usize, a: Action, s: State) -> f64 {
        self.value(a, s)
    }
}

/// Dense `n_states x n_actions` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularQ {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl TabularQ {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::invalid("tabular Q has the wrong number of entries"));
        }
        Ok(TabularQ {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        TabularQ {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_fn(n_states: usize, n_actions: usize, f: impl Fn(Action, State) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                values.push(f(a as Action, s as State));
            }
        }
        TabularQ {
            n_states,
            n_actions,
            values,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs_diff(&self, other: &TabularQ) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl QFunction for TabularQ {
    fn value(&self, a: Action, s: State) -> f64 {
        self.values[s as usize * self.n_actions + a as usize]
    }
    fn kind(&self) -> QKind {
        QKind::Tabular
    }
}

/// Wraps a closure as a Q-function.
pub struct FnQ<F>(pub F);

impl<F> QFunction for FnQ<F>
where
    F: Fn(Action, State) -> f64 + Send + Sync,
{
    fn value(&self, a: Action, s: State) -> f64 {
        (self.0)(a, s)
    }
    fn kind(&self) -> QKind {
        QKind::Regressor
    }
}

/// `V^pi(q)(s) = sum_a pi(a|s) q(a, s)`.
pub fn value_under_policy<Q: QFunction + ?Sized>(q: &Q, pi: &Policy, s: State) -> Result<f64> {
    pi.check_state(s)?;
    Ok(pi.support(s).iter().map(|&(a, p)| p * q.value(a, s)).sum())
}

/// `y0 + gamma * V^pi(q)(s1)`.
pub fn bellman_target<Q: QFunction + ?Sized>(
    q: &Q,
    pi: &Policy,
    t: &Transition,
    gamma: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
    }
    Ok(t.y0 + gamma * value_under_policy(q, pi, t.s1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_action_q(q0: f64, q1: f64) -> TabularQ {
        TabularQ::new(1, 2, vec![q0, q1]).unwrap()
    }

    #[test]
    fn point_mass_policy_picks_the_action() {
        let pi = Policy::deterministic(1, 2, 1).unwrap();
        assert_eq!(value_under_policy(&two_action_q(-3.0, 7.5), &pi, 0).unwrap(), 7.5);
    }

    #[test]
    fn uniform_policy_averages() {
        let pi = Policy::uniform(1, 2).unwrap();
        assert_eq!(value_under_policy(&two_action_q(0.0, 2.0), &pi, 0).unwrap(), 1.0);
    }

    #[test]
    fn weighted_policy_sum() {
        let pi = Policy::from_table(1, 2, vec![0.75, 0.25]).unwrap();
        assert_eq!(value_under_policy(&two_action_q(0.0, 4.0), &pi, 0).unwrap(), 1.0);
    }

    #[test]
    fn state_outside_alphabet_is_a_domain_error() {
        let pi = Policy::uniform(1, 2).unwrap();
        assert!(matches!(
            value_under_policy(&two_action_q(0.0, 1.0), &pi, 3),
            Err(Error::Domain { state: 3, .. })
        ));
    }

    #[test]
    fn bellman_target_cases() {
        let pi = Policy::uniform(1, 2).unwrap();
        let t = Transition { s0: 0, a0: 0, y0: 1.0, s1: 0 };
        let q = two_action_q(1.0, 3.0);
        assert_eq!(bellman_target(&q, &pi, &t, 0.0).unwrap(), 1.0);
        assert_eq!(bellman_target(&TabularQ::zeros(1, 2), &pi, &t, 0.7).unwrap(), 1.0);
        assert_eq!(bellman_target(&q, &pi, &t, 0.5).unwrap(), 2.0);
        assert!(bellman_target(&q, &pi, &t, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn value_is_linear_in_q(
            q1 in prop::collection::vec(-10.0f64..10.0, 6),
            q2 in prop::collection::vec(-10.0f64..10.0, 6),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            p in 0.0f64..1.0,
        ) {
            let pi = Policy::from_fn(2, 3, |s| if s == 0 {
                vec![p, (1.0 - p) / 2.0, (1.0 - p) / 2.0]
            } else {
                vec![0.0, 1.0 - p, p]
            }).unwrap();
            let a = TabularQ::new(2, 3, q1.clone()).unwrap();
            let b = TabularQ::new(2, 3, q2.clone()).unwrap();
            let comb = TabularQ::new(2, 3, q1.iter().zip(&q2).map(|(x, y)| alpha * x + beta * y).collect()).unwrap();
            for s in 0..2 {
                let lhs = value_under_policy(&comb, &pi, s).unwrap();
                let rhs = alpha * value_under_policy(&a, &pi, s).unwrap()
                    + beta * value_under_policy(&b, &pi, s).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }
        }
    }
}
