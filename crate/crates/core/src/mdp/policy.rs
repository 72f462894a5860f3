use serde::{Deserialize, Serialize};

use super::{Action, State};
use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// A stationary policy `pi(a|s)` over a finite action set.
///
/// Stored densely as an `n_states x n_actions` table together with the
/// per-state support, which is what value computations iterate over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    support: Vec<Vec<(Action, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TryFrom<PolicyRepr> for Policy {
    type Error = Error;
    fn try_from(r: PolicyRepr) -> Result<Self> {
        Policy::from_table(r.n_states, r.n_actions, r.probs)
    }
}

impl From<Policy> for PolicyRepr {
    fn from(p: Policy) -> Self {
        PolicyRepr {
            n_states: p.n_states,
            n_actions: p.n_actions,
            probs: p.probs,
        }
    }
}

impl Policy {
    /// Builds a policy from a row-major `n_states x n_actions` table.
    pub fn from_table(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("policy needs at least one state and action"));
        }
        if probs.len() != n_states * n_actions {
            return Err(Error::invalid(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        let mut support = Vec::with_capacity(n_states);
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("state {s}: probabilities outside [0,1]")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SUM_TOL {
                return Err(Error::invalid(format!(
                    "state {s}: probabilities sum to {total}, not 1"
                )));
            }
            support.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(a, &p)| (a as Action, p))
                    .collect(),
            );
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
            support,
        })
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        mut dist: impl FnMut(State) -> Vec<f64>,
    ) -> Result<Self> {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            let row = dist(s as State);
            if row.len() != n_actions {
                return Err(Error::invalid(format!("state {s}: distribution has wrong length")));
            }
            probs.extend(row);
        }
        Self::from_table(n_states, n_actions, probs)
    }

    /// Point mass on `action` in every state.
    pub fn deterministic(n_states: usize, n_actions: usize, action: Action) -> Result<Self> {
        if action as usize >= n_actions {
            return Err(Error::ActionDomain {
                action,
                size: n_actions,
            });
        }
        Self::from_fn(n_states, n_actions, |_| {
            let mut row = vec![0.0; n_actions];
            row[action as usize] = 1.0;
            row
        })
    }

    /// Deterministic state-dependent policy `s -> choose(s)`.
    pub fn deterministic_by(
        n_states: usize,
        n_actions: usize,
        choose: impl Fn(State) -> Action,
    ) -> Result<Self> {
        let mut probs = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            let a = choose(s as State) as usize;
            if a >= n_actions {
                return Err(Error::ActionDomain {
                    action: a as Action,
                    size: n_actions,
                });
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::from_table(n_states, n_actions, probs)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Result<Self> {
        Self::from_fn(n_states, n_actions, |_| vec![1.0 / n_actions as f64; n_actions])
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, a: Action, s: State) -> f64 {
        self.probs[s as usize * self.n_actions + a as usize]
    }

    /// Actions with positive mass at `s`, with their probabilities.
    pub fn support(&self, s: State) -> &[(Action, f64)] {
        &self.support[s as usize]
    }

    pub(crate) fn check_state(&self, s: State) -> Result<()> {
        if (s as usize) < self.n_states {
            Ok(())
        } else {
            Err(Error::Domain {
                state: s,
                size: self.n_states,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_rows_not_summing_to_one() {
        assert!(Policy::from_table(1, 2, vec![0.5, 0.6]).is_err());
        assert!(Policy::from_table(1, 2, vec![1.2, -0.2]).is_err());
        assert!(Policy::from_table(1, 2, vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn support_skips_zero_mass() {
        let p = Policy::deterministic(3, 2, 1).unwrap();
        assert_eq!(p.support(2), &[(1, 1.0)]);
        assert_eq!(p.prob(0, 0), 0.0);
    }

    #[test]
    fn serde_revalidates() {
        let p = Policy::uniform(2, 2).unwrap();
        let js = serde_json::to_string(&p).unwrap();
        let back: Policy = serde_json::from_str(&js).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"n_states":1,"n_actions":2,"probs":[0.9,0.9]}"#;
        assert!(serde_json::from_str::<Policy>(bad).is_err());
    }
}
