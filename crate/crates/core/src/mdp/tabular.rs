use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Action, Policy, State, StateAlphabet, TabularQ, Transition, TransitionDataset};
use crate::error::{Error, Result};
use crate::linalg;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Default clip applied to occupancy ratios.
pub const DEFAULT_TRUNCATION: f64 = 1e4;

/// A finite discounted MDP with known law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    n_states: usize,
    n_actions: usize,
    /// `P(s' | s, a)` stored at `[(s * n_actions + a) * n_states + s']`.
    transition: Vec<f64>,
    /// `r(s, a)` stored at `[s * n_actions + a]`.
    reward_mean: Vec<f64>,
    init_dist: Vec<f64>,
    gamma: f64,
}

impl TabularMDP {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        init_dist: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("MDP needs at least one state and action"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::invalid("transition tensor has the wrong size"));
        }
        if reward_mean.len() != n_states * n_actions || init_dist.len() != n_states {
            return Err(Error::invalid("reward or initial distribution has the wrong size"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
        }
        for (row, chunk) in transition.chunks(n_states).enumerate() {
            let total: f64 = chunk.iter().sum();
            if chunk.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(format!(
                    "transition row (s={}, a={}) is not a probability vector (sum {total})",
                    row / n_actions,
                    row % n_actions
                )));
            }
        }
        let init_total: f64 = init_dist.iter().sum();
        if init_dist.iter().any(|&p| p < 0.0) || (init_total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid("initial distribution must sum to 1"));
        }
        if reward_mean.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("reward means must be finite"));
        }
        Ok(TabularMDP {
            n_states,
            n_actions,
            transition,
            reward_mean,
            init_dist,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward_mean.clone(),
            self.init_dist.clone(),
            gamma,
        )
    }

    pub fn transition_prob(&self, s: State, a: Action, next: State) -> f64 {
        self.transition[(s as usize * self.n_actions + a as usize) * self.n_states + next as usize]
    }

    pub fn transition_row(&self, s: State, a: Action) -> &[f64] {
        let start = (s as usize * self.n_actions + a as usize) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: State, a: Action) -> f64 {
        self.reward_mean[s as usize * self.n_actions + a as usize]
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.n_states() != self.n_states || pi.n_actions() != self.n_actions {
            return Err(Error::invalid("policy dimensions do not match the MDP"));
        }
        Ok(())
    }

    /// `(I - gamma P^pi)` over the state-action grid, where
    /// `P^pi[(s,a),(s',a')] = P(s'|s,a) pi(a'|s')`.
    fn bellman_matrix(&self, pi: &Policy) -> DMatrix<f64> {
        let dim = self.n_states * self.n_actions;
        let mut m = DMatrix::<f64>::identity(dim, dim);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = s * self.n_actions + a;
                for (next, &p) in self.transition_row(s as State, a as Action).iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for &(a2, pa) in pi.support(next as State) {
                        m[(row, next * self.n_actions + a2 as usize)] -= self.gamma * p * pa;
                    }
                }
            }
        }
        m
    }

    /// State chain under `pi`: `P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)`.
    pub fn state_chain(&self, pi: &Policy) -> DMatrix<f64> {
        let m = self.n_states;
        let mut p = DMatrix::<f64>::zeros(m, m);
        for s in 0..m {
            for &(a, pa) in pi.support(s as State) {
                for (next, &pn) in self.transition_row(s as State, a).iter().enumerate() {
                    p[(s, next)] += pa * pn;
                }
            }
        }
        p
    }
}

/// Exact Q-function of `pi` by solving `(I - gamma P^pi) q = r`.
pub fn tabular_q_solve(mdp: &TabularMDP, pi: &Policy) -> Result<TabularQ> {
    mdp.check_policy(pi)?;
    let r = DVector::from_column_slice(&mdp.reward_mean);
    let q = linalg::solve(mdp.bellman_matrix(pi), &r)
        .map_err(|e| Error::Numerical(format!("Bellman system: {e}")))?;
    TabularQ::new(mdp.n_states, mdp.n_actions, q.as_slice().to_vec())
}

/// Discounted state-action occupancy `nu^T (I - gamma P^pi)^{-1}` of a
/// (possibly signed) initial measure `nu` over the state-action grid.
pub fn discounted_occupancy(mdp: &TabularMDP, pi: &Policy, initial: &[f64]) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    if initial.len() != mdp.n_states * mdp.n_actions {
        return Err(Error::invalid("initial measure must cover the state-action grid"));
    }
    let a = mdp.bellman_matrix(pi).transpose();
    let x = linalg::solve(a, &DVector::from_column_slice(initial))?;
    Ok(x.as_slice().to_vec())
}

/// Occupancy or weighting-function table over the state-action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRatio {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    clipped: Vec<bool>,
    truncation: f64,
}

impl OccupancyRatio {
    pub fn value(&self, a: Action, s: State) -> f64 {
        self.values[s as usize * self.n_actions + a as usize]
    }

    pub fn is_clipped(&self, a: Action, s: State) -> bool {
        self.clipped[s as usize * self.n_actions + a as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn n_clipped(&self) -> usize {
        self.clipped.iter().filter(|&&c| c).count()
    }

    fn from_ratio(
        n_states: usize,
        n_actions: usize,
        numer: &[f64],
        denom: &[f64],
        truncation: f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(numer.len());
        let mut clipped = Vec::with_capacity(numer.len());
        for (idx, (&num, &den)) in numer.iter().zip(denom).enumerate() {
            let raw = if den > 0.0 {
                num / den
            } else if num.abs() <= 1e-14 {
                0.0
            } else if truncation.is_finite() {
                num.signum() * f64::INFINITY
            } else {
                return Err(Error::OverlapViolation {
                    action: (idx % n_actions) as Action,
                    state: (idx / n_actions) as State,
                });
            };
            if raw.abs() > truncation {
                values.push(raw.signum() * truncation);
                clipped.push(true);
            } else {
                values.push(raw);
                clipped.push(false);
            }
        }
        Ok(OccupancyRatio {
            n_states,
            n_actions,
            values,
            clipped,
            truncation,
        })
    }
}

/// Discounted state-action occupancy ratio of `pi` relative to the
/// behavior law `init(s) b(a|s)`, computed through the state-marginal chain.
///
/// `truncation = f64::INFINITY` disables clipping; then any positive target
/// mass on a cell without behavior mass is an overlap violation.
pub fn tabular_occupancy_ratio(
    mdp: &TabularMDP,
    pi: &Policy,
    behavior: &Policy,
    truncation: f64,
) -> Result<OccupancyRatio> {
    mdp.check_policy(pi)?;
    mdp.check_policy(behavior)?;
    if !(truncation > 0.0) {
        return Err(Error::invalid("truncation must be positive"));
    }
    let m = mdp.n_states;
    let na = mdp.n_actions;
    // w^T = init^T (I - gamma P_pi)^{-1}
    let chain = mdp.state_chain(pi);
    let a = (DMatrix::<f64>::identity(m, m) - chain * mdp.gamma).transpose();
    let w = linalg::solve(a, &DVector::from_column_slice(&mdp.init_dist))?;
    let mut values = Vec::with_capacity(m * na);
    let mut clipped = Vec::with_capacity(m * na);
    for s in 0..m {
        let init = mdp.init_dist[s];
        for a in 0..na {
            let p = pi.prob(a as Action, s as State);
            let b = behavior.prob(a as Action, s as State);
            let mass = p * w[s];
            // policy ratio times state ratio; exact when gamma = 0
            let raw = if b > 0.0 && init > 0.0 {
                (p / b) * (w[s] / init)
            } else if mass.abs() <= 1e-14 {
                0.0
            } else if truncation.is_finite() {
                f64::INFINITY
            } else {
                return Err(Error::OverlapViolation {
                    action: a as Action,
                    state: s as State,
                });
            };
            if raw.abs() > truncation {
                values.push(raw.signum() * truncation);
                clipped.push(true);
            } else {
                values.push(raw);
                clipped.push(false);
            }
        }
    }
    Ok(OccupancyRatio {
        n_states: m,
        n_actions: na,
        values,
        clipped,
        truncation,
    })
}

/// Riesz weighting function of a linear functional on a tabular MDP.
///
/// `initial` is the signed measure over the state-action grid with
/// `E[m(S0, A0, q)] = sum initial(s,a) q(a,s)`; `data_marginal` is the law of
/// `(S0, A0)` in the data. The result is the discounted occupancy of
/// `initial` divided by `data_marginal`, which for the policy value reduces
/// to the occupancy ratio.
pub fn tabular_weighting_function(
    mdp: &TabularMDP,
    pi: &Policy,
    initial: &[f64],
    data_marginal: &[f64],
    truncation: f64,
) -> Result<OccupancyRatio> {
    if data_marginal.len() != mdp.n_states * mdp.n_actions {
        return Err(Error::invalid("data marginal must cover the state-action grid"));
    }
    let occ = discounted_occupancy(mdp, pi, initial)?;
    OccupancyRatio::from_ratio(mdp.n_states, mdp.n_actions, &occ, data_marginal, truncation)
}

/// Population pseudo-data: every reachable transition from the behavior law,
/// weighted by its probability, with the reward replaced by its mean.
pub fn population_dataset(
    mdp: &TabularMDP,
    behavior: &Policy,
    alphabet: Arc<StateAlphabet>,
) -> Result<TransitionDataset> {
    mdp.check_policy(behavior)?;
    if alphabet.len() != mdp.n_states {
        return Err(Error::invalid("alphabet size does not match the MDP"));
    }
    let mut records = Vec::new();
    let mut weights = Vec::new();
    for s in 0..mdp.n_states {
        let ps = mdp.init_dist[s];
        if ps == 0.0 {
            continue;
        }
        for &(a, pa) in behavior.support(s as State) {
            for (next, &pn) in mdp.transition_row(s as State, a).iter().enumerate() {
                if pn > 0.0 {
                    records.push(Transition {
                        s0: s as State,
                        a0: a,
                        y0: mdp.reward(s as State, a),
                        s1: next as State,
                    });
                    weights.push(ps * pa * pn);
                }
            }
        }
    }
    TransitionDataset::weighted(records, weights, alphabet, mdp.n_actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{value_under_policy, QFunction};

    fn absorbing(gamma: f64) -> TabularMDP {
        TabularMDP::new(1, 2, vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0], gamma).unwrap()
    }

    /// Two states, two actions, all transitions positive.
    pub(crate) fn two_state(gamma: f64) -> TabularMDP {
        TabularMDP::new(
            2,
            2,
            vec![0.9, 0.1, 0.3, 0.7, 0.4, 0.6, 0.2, 0.8],
            vec![1.0, 0.0, -0.5, 2.0],
            vec![0.6, 0.4],
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(TabularMDP::new(1, 1, vec![0.9], vec![0.0], vec![1.0], 0.5).is_err());
        assert!(TabularMDP::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 1.0).is_err());
        assert!(TabularMDP::new(1, 1, vec![1.0], vec![0.0], vec![0.5], 0.5).is_err());
    }

    #[test]
    fn gamma_zero_returns_rewards() {
        let mdp = two_state(0.0);
        let pi = Policy::uniform(2, 2).unwrap();
        let q = tabular_q_solve(&mdp, &pi).unwrap();
        assert_eq!(q.values(), &[1.0, 0.0, -0.5, 2.0]);
    }

    #[test]
    fn absorbing_state_is_geometric_series() {
        let pi = Policy::from_table(1, 2, vec![0.3, 0.7]).unwrap();
        let q = tabular_q_solve(&absorbing(0.9), &pi).unwrap();
        let partial: f64 = (0..2000).map(|t| 0.9f64.powi(t)).sum();
        for a in 0..2 {
            assert!((q.value(a, 0) - 10.0).abs() < 1e-12);
            assert!((q.value(a, 0) - partial).abs() < 1e-10);
        }
    }

    #[test]
    fn two_state_matches_truncated_sum() {
        let gamma = 0.8;
        let mdp = two_state(gamma);
        let pi = Policy::from_table(2, 2, vec![0.5, 0.5, 0.1, 0.9]).unwrap();
        let q = tabular_q_solve(&mdp, &pi).unwrap();
        // sum_t gamma^t E[Y_t | A0=a, S0=s] by propagating the state-action law
        for s0 in 0..2usize {
            for a0 in 0..2usize {
                let mut law = vec![0.0; 4];
                law[s0 * 2 + a0] = 1.0;
                let mut total = 0.0;
                for t in 0..200 {
                    let er: f64 = law.iter().zip(&mdp.reward_mean).map(|(p, r)| p * r).sum();
                    total += gamma.powi(t) * er;
                    let mut next = vec![0.0; 4];
                    for s in 0..2 {
                        for a in 0..2 {
                            for s2 in 0..2 {
                                let p = law[s * 2 + a] * mdp.transition_prob(s as State, a as Action, s2 as State);
                                for a2 in 0..2 {
                                    next[s2 * 2 + a2] += p * pi.prob(a2 as Action, s2 as State);
                                }
                            }
                        }
                    }
                    law = next;
                }
                assert!((q.value(a0 as Action, s0 as State) - total).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn solved_q_satisfies_bellman_equation() {
        let mdp = two_state(0.95);
        let pi = Policy::from_table(2, 2, vec![0.2, 0.8, 0.6, 0.4]).unwrap();
        let q = tabular_q_solve(&mdp, &pi).unwrap();
        for s in 0..2u32 {
            for a in 0..2u32 {
                let cont: f64 = (0..2u32)
                    .map(|s2| mdp.transition_prob(s, a, s2) * value_under_policy(&q, &pi, s2).unwrap())
                    .sum();
                let resid = q.value(a, s) - (mdp.reward(s, a) + 0.95 * cont);
                assert!(resid.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn occupancy_gamma_zero_is_policy_ratio() {
        let mdp = two_state(0.0);
        let pi = Policy::from_table(2, 2, vec![0.5, 0.5, 0.1, 0.9]).unwrap();
        let b = Policy::from_table(2, 2, vec![0.25, 0.75, 0.5, 0.5]).unwrap();
        let d = tabular_occupancy_ratio(&mdp, &pi, &b, f64::INFINITY).unwrap();
        for s in 0..2u32 {
            for a in 0..2u32 {
                assert_eq!(d.value(a, s), pi.prob(a, s) / b.prob(a, s));
            }
        }
    }

    #[test]
    fn occupancy_total_mass() {
        let gamma = 0.7;
        let mdp = two_state(gamma);
        let pi = Policy::from_table(2, 2, vec![0.5, 0.5, 0.1, 0.9]).unwrap();
        let b = Policy::from_table(2, 2, vec![0.25, 0.75, 0.5, 0.5]).unwrap();
        let d = tabular_occupancy_ratio(&mdp, &pi, &b, f64::INFINITY).unwrap();
        let mut mass = 0.0;
        for s in 0..2u32 {
            for a in 0..2u32 {
                mass += d.value(a, s) * mdp.init_dist()[s as usize] * b.prob(a, s);
            }
        }
        assert!((mass - 1.0 / (1.0 - gamma)).abs() < 1e-8);
    }

    #[test]
    fn overlap_violation_without_truncation() {
        let mdp = two_state(0.5);
        let pi = Policy::uniform(2, 2).unwrap();
        let b = Policy::deterministic(2, 2, 0).unwrap();
        assert!(matches!(
            tabular_occupancy_ratio(&mdp, &pi, &b, f64::INFINITY),
            Err(Error::OverlapViolation { action: 1, .. })
        ));
        let d = tabular_occupancy_ratio(&mdp, &pi, &b, 50.0).unwrap();
        assert_eq!(d.value(1, 0), 50.0);
        assert!(d.is_clipped(1, 0));
    }

    #[test]
    fn weighting_function_matches_state_chain_route() {
        let gamma = 0.6;
        let mdp = two_state(gamma);
        let pi = Policy::from_table(2, 2, vec![0.5, 0.5, 0.1, 0.9]).unwrap();
        let b = Policy::from_table(2, 2, vec![0.25, 0.75, 0.5, 0.5]).unwrap();
        let mut initial = vec![0.0; 4];
        let mut marginal = vec![0.0; 4];
        for s in 0..2u32 {
            for a in 0..2u32 {
                initial[(s * 2 + a) as usize] = mdp.init_dist()[s as usize] * pi.prob(a, s);
                marginal[(s * 2 + a) as usize] = mdp.init_dist()[s as usize] * b.prob(a, s);
            }
        }
        let w = tabular_weighting_function(&mdp, &pi, &initial, &marginal, f64::INFINITY).unwrap();
        let d = tabular_occupancy_ratio(&mdp, &pi, &b, f64::INFINITY).unwrap();
        for (x, y) in w.values().iter().zip(d.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn population_dataset_weights_sum_to_one() {
        let mdp = two_state(0.5);
        let b = Policy::uniform(2, 2).unwrap();
        let d = population_dataset(&mdp, &b, Arc::new(StateAlphabet::indexed(2))).unwrap();
        assert_eq!(d.len(), 8);
        assert!((d.total_weight() - 1.0).abs() < 1e-12);
    }
}
