use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FunctionalSpec;
use crate::mdp::{
    tabular_q_solve, Action, Policy, QFunction, State, StateAlphabet, TabularMDP, TabularQ, Transition, TransitionDataset,
};

pub const N_ARMS: usize = 2;
/// Engagement, churn risk, tenure, overlap: each in {0, 1, 2}.
pub const N_COVARIATE_STATES: usize = 81;
pub const N_STATES: usize = N_ARMS * N_COVARIATE_STATES;

pub const ENGAGEMENT_INIT: [f64; 3] = [0.5, 0.3, 0.2];
/// Listed as (0.25, 0.25, 0.25); normalized.
pub const CHURN_INIT: [f64; 3] = [1.0 / 3.0; 3];
/// Listed as (0.25, 0.25, 0.25); normalized.
pub const TENURE_INIT: [f64; 3] = [1.0 / 3.0; 3];
/// Listed as (0.7, 0.3, 0.2); normalized.
pub const OVERLAP_INIT: [f64; 3] = [7.0 / 12.0, 3.0 / 12.0, 2.0 / 12.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub gamma: f64,
    pub beta: f64,
    #[serde(default = "default_treat_prob")]
    pub treat_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_treat_prob() -> f64 {
    0.25
}

impl SimConfig {
    pub fn new(n: usize, gamma: f64, beta: f64, seed: u64) -> Result<Self> {
        let cfg = SimConfig {
            n,
            gamma,
            beta,
            treat_prob: default_treat_prob(),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::invalid("simulation needs n >= 1"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0,1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0,1], got {}", self.beta)));
        }
        if !(self.treat_prob > 0.0 && self.treat_prob < 1.0) {
            return Err(Error::invalid("treat_prob must lie in (0,1)"));
        }
        Ok(())
    }
}

/// Decoded simulation state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimState {
    pub z: usize,
    pub engagement: usize,
    pub churn: usize,
    pub tenure: usize,
    pub overlap: usize,
}

impl SimState {
    pub fn code(&self) -> State {
        (self.z * 81 + self.engagement * 27 + self.churn * 9 + self.tenure * 3 + self.overlap) as State
    }

    pub fn decode(s: State) -> Self {
        let s = s as usize;
        SimState {
            z: s / 81,
            engagement: (s / 27) % 3,
            churn: (s / 9) % 3,
            tenure: (s / 3) % 3,
            overlap: s % 3,
        }
    }
}

/// State alphabet with components `z, e, c, t, o`.
pub fn sim_alphabet() -> Arc<StateAlphabet> {
    Arc::new(StateAlphabet::product(&["z", "e", "c", "t", "o"], &[2, 3, 3, 3, 3]).expect("valid radices"))
}

/// Replaces the arm of `s` by `z`.
pub fn with_arm(s: State, z: Action) -> State {
    (s as usize % N_COVARIATE_STATES + N_COVARIATE_STATES * z as usize) as State
}

/// Behavior and evaluation policy: the action equals the assigned arm.
pub fn arm_policy() -> Policy {
    Policy::deterministic_by(N_STATES, N_ARMS, |s| SimState::decode(s).z as Action).expect("valid policy")
}

/// Long-term ATE functional `q(1, (1, s)) - q(0, (0, s))`.
pub fn ate_functional() -> FunctionalSpec {
    FunctionalSpec::ate_contrast_with(1, 0, with_arm)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn reward_mean(s: &SimState, a: Action) -> f64 {
    let x = -0.5
        + if s.overlap > 0 { 1.0 } else { 0.0 }
        + s.tenure as f64 / 2.0
        + 0.3 * a as f64
        + if s.engagement > 0 { 0.5 } else { 0.0 }
        - s.churn as f64 / 2.0;
    sigmoid(x)
}

/// Probability that engagement moves up.
pub fn engagement_up(churn: usize, a: Action) -> f64 {
    let p = 0.8 - churn as f64 / 5.0;
    if a == 1 {
        (p + 0.1).min(1.0)
    } else {
        p
    }
}

/// Probability that churn risk moves up.
pub fn churn_up(a: Action) -> f64 {
    if a == 1 {
        0.4
    } else {
        0.6
    }
}

fn step(v: usize, up: bool) -> usize {
    if up {
        (v + 1).min(2)
    } else {
        v.saturating_sub(1)
    }
}

fn initial_covariates() -> Vec<f64> {
    let mut p = vec![0.0; N_COVARIATE_STATES];
    for e in 0..3 {
        for c in 0..3 {
            for t in 0..3 {
                for o in 0..3 {
                    p[e * 27 + c * 9 + t * 3 + o] =
                        ENGAGEMENT_INIT[e] * CHURN_INIT[c] * TENURE_INIT[t] * OVERLAP_INIT[o];
                }
            }
        }
    }
    p
}

/// Closed-form law over the 162 `(z, e, c, t, o)` states.
///
/// Actions drive the dynamics and the arm `z` never changes.
pub fn analytic_mdp(cfg: &SimConfig) -> Result<TabularMDP> {
    cfg.validate()?;
    let mut transition = vec![0.0; N_STATES * N_ARMS * N_STATES];
    let mut reward = vec![0.0; N_STATES * N_ARMS];
    for code in 0..N_STATES {
        let s = SimState::decode(code as State);
        for a in 0..N_ARMS as Action {
            let row = code * N_ARMS + a as usize;
            reward[row] = reward_mean(&s, a);
            let pe = engagement_up(s.churn, a);
            let pc = churn_up(a);
            let po = if a == 1 { cfg.beta } else { 0.0 };
            for (be, pbe) in [(true, pe), (false, 1.0 - pe)] {
                for (bc, pbc) in [(true, pc), (false, 1.0 - pc)] {
                    for (bo, pbo) in [(true, po), (false, 1.0 - po)] {
                        let mass = pbe * pbc * pbo;
                        if mass == 0.0 {
                            continue;
                        }
                        let next = SimState {
                            z: s.z,
                            engagement: step(s.engagement, be),
                            churn: step(s.churn, bc),
                            tenure: (s.tenure + 1).min(2),
                            overlap: if bo { (s.overlap + 1).min(2) } else { 0 },
                        };
                        transition[row * N_STATES + next.code() as usize] += mass;
                    }
                }
            }
        }
    }
    let cov = initial_covariates();
    let mut init = vec![0.0; N_STATES];
    for (k, p) in cov.iter().enumerate() {
        init[k] = (1.0 - cfg.treat_prob) * p;
        init[N_COVARIATE_STATES + k] = cfg.treat_prob * p;
    }
    TabularMDP::new(N_STATES, N_ARMS, transition, reward, init, cfg.gamma)
}

/// `n` single transitions `(S0, A0 = Z, Y0, S1)` drawn with `cfg.seed`.
pub fn generate_dataset(cfg: &SimConfig) -> Result<TransitionDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let e0 = WeightedIndex::new(ENGAGEMENT_INIT).expect("valid weights");
    let c0 = WeightedIndex::new(CHURN_INIT).expect("valid weights");
    let t0 = WeightedIndex::new(TENURE_INIT).expect("valid weights");
    let o0 = WeightedIndex::new(OVERLAP_INIT).expect("valid weights");
    let mut records = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let z = usize::from(rng.random_bool(cfg.treat_prob));
        let s = SimState {
            z,
            engagement: e0.sample(&mut rng),
            churn: c0.sample(&mut rng),
            tenure: t0.sample(&mut rng),
            overlap: o0.sample(&mut rng),
        };
        let a = z as Action;
        let y = if rng.random_bool(reward_mean(&s, a)) { 1.0 } else { 0.0 };
        let b0 = rng.random_bool(engagement_up(s.churn, a));
        let b1 = rng.random_bool(churn_up(a));
        let b2 = rng.random_bool(cfg.beta);
        let next = SimState {
            z,
            engagement: step(s.engagement, b0),
            churn: step(s.churn, b1),
            tenure: (s.tenure + 1).min(2),
            overlap: if z == 1 && b2 { (s.overlap + 1).min(2) } else { 0 },
        };
        records.push(Transition {
            s0: s.code(),
            a0: a,
            y0: y,
            s1: next.code(),
        });
    }
    TransitionDataset::new(records, sim_alphabet(), N_ARMS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub gamma: f64,
    pub beta: f64,
    pub psi1: f64,
    pub psi0: f64,
    pub true_ate: f64,
    #[serde(skip)]
    pub q: Option<TabularQ>,
}

/// Exact per-arm values and ATE from the analytic law.
pub fn oracle_truth(cfg: &SimConfig) -> Result<SimTruth> {
    let mdp = analytic_mdp(cfg)?;
    let q = tabular_q_solve(&mdp, &arm_policy())?;
    let cov = initial_covariates();
    let psi = |z: Action| -> f64 {
        cov.iter()
            .enumerate()
            .map(|(k, p)| p * q.value(z, with_arm(k as State, z)))
            .sum()
    };
    let (psi1, psi0) = (psi(1), psi(0));
    Ok(SimTruth {
        gamma: cfg.gamma,
        beta: cfg.beta,
        psi1,
        psi0,
        true_ate: psi1 - psi0,
        q: Some(q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_codes_roundtrip() {
        let alpha = sim_alphabet();
        for code in 0..N_STATES as State {
            let s = SimState::decode(code);
            assert_eq!(s.code(), code);
            let t = alpha.tuple(code).unwrap();
            assert_eq!(
                t,
                &[s.z as i64, s.engagement as i64, s.churn as i64, s.tenure as i64, s.overlap as i64]
            );
        }
    }

    #[test]
    fn reward_reference_value() {
        let s = SimState { z: 1, engagement: 0, churn: 0, tenure: 0, overlap: 0 };
        assert!((reward_mean(&s, 1) - 1.0 / (1.0 + 0.2f64.exp())).abs() < 1e-15);
        assert!((reward_mean(&s, 1) - 0.450166).abs() < 1e-6);
    }

    #[test]
    fn analytic_rows_and_tenure() {
        let cfg = SimConfig::new(10, 0.8, 0.6, 0).unwrap();
        let mdp = analytic_mdp(&cfg).unwrap();
        for code in 0..N_STATES as State {
            let s = SimState::decode(code);
            for a in 0..2 {
                let row = mdp.transition_row(code, a);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
                for (next, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        let n = SimState::decode(next as State);
                        assert_eq!(n.tenure, (s.tenure + 1).min(2));
                        assert_eq!(n.z, s.z);
                    }
                }
            }
        }
    }

    #[test]
    fn beta_zero_kills_overlap() {
        let cfg = SimConfig::new(2000, 0.5, 0.0, 3).unwrap();
        let data = generate_dataset(&cfg).unwrap();
        assert!(data.records().iter().all(|r| SimState::decode(r.s1).overlap == 0));
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SimConfig::new(50, 0.5, 0.3, 11).unwrap();
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.records(), b.records());
    }

    #[test]
    fn gamma_zero_truth_is_reward_contrast() {
        let cfg = SimConfig::new(1, 0.0, 0.4, 0).unwrap();
        let truth = oracle_truth(&cfg).unwrap();
        let cov = initial_covariates();
        let direct: f64 = cov
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let s1 = SimState::decode(with_arm(k as State, 1));
                let s0 = SimState::decode(k as State);
                p * (reward_mean(&s1, 1) - reward_mean(&s0, 0))
            })
            .sum();
        assert!((truth.true_ate - direct).abs() < 1e-14);
    }
}
