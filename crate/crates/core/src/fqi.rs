//! Fitted Q-iteration and cross-fitting of Q-function estimators.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, Policy, QFunction, RecordQ, State, TransitionDataset};
use crate::regression::{FeatureMap, RegressionDesign, RegressorQ, RegressorSpec};

pub const DEFAULT_FQI_TOL: f64 = 1e-6;
pub const MAX_DEFAULT_ITERS: usize = 200;

/// `ceil(log(tol) / log(gamma))`, at least 1 and at most 200.
pub fn default_max_iters(gamma: f64, tol: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let k = (tol.ln() / gamma.ln()).ceil();
    if k.is_finite() {
        (k as usize).clamp(1, MAX_DEFAULT_ITERS)
    } else {
        MAX_DEFAULT_ITERS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqiConfig {
    pub gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub regressor: RegressorSpec,
}

impl FqiConfig {
    /// Default tolerance and iteration budget for `gamma`.
    pub fn new(gamma: f64, regressor: RegressorSpec) -> Result<Self> {
        let cfg = FqiConfig {
            gamma,
            max_iters: default_max_iters(gamma, DEFAULT_FQI_TOL),
            tol: DEFAULT_FQI_TOL,
            regressor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        self.tol = tol;
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_iters(mut self, k: usize) -> Result<Self> {
        self.max_iters = k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0,1), got {}", self.gamma)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("fqi tolerance must be positive"));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("fqi needs at least one iteration"));
        }
        self.regressor.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqiDiagnostics {
    pub iterations: usize,
    /// `||q^(k+1) - q^(k)||` in the empirical norm, one entry per iteration.
    pub increments: Vec<f64>,
    pub converged: bool,
}

impl FqiDiagnostics {
    pub fn final_increment(&self) -> f64 {
        self.increments.last().copied().unwrap_or(0.0)
    }
}

/// State-action cells touched by the data: `(A0, S0)` and every
/// `(a', S1)` in the support of `pi`.
pub(crate) struct CellIndex {
    pub cells: Vec<(Action, State)>,
    pub current: Vec<usize>,
    /// CSR offsets into `next`.
    pub next_start: Vec<usize>,
    pub next: Vec<(usize, f64)>,
}

impl CellIndex {
    pub fn new(data: &TransitionDataset, pi: &Policy) -> Result<Self> {
        if pi.n_states() != data.n_states() {
            return Err(Error::invalid("policy and dataset disagree on the state count"));
        }
        let mut ids: HashMap<(Action, State), usize> = HashMap::new();
        let mut cells = Vec::new();
        let mut id = |c: (Action, State)| {
            *ids.entry(c).or_insert_with(|| {
                cells.push(c);
                cells.len() - 1
            })
        };
        let mut current = Vec::with_capacity(data.len());
        let mut next_start = Vec::with_capacity(data.len() + 1);
        let mut next = Vec::new();
        for r in data.records() {
            current.push(id((r.a0, r.s0)));
            next_start.push(next.len());
            for &(a, p) in pi.support(r.s1) {
                next.push((id((a, r.s1)), p));
            }
        }
        next_start.push(next.len());
        Ok(CellIndex {
            cells,
            current,
            next_start,
            next,
        })
    }

    pub fn next_of(&self, i: usize) -> &[(usize, f64)] {
        &self.next[self.next_start[i]..self.next_start[i + 1]]
    }
}

/// Fits `q` by iterated regression of `Y0 + gamma V^pi(q)(S1)` on the
/// features of `(A0, S0)`, starting from `q = 0`.
pub fn fitted_q_iteration(
    data: &TransitionDataset,
    pi: &Policy,
    features: Arc<dyn FeatureMap>,
    cfg: &FqiConfig,
) -> Result<(RegressorQ, FqiDiagnostics)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("fitted Q-iteration needs data"));
    }
    let index = CellIndex::new(data, pi)?;
    let cell_x: Vec<Vec<f64>> = index.cells.iter().map(|&(a, s)| features.features(a, s)).collect();
    let rows: Vec<Vec<f64>> = index.current.iter().map(|&c| cell_x[c].clone()).collect();
    let w = data.weights();
    let design = RegressionDesign::new(&rows, Some(&w))?;
    let total_w = data.total_weight();

    let mut q = vec![0.0; index.cells.len()];
    let mut increments = Vec::new();
    let mut model = None;
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let targets: Vec<f64> = data
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let v: f64 = index.next_of(i).iter().map(|&(c, p)| p * q[c]).sum();
                r.y0 + cfg.gamma * v
            })
            .collect();
        let fit = design.fit(&cfg.regressor, &targets)?;
        let q_new: Vec<f64> = cell_x.iter().map(|x| fit.predict(x)).collect();
        let ss: f64 = index
            .current
            .iter()
            .zip(&w)
            .map(|(&c, wi)| wi * (q_new[c] - q[c]).powi(2))
            .sum();
        let inc = (ss / total_w).sqrt();
        increments.push(inc);
        q = q_new;
        model = Some(fit);
        if inc < cfg.tol {
            converged = true;
            break;
        }
    }
    let model = model.expect("at least one iteration");
    Ok((
        RegressorQ::new(Arc::new(model), features),
        FqiDiagnostics {
            iterations: increments.len(),
            increments,
            converged,
        },
    ))
}

/// Random balanced assignment of `n` records to `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 1 || k > n.max(1) {
        return Err(Error::invalid(format!("cannot split {n} records into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(fold)
}

/// One model per fold; record `i` is evaluated with the model of its fold.
#[derive(Debug, Clone)]
pub struct CrossFit<Q> {
    assignment: Vec<usize>,
    models: Vec<Q>,
    out_of_fold: bool,
}

impl<Q: QFunction> CrossFit<Q> {
    /// `out_of_fold` asserts that `models[j]` never saw a record of fold `j`.
    pub fn new(assignment: Vec<usize>, models: Vec<Q>, out_of_fold: bool) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid("cross-fit needs at least one model"));
        }
        if let Some(&bad) = assignment.iter().find(|&&f| f >= models.len()) {
            return Err(Error::invalid(format!("fold index {bad} has no model")));
        }
        Ok(CrossFit {
            assignment,
            models,
            out_of_fold,
        })
    }

    /// The same model for every record.
    pub fn single(n: usize, model: Q) -> Self {
        CrossFit {
            assignment: vec![0; n],
            models: vec![model],
            out_of_fold: false,
        }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn models(&self) -> &[Q] {
        &self.models
    }

    pub fn n_folds(&self) -> usize {
        self.models.len()
    }

    pub fn is_out_of_fold(&self) -> bool {
        self.out_of_fold
    }

    pub fn model_for(&self, record: usize) -> &Q {
        &self.models[self.assignment[record]]
    }
}

impl<Q: QFunction> RecordQ for CrossFit<Q> {
    fn value_for(&self, record: usize, a: Action, s: State) -> f64 {
        self.models[self.assignment[record]].value(a, s)
    }
}

/// Runs `fit` on the complement of each fold.
pub fn cross_fit<Q, F>(data: &TransitionDataset, assignment: Vec<usize>, fit: F) -> Result<CrossFit<Q>>
where
    Q: QFunction,
    F: Fn(&TransitionDataset) -> Result<Q> + Sync + Send,
    Q: Send,
{
    if assignment.len() != data.len() {
        return Err(Error::invalid("fold assignment must cover every record"));
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    if k <= 1 {
        let q = fit(data)?;
        return CrossFit::new(assignment, vec![q], false);
    }
    let models = (0..k)
        .into_par_iter()
        .map(|j| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != j).collect();
            fit(&data.subset(&train)?)
        })
        .collect::<Result<Vec<_>>>()?;
    CrossFit::new(assignment, models, true)
}

/// Cross-fitted FQI; `folds = 1` fits on all data.
pub fn cross_fitted_fqi(
    data: &TransitionDataset,
    pi: &Policy,
    features: Arc<dyn FeatureMap>,
    cfg: &FqiConfig,
    folds: usize,
    seed: u64,
) -> Result<CrossFit<RegressorQ>> {
    let assignment = fold_assignment(data.len(), folds, seed)?;
    cross_fit(data, assignment, |d| {
        fitted_q_iteration(d, pi, features.clone(), cfg).map(|(q, _)| q)
    })
}
