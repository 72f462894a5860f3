//! Fitted Q-calibration: iterated isotonic regression of Bellman targets on
//! the scores of a fixed base Q-function.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FunctionalSpec;
use crate::fqi::CrossFit;
use crate::linalg;
use crate::mdp::{Action, Policy, QFunction, QKind, RecordQ, State, TransitionDataset};
use crate::regression::{pava_blocks, Block, IsotonicDesign, StepFunction, DEFAULT_MIN_POOL_WEIGHT};

pub const DEFAULT_CALIBRATION_ITERS: usize = 50;
const MAX_REFINEMENTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub gamma: f64,
    pub max_iters: usize,
    /// Stopping tolerance on the empirical increment; `None` means `1/n`.
    pub tol: Option<f64>,
    pub min_pool_weight: f64,
}

impl CalibrationConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        let cfg = CalibrationConfig {
            gamma,
            max_iters: DEFAULT_CALIBRATION_ITERS,
            tol: None,
            min_pool_weight: DEFAULT_MIN_POOL_WEIGHT,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_iters(mut self, k: usize) -> Result<Self> {
        self.max_iters = k;
        self.validate()?;
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        self.tol = Some(tol);
        self.validate()?;
        Ok(self)
    }

    pub fn with_min_pool_weight(mut self, w: f64) -> Result<Self> {
        self.min_pool_weight = w;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0,1), got {}", self.gamma)));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("calibration needs at least one iteration"));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(Error::invalid("calibration tolerance must be positive"));
            }
        }
        if !(self.min_pool_weight >= 0.0) {
            return Err(Error::invalid("min_pool_weight must be nonnegative"));
        }
        Ok(())
    }

    pub(crate) fn tol_for(&self, n: usize) -> f64 {
        self.tol.unwrap_or(1.0 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub iterations: usize,
    pub final_increment: f64,
    pub increments: Vec<f64>,
    pub max_orthogonality_violation: f64,
    pub n_levels: usize,
    pub converged: bool,
    /// Whether the exact per-level fixed point was found and is monotone.
    pub refined: bool,
}

/// `f(base(a, s))` for an isotonic calibrator `f`.
#[derive(Clone)]
pub struct CalibratedQ {
    base: Arc<dyn QFunction>,
    calibrator: StepFunction,
}

impl std::fmt::Debug for CalibratedQ {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CalibratedQ").field("calibrator", &self.calibrator).finish()
    }
}

impl CalibratedQ {
    pub fn new(base: Arc<dyn QFunction>, calibrator: StepFunction) -> Self {
        CalibratedQ { base, calibrator }
    }

    pub fn base(&self) -> &Arc<dyn QFunction> {
        &self.base
    }

    pub fn calibrator(&self) -> &StepFunction {
        &self.calibrator
    }

    /// JSON with a caller-chosen reference to the base model.
    pub fn to_json(&self, base_ref: &str) -> serde_json::Value {
        serde_json::json!({ "base": base_ref, "calibrator": self.calibrator })
    }
}

impl QFunction for CalibratedQ {
    fn value(&self, a: Action, s: State) -> f64 {
        self.calibrator.evaluate(self.base.value(a, s))
    }
    fn kind(&self) -> QKind {
        QKind::Calibrated
    }
}

/// Per-fold calibrated Q-functions sharing one calibrator.
#[derive(Debug, Clone)]
pub struct CrossCalibratedQ {
    folds: Vec<CalibratedQ>,
    assignment: Vec<usize>,
}

impl CrossCalibratedQ {
    pub fn folds(&self) -> &[CalibratedQ] {
        &self.folds
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn calibrator(&self) -> &StepFunction {
        self.folds[0].calibrator()
    }
}

impl RecordQ for CrossCalibratedQ {
    fn value_for(&self, record: usize, a: Action, s: State) -> f64 {
        self.folds[self.assignment[record]].value(a, s)
    }
}

/// Base scores of a dataset: each record's score, the scores reachable at
/// `S1` under `pi`, and (optionally) the scores a functional evaluates.
///
/// Next-state and functional scores are stored as ranks into the sorted
/// distinct record scores, so any calibrator fitted on this table is applied
/// by table lookup.
pub(crate) struct ScoreTable {
    design: IsotonicDesign,
    y: Vec<f64>,
    next_start: Vec<usize>,
    next: Vec<(usize, f64)>,
    term_start: Vec<usize>,
    terms: Vec<(usize, f64)>,
}

/// Weighted sufficient statistics of a [`ScoreTable`].
pub(crate) struct Aggregate {
    w: Vec<f64>,
    swy: Vec<f64>,
    trans_start: Vec<usize>,
    trans: Vec<(usize, f64)>,
    term_mass: Vec<f64>,
    total_w: f64,
}

/// Result of calibrating on an [`Aggregate`].
pub(crate) struct Fitted {
    pub blocks: Vec<Block>,
    pub group_block: Vec<usize>,
    pub levels: Vec<f64>,
    pub increments: Vec<f64>,
    pub converged: bool,
    pub refined: bool,
}

impl Fitted {
    pub fn group_value(&self, g: usize) -> f64 {
        self.levels[self.group_block[g]]
    }
}

impl ScoreTable {
    pub fn new(
        data: &TransitionDataset,
        pi: &Policy,
        base: &dyn RecordQ,
        functional: Option<&FunctionalSpec>,
    ) -> Result<Self> {
        if pi.n_states() != data.n_states() {
            return Err(Error::invalid("policy and dataset disagree on the state count"));
        }
        let x: Vec<f64> = data
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| base.value_for(i, r.a0, r.s0))
            .collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("base Q-function is not finite on the data".into()));
        }
        let design = IsotonicDesign::new(&x)?;
        let mut next_start = Vec::with_capacity(data.len() + 1);
        let mut next = Vec::new();
        let mut term_start = Vec::with_capacity(data.len() + 1);
        let mut terms = Vec::new();
        let mut buf = Vec::new();
        for (i, r) in data.records().iter().enumerate() {
            next_start.push(next.len());
            for &(a, p) in pi.support(r.s1) {
                let z = base.value_for(i, a, r.s1);
                if !z.is_finite() {
                    return Err(Error::Numerical("base Q-function is not finite at a next state".into()));
                }
                next.push((design.rank(z), p));
            }
            term_start.push(terms.len());
            if let Some(f) = functional {
                buf.clear();
                f.push_terms(r, &mut buf);
                for t in &buf {
                    let z = base.value_for(i, t.action, t.state);
                    if !z.is_finite() {
                        return Err(Error::Numerical("base Q-function is not finite on a functional term".into()));
                    }
                    terms.push((design.rank(z), t.coef));
                }
            }
        }
        next_start.push(next.len());
        term_start.push(terms.len());
        Ok(ScoreTable {
            design,
            y: data.records().iter().map(|r| r.y0).collect(),
            next_start,
            next,
            term_start,
            terms,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.design.n_groups()
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.design.group_of()[i]
    }

    pub fn next_of(&self, i: usize) -> &[(usize, f64)] {
        &self.next[self.next_start[i]..self.next_start[i + 1]]
    }

    pub fn terms_of(&self, i: usize) -> &[(usize, f64)] {
        &self.terms[self.term_start[i]..self.term_start[i + 1]]
    }

    pub fn aggregate(&self, weights: &[f64]) -> Aggregate {
        let g = self.n_groups();
        let mut w = vec![0.0; g];
        let mut swy = vec![0.0; g];
        let mut term_mass = vec![0.0; g];
        let mut triples = Vec::with_capacity(self.next.len());
        for (i, &wi) in weights.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let gi = self.group_of(i);
            w[gi] += wi;
            swy[gi] += wi * self.y[i];
            for &(r, p) in self.next_of(i) {
                triples.push((gi, r, wi * p));
            }
            for &(r, c) in self.terms_of(i) {
                term_mass[r] += wi * c;
            }
        }
        triples.sort_unstable_by_key(|&(a, b, _)| (a, b));
        let mut trans_start = vec![0; g + 1];
        let mut trans: Vec<(usize, f64)> = Vec::with_capacity(triples.len());
        let mut last = None;
        for (gi, r, m) in triples {
            if last == Some((gi, r)) {
                trans.last_mut().unwrap().1 += m;
            } else {
                trans.push((r, m));
                trans_start[gi + 1] = trans.len();
                last = Some((gi, r));
            }
            trans_start[gi + 1] = trans.len();
        }
        for k in 1..=g {
            trans_start[k] = trans_start[k].max(trans_start[k - 1]);
        }
        let total_w = w.iter().sum();
        Aggregate {
            w,
            swy,
            trans_start,
            trans,
            term_mass,
            total_w,
        }
    }

    /// Runs the calibration fixed-point loop and the exact refinement.
    pub fn calibrate(&self, agg: &Aggregate, cfg: &CalibrationConfig, tol: f64) -> Result<Fitted> {
        if !(agg.total_w > 0.0) {
            return Err(Error::invalid("calibration weights have zero total"));
        }
        let g = self.n_groups();
        let mut val: Vec<f64> = self.design.scores().to_vec();
        let mut increments = Vec::new();
        let mut converged = false;
        let mut state = None;
        for _ in 0..cfg.max_iters {
            let (blocks, gb, new) = self.pava_step(agg, &val, cfg);
            let ss: f64 = (0..g).map(|k| agg.w[k] * (new[k] - val[k]).powi(2)).sum();
            let inc = (ss / agg.total_w).sqrt();
            increments.push(inc);
            val = new;
            state = Some((blocks, gb));
            if inc < tol {
                converged = true;
                break;
            }
        }
        let (mut blocks, mut gb) = state.expect("at least one iteration");
        let mut levels: Vec<f64> = blocks.iter().map(Block::mean).collect();

        let mut refined = false;
        let mut trial = val.clone();
        for _ in 0..MAX_REFINEMENTS {
            let q = self.solve_levels(agg, &blocks, &gb, cfg.gamma)?;
            if q.windows(2).all(|w| w[0] <= w[1]) {
                levels = q;
                refined = true;
                break;
            }
            // refined levels broke monotonicity: take another isotonic step from them
            for k in 0..g {
                trial[k] = q[gb[k]];
            }
            let (b, m, new) = self.pava_step(agg, &trial, cfg);
            blocks = b;
            gb = m;
            trial = new;
            levels = blocks.iter().map(Block::mean).collect();
        }
        Ok(Fitted {
            blocks,
            group_block: gb,
            levels,
            increments,
            converged,
            refined,
        })
    }

    fn pava_step(&self, agg: &Aggregate, val: &[f64], cfg: &CalibrationConfig) -> (Vec<Block>, Vec<usize>, Vec<f64>) {
        let g = self.n_groups();
        let targets: Vec<f64> = (0..g)
            .map(|k| {
                let cont: f64 = agg.trans[agg.trans_start[k]..agg.trans_start[k + 1]]
                    .iter()
                    .map(|&(r, m)| m * val[r])
                    .sum();
                agg.swy[k] + cfg.gamma * cont
            })
            .collect();
        let blocks = pava_blocks(&targets, &agg.w, cfg.min_pool_weight);
        let gb = self.design.group_blocks(&blocks);
        let new = gb.iter().map(|&b| blocks[b].mean()).collect();
        (blocks, gb, new)
    }

    /// Solves `q_l = mean over level l of (Y + gamma V(q))` on a fixed partition.
    fn solve_levels(&self, agg: &Aggregate, blocks: &[Block], gb: &[usize], gamma: f64) -> Result<Vec<f64>> {
        let l = blocks.len();
        let mut a = DMatrix::<f64>::identity(l, l);
        let mut rhs = DVector::<f64>::zeros(l);
        for k in 0..self.n_groups() {
            if agg.w[k] == 0.0 {
                continue;
            }
            let row = gb[k];
            let wl = blocks[row].sum_w;
            rhs[row] += agg.swy[k] / wl;
            for &(r, m) in &agg.trans[agg.trans_start[k]..agg.trans_start[k + 1]] {
                a[(row, gb[r])] -= gamma * m / wl;
            }
        }
        Ok(linalg::solve(a, &rhs)?.iter().copied().collect())
    }

    pub fn step_function(&self, fitted: &Fitted) -> StepFunction {
        self.design.step_function_with(&fitted.blocks, fitted.levels.clone())
    }

    /// Weighted mean of the functional under the fitted calibrator.
    pub fn plugin(&self, agg: &Aggregate, fitted: &Fitted) -> f64 {
        agg.term_mass
            .iter()
            .enumerate()
            .map(|(r, m)| m * fitted.group_value(r))
            .sum::<f64>()
            / agg.total_w
    }
}

fn calibrate_records(
    data: &TransitionDataset,
    pi: &Policy,
    base: &dyn RecordQ,
    cfg: &CalibrationConfig,
) -> Result<(StepFunction, CalibrationReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("calibration needs data"));
    }
    let table = ScoreTable::new(data, pi, base, None)?;
    let agg = table.aggregate(&data.weights());
    let fitted = table.calibrate(&agg, cfg, cfg.tol_for(data.len()))?;
    let f = table.step_function(&fitted);
    let report = CalibrationReport {
        iterations: fitted.increments.len(),
        final_increment: *fitted.increments.last().unwrap(),
        increments: fitted.increments,
        max_orthogonality_violation: f64::NAN,
        n_levels: f.n_levels(),
        converged: fitted.converged,
        refined: fitted.refined,
    };
    Ok((f, report))
}

/// Calibrates `base` so that `f(base)` satisfies the empirical Bellman
/// equation over step functions of its own levels.
pub fn fitted_q_calibration(
    data: &TransitionDataset,
    pi: &Policy,
    base: Arc<dyn QFunction>,
    cfg: &CalibrationConfig,
) -> Result<(CalibratedQ, CalibrationReport)> {
    let (f, mut report) = calibrate_records(data, pi, &base, cfg)?;
    let qstar = CalibratedQ::new(base, f);
    report.max_orthogonality_violation = check_bellman_orthogonality(data, pi, &qstar, cfg.gamma)?;
    Ok((qstar, report))
}

/// Calibrates pooled out-of-fold scores with one shared calibrator.
pub fn cross_fitted_calibration<Q>(
    data: &TransitionDataset,
    pi: &Policy,
    fold_bases: &CrossFit<Q>,
    cfg: &CalibrationConfig,
) -> Result<(CrossCalibratedQ, CalibrationReport)>
where
    Q: QFunction + Clone + 'static,
{
    if fold_bases.assignment().len() != data.len() {
        return Err(Error::invalid("every record needs a fold assignment"));
    }
    if fold_bases.n_folds() > 1 && !fold_bases.is_out_of_fold() {
        return Err(Error::invalid("fold bases must be trained without their own fold"));
    }
    let (f, mut report) = calibrate_records(data, pi, fold_bases, cfg)?;
    let folds = fold_bases
        .models()
        .iter()
        .map(|m| CalibratedQ::new(Arc::new(m.clone()), f.clone()))
        .collect();
    let qstar = CrossCalibratedQ {
        folds,
        assignment: fold_bases.assignment().to_vec(),
    };
    report.max_orthogonality_violation = check_bellman_orthogonality(data, pi, &qstar, cfg.gamma)?;
    Ok((qstar, report))
}

/// Per-record `q*(A0, S0)` and Bellman residual `Y0 + gamma V(q*)(S1) - q*(A0, S0)`.
pub(crate) fn residuals<Q: RecordQ + ?Sized>(
    data: &TransitionDataset,
    pi: &Policy,
    q: &Q,
    gamma: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let mut values = Vec::with_capacity(data.len());
    let mut res = Vec::with_capacity(data.len());
    for (i, r) in data.records().iter().enumerate() {
        pi.check_state(r.s1)?;
        let v = q.value_for(i, r.a0, r.s0);
        let next: f64 = pi.support(r.s1).iter().map(|&(a, p)| p * q.value_for(i, a, r.s1)).sum();
        values.push(v);
        res.push(r.y0 + gamma * next - v);
    }
    Ok((values, res))
}

/// Largest per-level Bellman residual mass: the max over distinct values
/// `l` of `q*(A0, S0)` of `|sum_{q* = l} w_i (Y0 + gamma V(q*)(S1) - l)| / sum w`.
pub fn check_bellman_orthogonality<Q: RecordQ + ?Sized>(
    data: &TransitionDataset,
    pi: &Policy,
    qstar: &Q,
    gamma: f64,
) -> Result<f64> {
    let (values, res) = residuals(data, pi, qstar, gamma)?;
    let mut sums: HashMap<u64, f64> = HashMap::new();
    for (i, (v, e)) in values.iter().zip(&res).enumerate() {
        *sums.entry((v + 0.0).to_bits()).or_default() += data.weight(i) * e;
    }
    let total = data.total_weight();
    Ok(sums.values().fold(0.0, |m, s| m.max(s.abs() / total)))
}
