//! Riesz representers and weighting functions for linear functionals of `q`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FunctionalSpec;
use crate::linalg;
use crate::mdp::{Action, Policy, QFunction, QKind, RecordQ, State, TransitionDataset};
use crate::regression::{FeatureMap, Provenance, RegressionDesign, RegressorQ, RegressorSpec, TreeEnsemble};

/// Default ridge penalty per unit of total sample weight.
pub const DEFAULT_RIDGE_PER_N: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RieszKind {
    Linear,
    DimReduced,
    Tabular,
    Given,
}

/// Estimated weighting function `T(alpha)` and representer `alpha` on the sample.
#[derive(Debug, Clone)]
pub struct RieszWeights {
    kind: RieszKind,
    weights: Vec<f64>,
    alpha: Option<Vec<f64>>,
    alpha_next: Option<Vec<f64>>,
    coefficients: Vec<f64>,
    clipped_fraction: Option<f64>,
    linear: Option<Arc<LinearRepresenter>>,
}

impl RieszWeights {
    /// Per-record weights with no representer attached.
    pub fn given(weights: Vec<f64>) -> Self {
        RieszWeights {
            kind: RieszKind::Given,
            weights,
            alpha: None,
            alpha_next: None,
            coefficients: Vec::new(),
            clipped_fraction: None,
            linear: None,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::given(vec![0.0; n])
    }

    /// Per-record `T(alpha)(A0, S0)`, `alpha(A0, S0)` and `V^pi(alpha)(S1)`.
    pub fn with_representer(weights: Vec<f64>, alpha: Vec<f64>, alpha_next: Vec<f64>) -> Result<Self> {
        if alpha.len() != weights.len() || alpha_next.len() != weights.len() {
            return Err(Error::invalid("representer vectors must match the weights"));
        }
        Ok(RieszWeights {
            alpha: Some(alpha),
            alpha_next: Some(alpha_next),
            ..Self::given(weights)
        })
    }

    pub fn kind(&self) -> RieszKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn alpha(&self) -> Option<&[f64]> {
        self.alpha.as_deref()
    }

    pub fn alpha_next(&self) -> Option<&[f64]> {
        self.alpha_next.as_deref()
    }

    /// Linear coefficients or per-level representer values.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn clipped_fraction(&self) -> Option<f64> {
        self.clipped_fraction
    }

    pub fn linear(&self) -> Option<&Arc<LinearRepresenter>> {
        self.linear.as_ref()
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= c);
        scale(&mut out.weights);
        out.alpha.as_mut().map(scale);
        out.alpha_next.as_mut().map(scale);
        scale(&mut out.coefficients);
        out.linear = None;
        out
    }

    /// Writes `i,weight,alpha` rows; `alpha` is empty when unavailable.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "i,weight,alpha").map_err(io)?;
        for (i, w) in self.weights.iter().enumerate() {
            match &self.alpha {
                Some(a) => writeln!(out, "{i},{w},{}", a[i]),
                None => writeln!(out, "{i},{w},"),
            }
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub(crate) fn with_clipped_fraction(mut self, kind: RieszKind, frac: f64) -> Self {
        self.kind = kind;
        self.clipped_fraction = Some(frac);
        self
    }
}

/// `alpha = beta' phi` together with `T(alpha) = phi' (I - gamma Pi) beta`.
pub struct LinearRepresenter {
    features: Arc<dyn FeatureMap>,
    beta: Vec<f64>,
    t_coef: Vec<f64>,
    lambda: f64,
}

impl std::fmt::Debug for LinearRepresenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearRepresenter")
            .field("dim", &self.beta.len())
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl LinearRepresenter {
    pub fn alpha_at(&self, a: Action, s: State) -> f64 {
        dot(&self.features.features(a, s), &self.beta)
    }

    pub fn weight_at(&self, a: Action, s: State) -> f64 {
        dot(&self.features.features(a, s), &self.t_coef)
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Distinct cells touched per record: current, next under `pi`, and
/// functional terms.
struct Cells {
    cells: Vec<(Action, State)>,
    current: Vec<usize>,
    next: Vec<Vec<(usize, f64)>>,
    terms: Vec<Vec<(usize, f64)>>,
}

impl Cells {
    fn new(data: &TransitionDataset, pi: &Policy, functional: &FunctionalSpec) -> Result<Self> {
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
        let mut next = Vec::with_capacity(data.len());
        let mut terms = Vec::with_capacity(data.len());
        for r in data.records() {
            current.push(id((r.a0, r.s0)));
            next.push(pi.support(r.s1).iter().map(|&(a, p)| (id((a, r.s1)), p)).collect());
            terms.push(
                functional
                    .terms(r)
                    .iter()
                    .map(|t| (id((t.action, t.state)), t.coef))
                    .collect(),
            );
        }
        Ok(Cells {
            cells,
            current,
            next,
            terms,
        })
    }
}

/// Linear representer `alpha = beta' phi` minimizing
/// `P_n[T(alpha)^2] - 2 P_n[m(alpha)] + lambda |beta|^2`, where
/// `T(alpha) = alpha - gamma g` and `g` is the ridge regression of
/// `V^pi(alpha)(S1)` on `phi(A0, S0)`.
///
/// `lambda` applies to unnormalized weighted sums; `None` uses
/// `1e-6 * total weight`. With `lambda = 0` an ill-conditioned system is an
/// error.
pub fn estimate_representer_linear(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    features: Arc<dyn FeatureMap>,
    gamma: f64,
    lambda: Option<f64>,
) -> Result<RieszWeights> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
    }
    if data.is_empty() {
        return Err(Error::invalid("representer estimation needs data"));
    }
    let lambda = lambda.unwrap_or(DEFAULT_RIDGE_PER_N * data.total_weight());
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let cells = Cells::new(data, pi, functional)?;
    let m = features.dim();
    let c = cells.cells.len();
    let raw = DMatrix::from_fn(c, m, |i, j| {
        let (a, s) = cells.cells[i];
        features.features(a, s)[j]
    });
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features must be finite"));
    }
    // The data only see phi on the touched cells; solve in an orthonormal
    // basis of that row space, which leaves the ridge solution unchanged.
    let basis: Option<DMatrix<f64>> = if m > c {
        let svd = raw.clone().svd(false, true);
        let vt = svd.v_t.expect("requested");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > smax * 1e-12)
            .collect();
        Some(DMatrix::from_fn(m, keep.len(), |i, j| vt[(keep[j], i)]))
    } else {
        None
    };
    let phi = match &basis {
        Some(v) => &raw * v,
        None => raw,
    };
    let d = phi.ncols();
    let w = data.weights();

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut cross = DMatrix::<f64>::zeros(d, d);
    let mut mvec = DVector::<f64>::zeros(d);
    let mut psi = vec![DVector::<f64>::zeros(d); data.len()];
    for i in 0..data.len() {
        let x = phi.row(cells.current[i]).transpose();
        for &(k, p) in &cells.next[i] {
            psi[i] += phi.row(k).transpose() * p;
        }
        gram += &x * x.transpose() * w[i];
        cross += &x * psi[i].transpose() * w[i];
        for &(k, coef) in &cells.terms[i] {
            mvec += phi.row(k).transpose() * (w[i] * coef);
        }
    }
    let eye = DMatrix::<f64>::identity(d, d);
    // Pi maps beta to the second-stage coefficients of V^pi(beta' phi)(S1)
    let t_map = if gamma == 0.0 {
        eye.clone()
    } else {
        let pi_map = solve_system(&gram + &eye * lambda, &cross, lambda)?;
        &eye - pi_map * gamma
    };
    let a = t_map.transpose() * &gram * &t_map + &eye * lambda;
    let beta = solve_system(a, &DMatrix::from_column_slice(d, 1, mvec.as_slice()), lambda)?;
    let beta = beta.column(0).into_owned();
    let t_coef = &t_map * &beta;

    let mut weights = Vec::with_capacity(data.len());
    let mut alpha = Vec::with_capacity(data.len());
    let mut alpha_next = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let x = phi.row(cells.current[i]);
        weights.push((x * &t_coef)[0]);
        alpha.push((x * &beta)[0]);
        alpha_next.push(psi[i].dot(&beta));
    }
    let (beta_full, t_full) = match &basis {
        Some(v) => (v * &beta, v * &t_coef),
        None => (beta, t_coef),
    };
    let linear = LinearRepresenter {
        features,
        beta: beta_full.as_slice().to_vec(),
        t_coef: t_full.as_slice().to_vec(),
        lambda,
    };
    Ok(RieszWeights {
        kind: RieszKind::Linear,
        coefficients: linear.beta.clone(),
        linear: Some(Arc::new(linear)),
        ..RieszWeights::with_representer(weights, alpha, alpha_next)?
    })
}

fn solve_system(a: DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if lambda == 0.0 {
        let cond = linalg::condition_number(&a);
        if !(cond < 1e12) {
            return Err(Error::Numerical(format!(
                "representer system is singular at lambda = 0 (condition number {cond:.3e}); use lambda > 0"
            )));
        }
        a.lu()
            .solve(b)
            .ok_or_else(|| Error::Numerical("singular representer system".into()))
    } else {
        a.cholesky()
            .map(|ch| ch.solve(b))
            .ok_or_else(|| Error::Numerical("ridge system is not positive definite".into()))
    }
}

/// Representer over step functions of the levels of `qstar`.
///
/// With level masses `D`, level-transition matrix `M` and
/// `b_l = P_n[m(1{q* = l})]`, the weights solve
/// `(I - gamma M)' D w = b` and `alpha = (I - gamma M)^{-1} w`.
pub fn estimate_representer_dimreduced<Q: RecordQ + ?Sized>(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    qstar: &Q,
    gamma: f64,
) -> Result<RieszWeights> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
    }
    if data.is_empty() {
        return Err(Error::invalid("representer estimation needs data"));
    }
    if pi.n_states() != data.n_states() {
        return Err(Error::invalid("policy and dataset disagree on the state count"));
    }
    let current: Vec<f64> = data
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| qstar.value_for(i, r.a0, r.s0))
        .collect();
    let mut levels = current.clone();
    if levels.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("calibrated Q-function is not finite on the data".into()));
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let l = levels.len();
    // values never seen at (A0, S0) join the nearest level
    let level_of = |v: f64| -> usize {
        let k = levels.partition_point(|&u| u < v);
        if k < l && levels[k] == v {
            k
        } else if k == 0 {
            0
        } else if k == l || v - levels[k - 1] <= levels[k] - v {
            k - 1
        } else {
            k
        }
    };
    let w = data.weights();
    let total = data.total_weight();
    let mut mass = vec![0.0; l];
    let mut trans = DMatrix::<f64>::zeros(l, l);
    let mut b = DVector::<f64>::zeros(l);
    let mut lvl = Vec::with_capacity(data.len());
    let mut next_lvls = Vec::with_capacity(data.len());
    for (i, r) in data.records().iter().enumerate() {
        let k = level_of(current[i]);
        lvl.push(k);
        mass[k] += w[i];
        let nl: Vec<(usize, f64)> = pi
            .support(r.s1)
            .iter()
            .map(|&(a, p)| (level_of(qstar.value_for(i, a, r.s1)), p))
            .collect();
        for &(j, p) in &nl {
            trans[(k, j)] += w[i] * p;
        }
        next_lvls.push(nl);
        for t in functional.terms(r) {
            b[level_of(qstar.value_for(i, t.action, t.state))] += w[i] * t.coef / total;
        }
    }
    for k in 0..l {
        for j in 0..l {
            trans[(k, j)] /= mass[k];
        }
    }
    let t_mat = DMatrix::<f64>::identity(l, l) - trans * gamma;
    let u = linalg::solve(t_mat.transpose(), &b)?;
    let level_weights: Vec<f64> = (0..l).map(|k| u[k] / (mass[k] / total)).collect();
    let alpha_levels = linalg::solve(t_mat, &DVector::from_vec(level_weights.clone()))?;

    let weights = lvl.iter().map(|&k| level_weights[k]).collect();
    let alpha = lvl.iter().map(|&k| alpha_levels[k]).collect();
    let alpha_next = next_lvls
        .iter()
        .map(|nl| nl.iter().map(|&(j, p)| p * alpha_levels[j]).sum())
        .collect();
    Ok(RieszWeights {
        kind: RieszKind::DimReduced,
        coefficients: alpha_levels.as_slice().to_vec(),
        ..RieszWeights::with_representer(weights, alpha, alpha_next)?
    })
}

/// `T(alpha)(a, s) = alpha(a, s) - gamma g(a, s)` with `g` a fitted
/// regression of `V^pi(alpha)(S1)` on `(A0, S0)`.
#[derive(Clone)]
pub struct TransformedQ {
    alpha: Arc<dyn QFunction>,
    regression: RegressorQ,
    gamma: f64,
}

impl TransformedQ {
    pub fn regression(&self) -> &RegressorQ {
        &self.regression
    }
}

impl QFunction for TransformedQ {
    fn value(&self, a: Action, s: State) -> f64 {
        self.alpha.value(a, s) - self.gamma * self.regression.value(a, s)
    }
    fn kind(&self) -> QKind {
        QKind::Regressor
    }
}

/// Regresses per-record targets on `phi(A0, S0)`.
pub fn regress_on_cells(
    data: &TransitionDataset,
    targets: &[f64],
    features: Arc<dyn FeatureMap>,
    spec: &RegressorSpec,
) -> Result<RegressorQ> {
    let rows: Vec<Vec<f64>> = data.records().iter().map(|r| features.features(r.a0, r.s0)).collect();
    let fit = RegressionDesign::new(&rows, Some(&data.weights()))?.fit(spec, targets)?;
    Ok(RegressorQ::new(Arc::new(fit), features))
}

/// Second-stage regression estimate of `T(alpha)`.
pub fn second_stage_regression(
    data: &TransitionDataset,
    pi: &Policy,
    alpha: Arc<dyn QFunction>,
    features: Arc<dyn FeatureMap>,
    spec: &RegressorSpec,
    gamma: f64,
) -> Result<TransformedQ> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let mut targets = Vec::with_capacity(data.len());
    for r in data.records() {
        pi.check_state(r.s1)?;
        targets.push(pi.support(r.s1).iter().map(|&(a, p)| p * alpha.value(a, r.s1)).sum());
    }
    let regression = regress_on_cells(data, &targets, features, spec)?;
    Ok(TransformedQ {
        alpha,
        regression,
        gamma,
    })
}

/// One-hot leaf indicators of every tree of a boosted model, concatenated.
#[derive(Clone)]
pub struct LeafFeatures {
    inner: Arc<dyn FeatureMap>,
    trees: Arc<TreeEnsemble>,
    offsets: Vec<usize>,
    dim: usize,
}

impl LeafFeatures {
    /// Coefficients `c` with `model(x) = base_score + c' phi(x)`.
    pub fn prediction_weights(&self) -> Vec<f64> {
        let lr = self.trees.learning_rate();
        self.trees
            .trees()
            .iter()
            .flat_map(|t| t.leaf_values().into_iter().map(move |v| lr * v))
            .collect()
    }

    pub fn base_score(&self) -> f64 {
        self.trees.base_score()
    }
}

impl FeatureMap for LeafFeatures {
    fn dim(&self) -> usize {
        self.dim
    }
    fn write(&self, a: Action, s: State, out: &mut [f64]) {
        out.fill(0.0);
        let x = self.inner.features(a, s);
        for (t, off) in self.trees.trees().iter().zip(&self.offsets) {
            out[off + t.leaf_index(&x)] = 1.0;
        }
    }
    fn provenance(&self) -> Provenance {
        Provenance::TreeLeaves
    }
}

/// Leaf-indicator features of a tree-backed Q-function model.
pub fn tree_leaf_features(model: &RegressorQ) -> Result<LeafFeatures> {
    let trees = model
        .model()
        .trees()
        .ok_or_else(|| Error::invalid("leaf features need a boosted-tree model"))?;
    let mut offsets = Vec::with_capacity(trees.trees().len());
    let mut dim = 0;
    for t in trees.trees() {
        offsets.push(dim);
        dim += t.n_leaves();
    }
    Ok(LeafFeatures {
        inner: model.feature_map().clone(),
        trees: Arc::new(trees.clone()),
        offsets,
        dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{
        population_dataset, tabular_occupancy_ratio, StateAlphabet, TabularMDP, TabularQ, Transition,
    };
    use crate::regression::{fit_least_squares, CellFeatures, OneHotCells, TreeParams};

    fn two_state_mdp(gamma: f64) -> TabularMDP {
        TabularMDP::new(
            2,
            2,
            vec![0.9, 0.1, 0.2, 0.8, 0.3, 0.7, 0.6, 0.4],
            vec![1.0, 0.0, 0.5, 2.0],
            vec![0.4, 0.6],
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn one_hot_matches_tabular_occupancy_ratio() {
        let mdp = two_state_mdp(0.7);
        let pi = Policy::from_table(2, 2, vec![0.2, 0.8, 0.5, 0.5]).unwrap();
        let b = Policy::from_table(2, 2, vec![0.6, 0.4, 0.3, 0.7]).unwrap();
        let data = population_dataset(&mdp, &b, Arc::new(StateAlphabet::indexed(2))).unwrap();
        let f = FunctionalSpec::policy_value(pi.clone());
        let rw = estimate_representer_linear(
            &data,
            &pi,
            &f,
            Arc::new(OneHotCells { n_states: 2, n_actions: 2 }),
            0.7,
            Some(0.0),
        )
        .unwrap();
        let exact = tabular_occupancy_ratio(&mdp, &pi, &b, f64::INFINITY).unwrap();
        for (i, r) in data.records().iter().enumerate() {
            assert!((rw.weight(i) - exact.value(r.a0, r.s0)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_functional_gives_zero_beta() {
        let mdp = two_state_mdp(0.5);
        let b = Policy::uniform(2, 2).unwrap();
        let data = population_dataset(&mdp, &b, Arc::new(StateAlphabet::indexed(2))).unwrap();
        let f = FunctionalSpec::custom(|_, _| {});
        let rw = estimate_representer_linear(&data, &b, &f, Arc::new(CellFeatures), 0.5, None).unwrap();
        assert!(rw.coefficients().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn singular_system_at_zero_penalty_is_reported() {
        let mdp = two_state_mdp(0.5);
        let b = Policy::uniform(2, 2).unwrap();
        let data = population_dataset(&mdp, &b, Arc::new(StateAlphabet::indexed(2))).unwrap();
        let f = FunctionalSpec::policy_value(b.clone());
        let dup = crate::regression::FnFeatures::new(2, |a, _s, out: &mut [f64]| {
            out[0] = a as f64;
            out[1] = 2.0 * a as f64;
        });
        let err = estimate_representer_linear(&data, &b, &f, Arc::new(dup), 0.5, Some(0.0)).unwrap_err();
        assert!(err.to_string().contains("condition number"));
    }

    #[test]
    fn dimreduced_single_level_policy_value() {
        // constant q*, pi = b: weight solves (1 - gamma) w = 1
        let mdp = two_state_mdp(0.6);
        let b = Policy::uniform(2, 2).unwrap();
        let data = population_dataset(&mdp, &b, Arc::new(StateAlphabet::indexed(2))).unwrap();
        let q = TabularQ::from_fn(2, 2, |_, _| 3.0);
        let rw =
            estimate_representer_dimreduced(&data, &b, &FunctionalSpec::policy_value(b.clone()), &q, 0.6).unwrap();
        for w in rw.weights() {
            assert!((w - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn second_stage_of_constant_is_scaled() {
        let mdp = two_state_mdp(0.5);
        let b = Policy::uniform(2, 2).unwrap();
        let data = population_dataset(&mdp, &b, Arc::new(StateAlphabet::indexed(2))).unwrap();
        let alpha: Arc<dyn QFunction> = Arc::new(TabularQ::from_fn(2, 2, |_, _| 4.0));
        let t = second_stage_regression(
            &data,
            &b,
            alpha,
            Arc::new(CellFeatures),
            &RegressorSpec::ridge(0.0).unwrap(),
            0.5,
        )
        .unwrap();
        assert!((t.value(1, 0) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn second_stage_tabular_is_group_mean() {
        let recs = vec![
            Transition { s0: 0, a0: 0, y0: 0.0, s1: 0 },
            Transition { s0: 0, a0: 0, y0: 0.0, s1: 1 },
            Transition { s0: 0, a0: 0, y0: 0.0, s1: 1 },
            Transition { s0: 1, a0: 0, y0: 0.0, s1: 0 },
        ];
        let data = TransitionDataset::new(recs, Arc::new(StateAlphabet::indexed(2)), 1).unwrap();
        let pi = Policy::deterministic(2, 1, 0).unwrap();
        let alpha: Arc<dyn QFunction> = Arc::new(TabularQ::new(2, 1, vec![1.0, 4.0]).unwrap());
        let t = second_stage_regression(
            &data,
            &pi,
            alpha,
            Arc::new(CellFeatures),
            &RegressorSpec::TabularMean,
            0.5,
        )
        .unwrap();
        assert!((t.value(0, 0) - (1.0 - 0.5 * 3.0)).abs() < 1e-12);
        assert!((t.value(0, 1) - (4.0 - 0.5 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn leaf_features_reproduce_prediction() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 7) as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[0] - r[1]).collect();
        let spec = RegressorSpec::boosted_trees(TreeParams {
            rounds: 20,
            min_leaf_weight: 5.0,
            ..TreeParams::default()
        })
        .unwrap();
        let fit = fit_least_squares(&spec, &x, &y, None).unwrap();
        let feats = crate::regression::FnFeatures::new(2, |a, s, out: &mut [f64]| {
            out[0] = a as f64;
            out[1] = s as f64;
        });
        let q = RegressorQ::new(Arc::new(fit), Arc::new(feats));
        let lf = tree_leaf_features(&q).unwrap();
        assert_eq!(lf.provenance(), Provenance::TreeLeaves);
        let c = lf.prediction_weights();
        for a in 0..7 {
            for s in 0..3 {
                let phi = lf.features(a, s);
                assert_eq!(phi.iter().filter(|&&v| v == 1.0).count(), 20);
                let recon = lf.base_score() + dot(&phi, &c);
                assert!((recon - q.value(a, s)).abs() < 1e-10);
            }
        }
        let tab = RegressorQ::new(
            Arc::new(fit_least_squares(&RegressorSpec::TabularMean, &x, &y, None).unwrap()),
            Arc::new(CellFeatures),
        );
        assert!(tree_leaf_features(&tab).is_err());
    }
}
