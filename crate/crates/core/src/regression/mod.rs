//! Least-squares regression backends and isotonic regression.

mod features;
mod pava;
mod trees;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use features::{CellFeatures, FeatureMap, FnFeatures, OneHotCells, Provenance, TupleFeatures};
pub use pava::{pava_isotonic, StepFunction, DEFAULT_MIN_POOL_WEIGHT};
pub(crate) use pava::{pava_blocks, Block, IsotonicDesign};
pub use trees::{Tree, TreeEnsemble, TreeParams};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{Action, QFunction, QKind, State};

/// Which regression backend to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum RegressorSpec {
    /// Exact weighted mean per distinct feature vector.
    TabularMean,
    /// Ridge regression on the features with an unpenalized intercept.
    RidgeFeatures {
        lambda: f64,
        #[serde(default = "default_true")]
        intercept: bool,
    },
    BoostedTrees(TreeParams),
}

fn default_true() -> bool {
    true
}

impl RegressorSpec {
    pub fn ridge(lambda: f64) -> Result<Self> {
        let spec = RegressorSpec::RidgeFeatures {
            lambda,
            intercept: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn boosted_trees(params: TreeParams) -> Result<Self> {
        params.validate()?;
        Ok(RegressorSpec::BoostedTrees(params))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RegressorSpec::TabularMean => Ok(()),
            RegressorSpec::RidgeFeatures { lambda, .. } => {
                if *lambda >= 0.0 && lambda.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("ridge penalty must be >= 0, got {lambda}")))
                }
            }
            RegressorSpec::BoostedTrees(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Weighted in-sample mean squared error.
    pub train_mse: f64,
    /// Set when a `lambda = 0` ridge system was rank deficient and the
    /// pseudo-inverse was used.
    pub rank_deficient: bool,
    pub unique_rows: usize,
}

#[derive(Debug, Clone)]
enum Model {
    TabularMean {
        table: HashMap<Vec<u64>, f64>,
        fallback: f64,
    },
    Ridge {
        coef: Vec<f64>,
        intercept: f64,
    },
    Trees(TreeEnsemble),
}

/// A fitted regression function `x -> R`.
#[derive(Debug, Clone)]
pub struct FittedRegressor {
    model: Model,
    diagnostics: FitDiagnostics,
}

impl FittedRegressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.model {
            Model::TabularMean { table, fallback } => {
                *table.get(&row_key(x)).unwrap_or(fallback)
            }
            Model::Ridge { coef, intercept } => {
                intercept + coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
            }
            Model::Trees(t) => t.predict(x),
        }
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub fn trees(&self) -> Option<&TreeEnsemble> {
        match &self.model {
            Model::Trees(t) => Some(t),
            _ => None,
        }
    }

    /// Ridge coefficients and intercept, when ridge-backed.
    pub fn linear_coefficients(&self) -> Option<(&[f64], f64)> {
        match &self.model {
            Model::Ridge { coef, intercept } => Some((coef, *intercept)),
            _ => None,
        }
    }
}

fn row_key(x: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 must share a key
    x.iter().map(|&v| (v + 0.0).to_bits()).collect()
}

/// Feature rows deduplicated once so that many target vectors can be fit
/// against the same design.
///
/// For squared loss, fitting on per-row weighted means with pooled weights
/// has the same minimizer as fitting on the raw records.
#[derive(Debug, Clone)]
pub struct RegressionDesign {
    rows: Vec<Vec<f64>>,
    row_of: Vec<usize>,
    weights: Vec<f64>,
    row_weight: Vec<f64>,
}

impl RegressionDesign {
    pub fn new(features: &[Vec<f64>], weights: Option<&[f64]>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid("regression needs at least one observation"));
        }
        let dim = features[0].len();
        let weights = match weights {
            Some(w) => {
                if w.len() != features.len() {
                    return Err(Error::invalid("weights length differs from feature count"));
                }
                if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::invalid("regression weights must be finite and nonnegative"));
                }
                w.to_vec()
            }
            None => vec![1.0; features.len()],
        };
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut row_of = Vec::with_capacity(features.len());
        for x in features {
            if x.len() != dim {
                return Err(Error::invalid("feature vectors have inconsistent dimension"));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("features must be finite"));
            }
            let next = rows.len();
            let id = *index.entry(row_key(x)).or_insert_with(|| {
                rows.push(x.clone());
                next
            });
            row_of.push(id);
        }
        let mut row_weight = vec![0.0; rows.len()];
        for (&r, &w) in row_of.iter().zip(&weights) {
            row_weight[r] += w;
        }
        if row_weight.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("regression weights have zero total"));
        }
        Ok(RegressionDesign {
            rows,
            row_of,
            weights,
            row_weight,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.row_of.len()
    }

    pub fn unique_rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Unique-row index of each observation.
    pub fn row_of(&self) -> &[usize] {
        &self.row_of
    }

    pub fn fit(&self, spec: &RegressorSpec, targets: &[f64]) -> Result<FittedRegressor> {
        spec.validate()?;
        if targets.len() != self.row_of.len() {
            return Err(Error::invalid("targets length differs from feature count"));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("regression targets must be finite"));
        }
        let g = self.rows.len();
        let mut swy = vec![0.0; g];
        let mut swyy = vec![0.0; g];
        for ((&r, &w), &y) in self.row_of.iter().zip(&self.weights).zip(targets) {
            swy[r] += w * y;
            swyy[r] += w * y * y;
        }
        // rows with zero weight carry no information
        let keep: Vec<usize> = (0..g).filter(|&r| self.row_weight[r] > 0.0).collect();
        let xs: Vec<Vec<f64>> = keep.iter().map(|&r| self.rows[r].clone()).collect();
        let ys: Vec<f64> = keep.iter().map(|&r| swy[r] / self.row_weight[r]).collect();
        let ws: Vec<f64> = keep.iter().map(|&r| self.row_weight[r]).collect();
        let total_w: f64 = ws.iter().sum();

        let mut rank_deficient = false;
        let model = match spec {
            RegressorSpec::TabularMean => {
                let fallback = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / total_w;
                let table = xs.iter().map(|x| row_key(x)).zip(ys.iter().copied()).collect();
                Model::TabularMean { table, fallback }
            }
            RegressorSpec::RidgeFeatures { lambda, intercept } => {
                let (coef, icpt, deficient) = fit_ridge(&xs, &ys, &ws, *lambda, *intercept)?;
                rank_deficient = deficient;
                Model::Ridge {
                    coef,
                    intercept: icpt,
                }
            }
            RegressorSpec::BoostedTrees(params) => {
                Model::Trees(TreeEnsemble::fit(&xs, &ys, &ws, params)?)
            }
        };
        let mut fitted = FittedRegressor {
            model,
            diagnostics: FitDiagnostics {
                train_mse: 0.0,
                rank_deficient,
                unique_rows: keep.len(),
            },
        };
        let sse: f64 = keep
            .iter()
            .map(|&r| {
                let p = fitted.predict(&self.rows[r]);
                swyy[r] - 2.0 * p * swy[r] + p * p * self.row_weight[r]
            })
            .sum();
        fitted.diagnostics.train_mse = (sse / total_w).max(0.0);
        Ok(fitted)
    }
}

fn fit_ridge(
    xs: &[Vec<f64>],
    ys: &[f64],
    ws: &[f64],
    lambda: f64,
    intercept: bool,
) -> Result<(Vec<f64>, f64, bool)> {
    let d = xs[0].len();
    let p = d + usize::from(intercept);
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for ((x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        row[..d].copy_from_slice(x);
        if intercept {
            row[d] = 1.0;
        }
        for i in 0..p {
            let wi = w * row[i];
            rhs[i] += wi * y;
            for j in i..p {
                gram[(i, j)] += wi * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let (beta, deficient) = linalg::solve_psd(gram, &rhs)?;
    let icpt = if intercept { beta[d] } else { 0.0 };
    Ok((beta.as_slice()[..d].to_vec(), icpt, deficient))
}

/// Fits `spec` by weighted least squares.
pub fn fit_least_squares(
    spec: &RegressorSpec,
    features: &[Vec<f64>],
    targets: &[f64],
    weights: Option<&[f64]>,
) -> Result<FittedRegressor> {
    if features.len() != targets.len() {
        return Err(Error::invalid("features and targets differ in length"));
    }
    RegressionDesign::new(features, weights)?.fit(spec, targets)
}

/// Q-function `(a, s) -> model(phi(a, s))`.
#[derive(Clone)]
pub struct RegressorQ {
    model: Arc<FittedRegressor>,
    features: Arc<dyn FeatureMap>,
}

impl RegressorQ {
    pub fn new(model: Arc<FittedRegressor>, features: Arc<dyn FeatureMap>) -> Self {
        RegressorQ { model, features }
    }

    pub fn model(&self) -> &Arc<FittedRegressor> {
        &self.model
    }

    pub fn feature_map(&self) -> &Arc<dyn FeatureMap> {
        &self.features
    }
}

impl std::fmt::Debug for RegressorQ {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegressorQ").field("model", &self.model).finish()
    }
}

impl QFunction for RegressorQ {
    fn value(&self, a: Action, s: State) -> f64 {
        self.model.predict(&self.features.features(a, s))
    }
    fn kind(&self) -> QKind {
        QKind::Regressor
    }
}
