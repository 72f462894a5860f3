//! End-to-end estimation on one dataset: nuisance fitting plus any of the
//! estimators, with shared nuisances across methods.

use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::calibration::{cross_fitted_calibration, CalibrationConfig, CalibrationReport, CrossCalibratedQ};
use crate::error::{Error, Result};
use crate::estimators::{
    bootstrap_calibration_ci, drl_model_robust, drl_nonparametric, drl_semiparametric, nonparametric_weights,
    plugin_calibrated, EstimateReport, FunctionalSpec, InfluenceValues, PluginOptions, DEFAULT_LEVEL,
};
use crate::fqi::{cross_fitted_fqi, fitted_q_iteration, CrossFit, FqiConfig, DEFAULT_FQI_TOL};
use crate::mdp::{Action, Policy, QFunction, RecordQ, State, TransitionDataset, DEFAULT_TRUNCATION};
use crate::regression::{
    FeatureMap, FnFeatures, OneHotCells, RegressorQ, RegressorSpec, TreeParams, TupleFeatures,
};
use crate::riesz::{estimate_representer_linear, regress_on_cells, tree_leaf_features};
use crate::seed::stream_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Calibrated plug-in with a Wald interval.
    PluginCalibrated,
    /// Calibrated plug-in with the calibration-bootstrap percentile interval.
    PluginCalibratedBootstrap,
    /// One-step DRL with a linear representer; tree-leaf features when the
    /// Q-function backend is boosted trees.
    DrlSemi,
    DrlRobust,
    DrlNonparam,
    /// Plug-in of the true Q-function (simulation only).
    OraclePlugin,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::PluginCalibrated,
        Method::PluginCalibratedBootstrap,
        Method::DrlSemi,
        Method::DrlRobust,
        Method::DrlNonparam,
        Method::OraclePlugin,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::PluginCalibrated => "plugin-calibrated",
            Method::PluginCalibratedBootstrap => "plugin-calibrated-bootstrap",
            Method::DrlSemi => "drl-semi",
            Method::DrlRobust => "drl-robust",
            Method::DrlNonparam => "drl-nonparam",
            Method::OraclePlugin => "oracle-plugin",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub folds: usize,
    pub regressor: RegressorSpec,
    pub fqi_tol: f64,
    pub fqi_max_iters: Option<usize>,
    pub calibration_max_iters: usize,
    pub calibration_tol: Option<f64>,
    pub min_pool_weight: f64,
    pub level: f64,
    /// Ridge penalty of the linear representer; `None` is `1e-6 n`.
    pub lambda: Option<f64>,
    pub truncation: f64,
    pub bootstrap: usize,
    /// Use the transformed Q-regression for the reward regression as well,
    /// which collapses the model-robust estimator to the semiparametric one.
    pub tie_robust_nuisances: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            folds: 5,
            regressor: RegressorSpec::BoostedTrees(TreeParams::default()),
            fqi_tol: DEFAULT_FQI_TOL,
            fqi_max_iters: None,
            calibration_max_iters: crate::calibration::DEFAULT_CALIBRATION_ITERS,
            calibration_tol: None,
            min_pool_weight: crate::regression::DEFAULT_MIN_POOL_WEIGHT,
            level: DEFAULT_LEVEL,
            lambda: None,
            truncation: DEFAULT_TRUNCATION,
            bootstrap: 500,
            tie_robust_nuisances: false,
        }
    }
}

impl PipelineOptions {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 1 {
            return Err(Error::invalid("folds must be >= 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("level must lie in (0,1)"));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::invalid("truncation must be positive"));
        }
        self.regressor.validate()
    }

    pub fn fqi_config(&self, gamma: f64) -> Result<FqiConfig> {
        let cfg = FqiConfig::new(gamma, self.regressor.clone())?.with_tol(self.fqi_tol)?;
        match self.fqi_max_iters {
            Some(k) => cfg.with_max_iters(k),
            None => Ok(FqiConfig {
                max_iters: crate::fqi::default_max_iters(gamma, self.fqi_tol),
                ..cfg
            }),
        }
    }

    pub fn calibration_config(&self, gamma: f64) -> Result<CalibrationConfig> {
        let cfg = CalibrationConfig::new(gamma)?
            .with_max_iters(self.calibration_max_iters)?
            .with_min_pool_weight(self.min_pool_weight)?;
        match self.calibration_tol {
            Some(t) => cfg.with_tol(t),
            None => Ok(cfg),
        }
    }
}

/// `Q(a, s)` of record `i` minus `gamma` times a fitted regression.
struct Transformed<'a> {
    q: &'a CrossFit<RegressorQ>,
    g: RegressorQ,
    gamma: f64,
}

impl RecordQ for Transformed<'_> {
    fn value_for(&self, record: usize, a: Action, s: State) -> f64 {
        self.q.value_for(record, a, s) - self.gamma * self.g.value(a, s)
    }
}

/// Shared nuisances for one dataset, target and discount.
pub struct Analysis<'a> {
    data: &'a TransitionDataset,
    pi: &'a Policy,
    functional: &'a FunctionalSpec,
    gamma: f64,
    opts: PipelineOptions,
    seed: u64,
    features: Arc<dyn FeatureMap>,
    q_hat: OnceLock<CrossFit<RegressorQ>>,
    calibrated: OnceLock<(CrossCalibratedQ, CalibrationReport)>,
}

impl<'a> Analysis<'a> {
    pub fn new(
        data: &'a TransitionDataset,
        pi: &'a Policy,
        functional: &'a FunctionalSpec,
        gamma: f64,
        opts: PipelineOptions,
        seed: u64,
    ) -> Result<Self> {
        opts.validate()?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0,1), got {gamma}")));
        }
        let features: Arc<dyn FeatureMap> = match opts.regressor {
            RegressorSpec::TabularMean => Arc::new(crate::regression::CellFeatures),
            _ => Arc::new(TupleFeatures::new(data.alphabet().clone())),
        };
        Ok(Analysis {
            data,
            pi,
            functional,
            gamma,
            opts,
            seed,
            features,
            q_hat: OnceLock::new(),
            calibrated: OnceLock::new(),
        })
    }

    /// Cross-fitted FQI estimate.
    pub fn q_hat(&self) -> Result<&CrossFit<RegressorQ>> {
        if let Some(q) = self.q_hat.get() {
            return Ok(q);
        }
        let cfg = self.opts.fqi_config(self.gamma)?;
        let q = cross_fitted_fqi(
            self.data,
            self.pi,
            self.features.clone(),
            &cfg,
            self.opts.folds,
            stream_seed(self.seed, 1),
        )?;
        Ok(self.q_hat.get_or_init(|| q))
    }

    pub fn calibrated(&self) -> Result<&(CrossCalibratedQ, CalibrationReport)> {
        if let Some(c) = self.calibrated.get() {
            return Ok(c);
        }
        let cfg = self.opts.calibration_config(self.gamma)?;
        let c = cross_fitted_calibration(self.data, self.pi, self.q_hat()?, &cfg)?;
        Ok(self.calibrated.get_or_init(|| c))
    }

    /// Features of the linear representer class.
    fn representer_features(&self) -> Result<Arc<dyn FeatureMap>> {
        Ok(match &self.opts.regressor {
            RegressorSpec::BoostedTrees(_) => {
                let cfg = self.opts.fqi_config(self.gamma)?;
                let (full, _) = fitted_q_iteration(self.data, self.pi, self.features.clone(), &cfg)?;
                Arc::new(tree_leaf_features(&full)?)
            }
            RegressorSpec::TabularMean => Arc::new(OneHotCells {
                n_states: self.data.n_states(),
                n_actions: self.data.n_actions(),
            }),
            RegressorSpec::RidgeFeatures { .. } => {
                let inner = self.features.clone();
                let d = inner.dim();
                Arc::new(FnFeatures::new(d + 1, move |a, s, out: &mut [f64]| {
                    inner.write(a, s, &mut out[..d]);
                    out[d] = 1.0;
                }))
            }
        })
    }

    pub fn run(&self, method: Method, oracle: Option<&dyn QFunction>) -> Result<EstimateReport> {
        let (data, pi, f, gamma, level) = (self.data, self.pi, self.functional, self.gamma, self.opts.level);
        match method {
            Method::PluginCalibrated => {
                let (qstar, rep) = self.calibrated()?;
                let opts = PluginOptions {
                    level,
                    ..PluginOptions::default()
                };
                Ok(plugin_calibrated(data, pi, f, qstar, gamma, &opts)?
                    .with_diagnostic("calibration_iterations", rep.iterations as f64))
            }
            Method::PluginCalibratedBootstrap => {
                let cfg = self.opts.calibration_config(gamma)?;
                let b = bootstrap_calibration_ci(
                    data,
                    pi,
                    f,
                    self.q_hat()?,
                    &cfg,
                    self.opts.bootstrap,
                    level,
                    stream_seed(self.seed, 2),
                )?;
                Ok(EstimateReport {
                    method: method.name().into(),
                    estimate: b.estimate,
                    se: b.sd(),
                    ci_lo: b.lo,
                    ci_hi: b.hi,
                    level,
                    n: data.len(),
                    diagnostics: Default::default(),
                    influence: InfluenceValues::default(),
                }
                .with_diagnostic("replicates", b.draws.len() as f64))
            }
            Method::DrlSemi | Method::DrlRobust => {
                let q = self.q_hat()?;
                let rw = estimate_representer_linear(data, pi, f, self.representer_features()?, gamma, self.opts.lambda)?;
                if method == Method::DrlSemi {
                    return drl_semiparametric(data, pi, f, q, &rw, gamma, level);
                }
                let v_next: Vec<f64> = data
                    .records()
                    .iter()
                    .enumerate()
                    .map(|(i, r)| pi.support(r.s1).iter().map(|&(a, p)| p * q.value_for(i, a, r.s1)).sum())
                    .collect();
                let g = regress_on_cells(data, &v_next, self.features.clone(), &self.opts.regressor)?;
                let t_q = Transformed { q, g, gamma };
                if self.opts.tie_robust_nuisances {
                    return drl_model_robust(data, pi, f, q, &rw, &t_q, &t_q, gamma, level);
                }
                let y: Vec<f64> = data.records().iter().map(|r| r.y0).collect();
                let r_hat = regress_on_cells(data, &y, self.features.clone(), &self.opts.regressor)?;
                drl_model_robust(data, pi, f, q, &rw, &r_hat, &t_q, gamma, level)
            }
            Method::DrlNonparam => {
                let rw = nonparametric_weights(data, pi, f, gamma, self.opts.truncation)?;
                drl_nonparametric(data, pi, f, self.q_hat()?, &rw, gamma, level)
            }
            Method::OraclePlugin => {
                let q = oracle.ok_or_else(|| Error::invalid("oracle-plugin needs the true Q-function"))?;
                let rw = crate::riesz::RieszWeights::zeros(data.len());
                let mut r = drl_semiparametric(data, pi, f, q, &rw, gamma, level)?;
                r.method = method.name().into();
                r.diagnostics.clear();
                Ok(r)
            }
        }
    }
}
