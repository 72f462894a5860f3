//! Target functionals and estimators: calibrated plug-in, semiparametric,
//! model-robust and nonparametric DRL, and the calibration bootstrap.

mod drl;
mod functional;
mod plugin;
mod report;

pub use drl::{
    drl_model_robust, drl_nonparametric, drl_semiparametric, nonparametric_weights, EMPTY_CELL_SMOOTHING,
};
pub use functional::{FunctionalKind, FunctionalSpec, Term};
pub use plugin::{
    bootstrap_calibration_ci, plugin_calibrated, BootstrapResult, PluginOptions, DEFAULT_ORTHOGONALITY_THRESHOLD,
    MIN_BOOTSTRAP_REPLICATES,
};
pub use report::{eif_variance, normal_quantile, EstimateReport, InfluenceValues, DEFAULT_LEVEL};
