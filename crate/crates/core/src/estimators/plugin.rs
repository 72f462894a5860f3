use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{check_bellman_orthogonality, residuals, CalibrationConfig, ScoreTable};
use crate::error::{Error, Result};
use crate::mdp::{Policy, RecordQ, TransitionDataset};
use crate::riesz::estimate_representer_dimreduced;
use crate::seed::stream_seed;

use super::drl::functional_values;
use super::report::{weighted_mean, weighted_se, EstimateReport, InfluenceValues, DEFAULT_LEVEL};
use super::FunctionalSpec;

/// Residual above which a Q-function is not treated as calibrated.
pub const DEFAULT_ORTHOGONALITY_THRESHOLD: f64 = 1e-6;
pub const MIN_BOOTSTRAP_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluginOptions {
    pub level: f64,
    pub orthogonality_threshold: f64,
}

impl Default for PluginOptions {
    fn default() -> Self {
        PluginOptions {
            level: DEFAULT_LEVEL,
            orthogonality_threshold: DEFAULT_ORTHOGONALITY_THRESHOLD,
        }
    }
}

/// `P_n m(q*)` with a Wald interval from the dimension-reduced influence
/// function `w(q*) (Y0 + gamma V(q*)(S1) - q*) + m(q*) - estimate`.
pub fn plugin_calibrated<Q: RecordQ + ?Sized>(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    qstar: &Q,
    gamma: f64,
    opts: &PluginOptions,
) -> Result<EstimateReport> {
    let violation = check_bellman_orthogonality(data, pi, qstar, gamma)?;
    if !(violation <= opts.orthogonality_threshold) {
        return Err(Error::Precondition(format!(
            "Q-function is not Bellman calibrated: orthogonality residual {violation:.3e} exceeds {:.1e}",
            opts.orthogonality_threshold
        )));
    }
    let rw = estimate_representer_dimreduced(data, pi, functional, qstar, gamma)?;
    let (_, res) = residuals(data, pi, qstar, gamma)?;
    let m = functional_values(data, functional, qstar);
    let w = data.weights();
    let est = weighted_mean(&m, &w);
    let corr: Vec<f64> = res.iter().zip(rw.weights()).map(|(e, a)| a * e).collect();
    let phi: Vec<f64> = m.iter().zip(&corr).map(|(mi, c)| mi + c - est).collect();
    let se = weighted_se(&phi, &w);
    let mut report = EstimateReport::wald("plugin-calibrated", est, se, opts.level, data.len())?
        .with_diagnostic("orthogonality_residual", violation)
        .with_diagnostic("n_levels", rw.coefficients().len() as f64)
        .with_diagnostic("max_abs_weight", rw.max_abs_weight())
        .with_diagnostic("correction", weighted_mean(&corr, &w));
    report.influence = InfluenceValues(phi);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// Calibrated plug-in on the full sample.
    pub estimate: f64,
    pub draws: Vec<f64>,
}

impl BootstrapResult {
    pub fn sd(&self) -> f64 {
        let n = self.draws.len() as f64;
        let mean = self.draws.iter().sum::<f64>() / n;
        (self.draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }
}

/// Linear-interpolation sample quantile of sorted values.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval for the calibrated plug-in that resamples only the
/// calibration step: the base scores stay fixed and each replicate reruns
/// fitted Q-calibration with multinomial resampling counts as weights.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_calibration_ci<Q: RecordQ + ?Sized>(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    base: &Q,
    cfg: &CalibrationConfig,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(Error::invalid(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_REPLICATES} replicates, got {replicates}"
        )));
    }
    let n = data.len();
    let sampler = if data.is_weighted() {
        Some(WeightedIndex::new(data.weights()).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    bootstrap_with(data, pi, functional, base, cfg, replicates, level, |rep| {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, rep as u64));
        let mut counts = vec![0.0; n];
        for _ in 0..n {
            let i = match &sampler {
                Some(s) => s.sample(&mut rng),
                None => rng.random_range(0..n),
            };
            counts[i] += 1.0;
        }
        counts
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bootstrap_with<Q, F>(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    base: &Q,
    cfg: &CalibrationConfig,
    replicates: usize,
    level: f64,
    counts: F,
) -> Result<BootstrapResult>
where
    Q: RecordQ + ?Sized,
    F: Fn(usize) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must lie in (0,1), got {level}")));
    }
    if data.is_empty() || replicates == 0 {
        return Err(Error::invalid("bootstrap needs data and replicates"));
    }
    let table = ScoreTable::new(data, pi, &Shim(base), Some(functional))?;
    let tol = cfg.tol_for(data.len());
    let full = table.aggregate(&data.weights());
    let fitted = table.calibrate(&full, cfg, tol)?;
    let estimate = table.plugin(&full, &fitted);
    let mut draws = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let agg = table.aggregate(&counts(rep));
            let fitted = table.calibrate(&agg, cfg, tol)?;
            Ok(table.plugin(&agg, &fitted))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = draws.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - level) / 2.0;
    let (lo, hi) = (quantile_sorted(&sorted, alpha), quantile_sorted(&sorted, 1.0 - alpha));
    draws.shrink_to_fit();
    Ok(BootstrapResult {
        lo,
        hi,
        level,
        estimate,
        draws,
    })
}

/// Lets an unsized `RecordQ` pass as `&dyn RecordQ`.
struct Shim<'a, Q: ?Sized>(&'a Q);

impl<Q: RecordQ + ?Sized> RecordQ for Shim<'_, Q> {
    fn value_for(&self, record: usize, a: crate::mdp::Action, s: crate::mdp::State) -> f64 {
        self.0.value_for(record, a, s)
    }
}
