use crate::error::{Error, Result};
use crate::calibration::residuals;
use crate::mdp::{tabular_weighting_function, Policy, RecordQ, TabularMDP, TransitionDataset};
use crate::riesz::{RieszKind, RieszWeights};

use super::report::{weighted_mean, weighted_se, EstimateReport, InfluenceValues};
use super::FunctionalSpec;

/// Additive smoothing for empty cells of the empirical transition matrix.
pub const EMPTY_CELL_SMOOTHING: f64 = 1e-9;

pub(crate) fn functional_values<Q: RecordQ + ?Sized>(
    data: &TransitionDataset,
    functional: &FunctionalSpec,
    q: &Q,
) -> Vec<f64> {
    data.records()
        .iter()
        .enumerate()
        .map(|(i, r)| functional.evaluate(i, r, q))
        .collect()
}

fn check_weights(weights: &RieszWeights, n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::invalid(format!(
            "{} weights supplied for {n} records",
            weights.len()
        )));
    }
    if let Some((index, &value)) = weights.weights().iter().enumerate().find(|(_, w)| !w.is_finite()) {
        return Err(Error::NonFiniteWeight { index, value });
    }
    Ok(())
}

struct OneStep {
    summand: Vec<f64>,
    plugin: f64,
    correction: f64,
}

fn one_step<Q: RecordQ + ?Sized>(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    q_hat: &Q,
    weights: &RieszWeights,
    gamma: f64,
) -> Result<OneStep> {
    check_weights(weights, data.len())?;
    let (_, res) = residuals(data, pi, q_hat, gamma)?;
    let m = functional_values(data, functional, q_hat);
    let w = data.weights();
    let corr: Vec<f64> = res.iter().zip(weights.weights()).map(|(e, a)| a * e).collect();
    let summand = m.iter().zip(&corr).map(|(a, b)| a + b).collect();
    Ok(OneStep {
        summand,
        plugin: weighted_mean(&m, &w),
        correction: weighted_mean(&corr, &w),
    })
}

fn finish(method: &str, summand: Vec<f64>, data: &TransitionDataset, level: f64) -> Result<EstimateReport> {
    let w = data.weights();
    let est = weighted_mean(&summand, &w);
    let phi: Vec<f64> = summand.iter().map(|s| s - est).collect();
    let se = weighted_se(&phi, &w);
    let mut report = EstimateReport::wald(method, est, se, level, data.len())?;
    report.influence = InfluenceValues(phi);
    Ok(report)
}

/// `P_n m(q_hat) + P_n[w (Y0 + gamma V(q_hat)(S1) - q_hat(A0, S0))]`.
pub fn drl_semiparametric<Q: RecordQ + ?Sized>(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    q_hat: &Q,
    weights: &RieszWeights,
    gamma: f64,
    level: f64,
) -> Result<EstimateReport> {
    let s = one_step(data, pi, functional, q_hat, weights, gamma)?;
    Ok(finish("drl-semi", s.summand, data, level)?
        .with_diagnostic("plugin", s.plugin)
        .with_diagnostic("correction", s.correction)
        .with_diagnostic("max_abs_weight", weights.max_abs_weight()))
}

/// Adds `P_n[(r_hat - t_q_hat)(alpha - gamma V(alpha)(S1) - w)]` to
/// [`drl_semiparametric`]; `t_q_hat` estimates `T(q_hat)`.
#[allow(clippy::too_many_arguments)]
pub fn drl_model_robust<Q, R, T>(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    q_hat: &Q,
    weights: &RieszWeights,
    r_hat: &R,
    t_q_hat: &T,
    gamma: f64,
    level: f64,
) -> Result<EstimateReport>
where
    Q: RecordQ + ?Sized,
    R: RecordQ + ?Sized,
    T: RecordQ + ?Sized,
{
    let (alpha, alpha_next) = match (weights.alpha(), weights.alpha_next()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::invalid("model-robust estimation needs the representer alpha")),
    };
    let s = one_step(data, pi, functional, q_hat, weights, gamma)?;
    let extra: Vec<f64> = data
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let gap = r_hat.value_for(i, r.a0, r.s0) - t_q_hat.value_for(i, r.a0, r.s0);
            gap * (alpha[i] - gamma * alpha_next[i] - weights.weight(i))
        })
        .collect();
    let w = data.weights();
    let robust = weighted_mean(&extra, &w);
    let summand = s.summand.iter().zip(&extra).map(|(a, b)| a + b).collect();
    Ok(finish("drl-robust", summand, data, level)?
        .with_diagnostic("plugin", s.plugin)
        .with_diagnostic("correction", s.correction)
        .with_diagnostic("robust_correction", robust)
        .with_diagnostic("max_abs_weight", weights.max_abs_weight()))
}

/// Plug-in weighting function from the empirical tabular law.
///
/// Empty transition cells get `1e-9` before normalization; ratios are
/// clipped at `truncation`.
pub fn nonparametric_weights(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    gamma: f64,
    truncation: f64,
) -> Result<RieszWeights> {
    let ns = data.n_states();
    let na = data.n_actions();
    let total = data.total_weight();
    let mut counts = vec![0.0; ns * na * ns];
    let mut init = vec![0.0; ns];
    let mut marginal = vec![0.0; ns * na];
    for (i, r) in data.records().iter().enumerate() {
        let w = data.weight(i);
        let cell = r.s0 as usize * na + r.a0 as usize;
        counts[cell * ns + r.s1 as usize] += w;
        init[r.s0 as usize] += w / total;
        marginal[cell] += w / total;
    }
    for row in counts.chunks_mut(ns) {
        row.iter_mut().filter(|c| **c == 0.0).for_each(|c| *c = EMPTY_CELL_SMOOTHING);
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|c| *c /= sum);
    }
    let mdp = TabularMDP::new(ns, na, counts, vec![0.0; ns * na], init, gamma)?;
    let nu = functional.initial_measure(data)?;
    let ratio = tabular_weighting_function(&mdp, pi, &nu, &marginal, truncation)?;
    let mut clipped = 0.0;
    let weights = data
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if ratio.is_clipped(r.a0, r.s0) {
                clipped += data.weight(i);
            }
            ratio.value(r.a0, r.s0)
        })
        .collect();
    Ok(RieszWeights::given(weights).with_clipped_fraction(RieszKind::Tabular, clipped / total))
}

/// [`drl_semiparametric`] with tabular occupancy-ratio weights.
pub fn drl_nonparametric<Q: RecordQ + ?Sized>(
    data: &TransitionDataset,
    pi: &Policy,
    functional: &FunctionalSpec,
    q_hat: &Q,
    occupancy: &RieszWeights,
    gamma: f64,
    level: f64,
) -> Result<EstimateReport> {
    let mut r = drl_semiparametric(data, pi, functional, q_hat, occupancy, gamma, level)?;
    r.method = "drl-nonparam".into();
    if let Some(f) = occupancy.clipped_fraction() {
        r.diagnostics.insert("clipped_fraction".into(), f);
    }
    Ok(r)
}
