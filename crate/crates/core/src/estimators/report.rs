use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Per-record values of an estimated influence function.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InfluenceValues(pub Vec<f64>);

impl InfluenceValues {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

/// Unbiased sample variance of the influence values divided by `n`.
pub fn eif_variance(values: &InfluenceValues) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid("variance needs at least two influence values"));
    }
    let mean = values.mean();
    let ss: f64 = values.0.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(ss / (n - 1) as f64 / n as f64)
}

/// Weighted analogue of [`eif_variance`] for pre-centered values; equals it
/// for unit weights.
pub(crate) fn weighted_se(phi: &[f64], w: &[f64]) -> f64 {
    let n = phi.len();
    if n < 2 {
        return f64::NAN;
    }
    let total: f64 = w.iter().sum();
    let m2: f64 = phi.iter().zip(w).map(|(p, wi)| wi * p * p).sum::<f64>() / total;
    (m2 / (n - 1) as f64).sqrt()
}

pub(crate) fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total
}

/// Two-sided standard normal quantile for confidence `level`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must lie in (0,1), got {level}")));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub n: usize,
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub influence: InfluenceValues,
}

impl EstimateReport {
    /// Wald interval `estimate -/+ z se`.
    pub fn wald(method: &str, estimate: f64, se: f64, level: f64, n: usize) -> Result<Self> {
        let z = normal_quantile(level)?;
        Ok(EstimateReport {
            method: method.to_string(),
            estimate,
            se,
            ci_lo: estimate - z * se,
            ci_hi: estimate + z * se,
            level,
            n,
            diagnostics: BTreeMap::new(),
            influence: InfluenceValues::default(),
        })
    }

    pub fn with_diagnostic(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_values_have_zero_variance() {
        assert_eq!(eif_variance(&InfluenceValues(vec![3.0; 5])).unwrap(), 0.0);
    }

    #[test]
    fn two_point_variance() {
        assert_eq!(eif_variance(&InfluenceValues(vec![-1.0, 1.0])).unwrap(), 1.0);
        assert!(eif_variance(&InfluenceValues(vec![1.0])).is_err());
    }

    #[test]
    fn wald_interval_is_symmetric() {
        let r = EstimateReport::wald("x", 1.0, 0.5, 0.95, 10).unwrap();
        assert!((r.ci_hi - 1.0 - 0.5 * 1.959963984540054).abs() < 1e-12);
        assert!(r.ci_lo <= r.estimate && r.estimate <= r.ci_hi);
    }

    proptest! {
        #[test]
        fn one_pass_matches_two_pass(v in prop::collection::vec(-10.0f64..10.0, 2..50)) {
            let n = v.len() as f64;
            let sum: f64 = v.iter().sum();
            let sumsq: f64 = v.iter().map(|x| x * x).sum();
            let direct = (sumsq - sum * sum / n) / (n - 1.0) / n;
            let two = eif_variance(&InfluenceValues(v.clone())).unwrap();
            prop_assert!((direct - two).abs() < 1e-12 * (1.0 + two.abs()) + 1e-12);
            let mean = sum / n;
            let centered: Vec<f64> = v.iter().map(|x| x - mean).collect();
            let se = weighted_se(&centered, &vec![1.0; v.len()]);
            prop_assert!((se * se - two).abs() < 1e-12 * (1.0 + two));
        }
    }
}
