use super::MixedError;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub estimates: Vec<f64>,
    pub ses: Vec<f64>,
    pub weights: Vec<f64>,
    /// Replications that received the fallback weight.
    pub fallback: Vec<bool>,
    pub mean: f64,
    pub se: f64,
    /// Between-replication variance, truncated at 0. The bias correction
    /// uses the mean weight of valid replications only.
    pub tau2: f64,
    /// `ξ̃² / (ξ̃² + τ̂²)`; 1 when both are zero.
    pub reliability: f64,
    pub n_valid: usize,
}

fn valid_se(se: f64) -> bool {
    se.is_finite() && se > 0.0
}

/// Inverse-variance aggregation of bootstrap estimates.
///
/// Missing, zero or infinite SEs receive half the smallest valid weight.
/// Estimates that are themselves non-finite are an error.
pub fn ivw_aggregate(estimates: &[(f64, f64)]) -> Result<Aggregate, MixedError> {
    if estimates.iter().any(|(x, _)| !x.is_finite()) {
        return Err(MixedError::NonFinite("estimate".into()));
    }
    let valid: Vec<f64> = estimates.iter().filter(|(_, s)| valid_se(*s)).map(|(_, s)| 1.0 / (s * s)).collect();
    if valid.is_empty() {
        return Err(MixedError::NoValidEstimates);
    }
    let fallback_w = 0.5 * valid.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> =
        estimates.iter().map(|(_, s)| if valid_se(*s) { 1.0 / (s * s) } else { fallback_w }).collect();
    let w_sum: f64 = weights.iter().sum();
    let mean = estimates.iter().zip(&weights).map(|((x, _), w)| w * x).sum::<f64>() / w_sum;
    let spread = estimates.iter().zip(&weights).map(|((x, _), w)| w * (x - mean).powi(2)).sum::<f64>() / w_sum;
    let w_bar = valid.iter().sum::<f64>() / valid.len() as f64;
    let tau2 = (spread - 1.0 / w_bar).max(0.0);
    let denom = mean * mean + tau2;
    Ok(Aggregate {
        estimates: estimates.iter().map(|e| e.0).collect(),
        ses: estimates.iter().map(|e| e.1).collect(),
        fallback: estimates.iter().map(|(_, s)| !valid_se(*s)).collect(),
        weights,
        mean,
        se: 1.0 / w_sum.sqrt(),
        tau2,
        reliability: if denom > 0.0 { mean * mean / denom } else { 1.0 },
        n_valid: valid.len(),
    })
}

/// Between-replication variance implied by slope `beta` and reliability `r`.
pub fn implied_tau2(beta: f64, r: f64) -> f64 {
    beta * beta * (1.0 - r) / r
}

/// `#{x < v} / (n − 1)` for each value.
pub fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values.iter().map(|v| sorted.partition_point(|x| x < v) as f64 / (n - 1) as f64).collect()
}
