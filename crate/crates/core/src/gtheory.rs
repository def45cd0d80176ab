//! Four-facet crossed G-studies and scaling-reliability metrics.
//!
//! Facets: A architecture, B benchmark, C contributor, D deployment. The
//! four-way term is the residual.

use crate::data::{DataError, EcosystemMetadata, FacetComposition};
use crate::mixed::{fit_reml, MixedError, MixedFit, MixedSpec, RandomTerm, TermVariance};
use serde::Serialize;
use std::collections::BTreeSet;

/// Name of the log-size fixed effect in slope models.
pub const SIZE_COVARIATE: &str = "log_nbpars";

/// The 14 random terms as (name, facet mask over A=1, B=2, C=4, D=8).
pub const TERMS: [(&str, u8); 14] = [
    ("A", 1),
    ("B", 2),
    ("C", 4),
    ("D", 8),
    ("BxA", 3),
    ("AxC", 5),
    ("AxD", 9),
    ("BxC", 6),
    ("BxD", 10),
    ("CxD", 12),
    ("BxAxC", 7),
    ("BxAxD", 11),
    ("CxAxD", 13),
    ("BxCxD", 14),
];

const FACETS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, thiserror::Error)]
pub enum GError {
    #[error("facet {0} has a single level")]
    SingleLevel(char),
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("object term `{0}` interacts with the benchmark facet")]
    ObjectInteractsWithBenchmark(String),
    #[error("number of benchmarks must be at least 1")]
    InvalidBenchCount,
    #[error("slope variances missing from the fit")]
    NoSlopes,
    #[error("no observations")]
    Empty,
    #[error(transparent)]
    Mixed(#[from] MixedError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Column compositions for the model-level facets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FacetCompositions {
    pub a: FacetComposition,
    pub c: FacetComposition,
    pub d: FacetComposition,
}

impl Default for FacetCompositions {
    fn default() -> Self {
        Self {
            a: FacetComposition::architecture(),
            c: FacetComposition::contributor(),
            d: FacetComposition::deployment(),
        }
    }
}

/// One observation per (model, benchmark) score.
#[derive(Debug, Clone)]
pub struct FacetDesign {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// Labels per observation for A, B, C, D.
    pub labels: [Vec<String>; 4],
}

impl FacetDesign {
    pub fn from_metadata(md: &EcosystemMetadata, comps: &FacetCompositions) -> Result<Self, GError> {
        let a = md.facet_labels(&comps.a)?;
        let c = md.facet_labels(&comps.c)?;
        let d = md.facet_labels(&comps.d)?;
        let mut out = FacetDesign { y: vec![], x: vec![], labels: Default::default() };
        for s in &md.scores {
            out.y.push(s.value);
            out.x.push(md.models[s.model].x);
            out.labels[0].push(a[s.model].clone());
            out.labels[1].push(s.bench.clone());
            out.labels[2].push(c[s.model].clone());
            out.labels[3].push(d[s.model].clone());
        }
        Ok(out)
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Observed levels per facet.
    pub fn n_levels(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for (f, l) in self.labels.iter().enumerate() {
            out[f] = l.iter().collect::<BTreeSet<_>>().len();
        }
        out
    }

    /// Mean and variance (divisor n) of the covariate over observations.
    pub fn x_moments(&self) -> (f64, f64) {
        (crate::numeric::mean(&self.x), crate::numeric::variance(&self.x))
    }

    fn term_labels(&self, mask: u8) -> Vec<String> {
        (0..self.n_obs())
            .map(|i| {
                (0..4)
                    .filter(|f| mask & (1 << f) != 0)
                    .map(|f| self.labels[f][i].as_str())
                    .collect::<Vec<_>>()
                    .join("\u{1f}")
            })
            .collect()
    }

    fn spec(&self, slopes: bool) -> Result<MixedSpec, GError> {
        if self.n_obs() == 0 {
            return Err(GError::Empty);
        }
        let levels = self.n_levels();
        for (f, &n) in levels.iter().enumerate() {
            if n < 2 {
                return Err(GError::SingleLevel(FACETS[f]));
            }
        }
        let mut spec = MixedSpec::new(self.y.clone());
        if slopes {
            spec = spec.with_fixed(SIZE_COVARIATE, &self.x);
        }
        for (name, mask) in TERMS {
            let labels = self.term_labels(mask);
            let n_levels = labels.iter().collect::<BTreeSet<_>>().len();
            let singletons = {
                let mut counts = std::collections::HashMap::new();
                for l in &labels {
                    *counts.entry(l).or_insert(0usize) += 1;
                }
                counts.values().filter(|&&c| c == 1).count()
            };
            if singletons > 0 {
                log::warn!("term {name}: {singletons} of {n_levels} levels have a single observation");
            }
            let mut t = RandomTerm::intercept(name, &labels);
            if slopes {
                t = t.with_slope(self.x.clone(), false);
            }
            spec = spec.with_term(t);
        }
        Ok(spec)
    }
}

/// Intercept-only crossed G-study.
pub fn gstudy_base(md: &EcosystemMetadata, comps: &FacetCompositions) -> Result<MixedFit, GError> {
    gstudy_base_design(&FacetDesign::from_metadata(md, comps)?)
}

pub fn gstudy_base_design(design: &FacetDesign) -> Result<MixedFit, GError> {
    Ok(fit_reml(&design.spec(false)?)?)
}

/// G-study with fixed log-size slope and uncorrelated random slopes per term.
pub fn gstudy_slopes(md: &EcosystemMetadata, comps: &FacetCompositions) -> Result<MixedFit, GError> {
    gstudy_slopes_design(&FacetDesign::from_metadata(md, comps)?)
}

pub fn gstudy_slopes_design(design: &FacetDesign) -> Result<MixedFit, GError> {
    let mut fit = fit_reml(&design.spec(true)?)?;
    let x0 = design.x[0];
    if design.x.iter().all(|v| *v == x0) {
        fit.singular = true;
    }
    Ok(fit)
}

/// Variance components of a G-study, detached from the fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceComponents {
    pub terms: Vec<TermVariance>,
    pub residual: f64,
    pub beta: Option<f64>,
}

impl VarianceComponents {
    pub fn from_fit(fit: &MixedFit) -> Self {
        Self { terms: fit.terms.clone(), residual: fit.residual, beta: fit.fixed(SIZE_COVARIATE).map(|b| b.0) }
    }

    /// Intercept-only components keyed by term name.
    pub fn from_intercepts(values: &[(&str, f64)], residual: f64) -> Self {
        Self {
            terms: values
                .iter()
                .map(|(n, v)| TermVariance { name: n.to_string(), intercept: Some(*v), slope: None, covariance: None })
                .collect(),
            residual,
            beta: None,
        }
    }

    /// Add slope variances to the named terms (creating terms as needed).
    pub fn with_slopes(mut self, values: &[(&str, f64)]) -> Self {
        for (n, v) in values {
            match self.terms.iter_mut().find(|t| t.name == *n) {
                Some(t) => t.slope = Some(*v),
                None => self.terms.push(TermVariance {
                    name: n.to_string(),
                    intercept: None,
                    slope: Some(*v),
                    covariance: None,
                }),
            }
        }
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn intercept_total(&self) -> f64 {
        self.terms.iter().filter_map(|t| t.intercept).sum()
    }

    pub fn slope_total(&self) -> f64 {
        self.terms.iter().filter_map(|t| t.slope).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub term: String,
    pub sigma2: f64,
    pub slope: Option<f64>,
    /// `(σ²_S,0 + σ²_S,1) / total`.
    pub share: f64,
    pub psi: Option<f64>,
}

/// Rows of the variance-component table followed by a `Residual` row.
pub fn variance_table(vc: &VarianceComponents) -> Vec<VarianceRow> {
    let total = vc.intercept_total() + vc.slope_total() + vc.residual;
    let slope_total = vc.slope_total();
    let mut rows: Vec<VarianceRow> = vc
        .terms
        .iter()
        .map(|t| VarianceRow {
            term: t.name.clone(),
            sigma2: t.intercept.unwrap_or(0.0),
            slope: t.slope,
            share: if total > 0.0 { t.total() / total } else { 0.0 },
            psi: t.slope.map(|s| if slope_total > 0.0 { s / slope_total } else { 0.0 }),
        })
        .collect();
    rows.push(VarianceRow {
        term: "Residual".into(),
        sigma2: vc.residual,
        slope: None,
        share: if total > 0.0 { vc.residual / total } else { 0.0 },
        psi: None,
    });
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingMetrics {
    pub beta: f64,
    /// `β² / Σσ²_S,1`; infinite when the slope variances vanish.
    pub snr: f64,
    pub snr_undefined: bool,
    pub r_beta: f64,
    pub psi: Vec<(String, f64)>,
    pub cv: f64,
    pub slope_variance: f64,
    pub omega_x: f64,
    pub omega_x_minus_b: f64,
    pub omega_size_all: f64,
    pub h: Vec<(String, f64)>,
}

pub fn scaling_metrics(fit: &MixedFit, var_x: f64, mean_x: f64) -> Result<ScalingMetrics, GError> {
    scaling_metrics_from(&VarianceComponents::from_fit(fit), var_x, mean_x)
}

pub fn scaling_metrics_from(vc: &VarianceComponents, var_x: f64, mean_x: f64) -> Result<ScalingMetrics, GError> {
    if vc.terms.iter().all(|t| t.slope.is_none()) {
        return Err(GError::NoSlopes);
    }
    let beta = vc.beta.ok_or(GError::NoSlopes)?;
    let b2 = beta * beta;
    let sv = vc.slope_total();
    let iv = vc.intercept_total();
    let iv_b: f64 = vc.terms.iter().filter(|t| t.name != "B").filter_map(|t| t.intercept).sum();
    let snr_undefined = sv <= 0.0;
    let snr = if snr_undefined { f64::INFINITY } else { b2 / sv };
    let r_beta = if b2 + sv > 0.0 { b2 / (b2 + sv) } else { 0.0 };
    let psi: Vec<(String, f64)> = vc
        .terms
        .iter()
        .filter_map(|t| t.slope.map(|s| (t.name.clone(), if sv > 0.0 { s / sv } else { 0.0 })))
        .collect();
    let fixed = b2 * var_x;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let size_all = fixed + (var_x + mean_x * mean_x) * sv;
    Ok(ScalingMetrics {
        beta,
        snr,
        snr_undefined,
        r_beta,
        h: psi.clone(),
        psi,
        cv: if beta != 0.0 { sv.sqrt() / beta.abs() } else { f64::INFINITY },
        slope_variance: sv,
        omega_x: ratio(fixed, fixed + iv + vc.residual),
        omega_x_minus_b: ratio(fixed, fixed + iv_b + vc.residual),
        omega_size_all: ratio(size_all, size_all + iv + vc.residual),
    })
}

fn term_mask(name: &str) -> Option<u8> {
    TERMS.iter().find(|t| t.0 == name).map(|t| t.1)
}

/// Relative G-coefficient for the mean over `n_b` benchmarks.
///
/// Universe variance sums the object terms' intercept variances; relative
/// error sums every interaction involving B, plus the residual, over `n_b`.
pub fn g_coefficient(vc: &VarianceComponents, object_terms: &[&str], n_b: usize) -> Result<f64, GError> {
    if n_b < 1 {
        return Err(GError::InvalidBenchCount);
    }
    let mut universe = 0.0;
    for name in object_terms {
        let mask = term_mask(name).ok_or_else(|| GError::UnknownTerm(name.to_string()))?;
        if mask & 2 != 0 {
            return Err(GError::ObjectInteractsWithBenchmark(name.to_string()));
        }
        universe += vc.terms.iter().filter(|t| t.name == *name).filter_map(|t| t.intercept).sum::<f64>();
    }
    let interacting: f64 = vc
        .terms
        .iter()
        .filter(|t| term_mask(&t.name).is_some_and(|m| m & 2 != 0 && m != 2))
        .filter_map(|t| t.intercept)
        .sum();
    let error = (interacting + vc.residual) / n_b as f64;
    Ok(if universe + error > 0.0 { universe / (universe + error) } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PUBLISHED_SLOPES: [(&str, f64); 14] = [
        ("A", 14.06),
        ("AxC", 6.61),
        ("AxD", 0.40),
        ("B", 32.09),
        ("BxA", 4.83),
        ("BxAxC", 7.20),
        ("BxAxD", 0.90),
        ("BxC", 3.47),
        ("BxCxD", 4.93),
        ("BxD", 1.90),
        ("C", 17.75),
        ("CxAxD", 7.42),
        ("CxD", 1.38),
        ("D", 3.26),
    ];

    const PUBLISHED_SLOPE_INTERCEPTS: [(&str, f64); 14] = [
        ("A", 4.67),
        ("AxC", 5.60),
        ("AxD", 0.51),
        ("B", 104.21),
        ("BxA", 6.15),
        ("BxAxC", 3.92),
        ("BxAxD", 0.82),
        ("BxC", 4.40),
        ("BxCxD", 0.50),
        ("BxD", 11.65),
        ("C", 5.35),
        ("CxAxD", 6.36),
        ("CxD", 1.88),
        ("D", 0.00),
    ];

    fn published_slope_components() -> VarianceComponents {
        let beta = (1.12f64 * 106.20).sqrt();
        VarianceComponents::from_intercepts(&PUBLISHED_SLOPE_INTERCEPTS, 33.24)
            .with_slopes(&PUBLISHED_SLOPES)
            .with_beta(beta)
    }

    #[test]
    fn published_slope_shares() {
        let vc = published_slope_components();
        assert!((vc.slope_total() - 106.20).abs() < 1e-9);
        let m = scaling_metrics_from(&vc, 1.0, 0.0).unwrap();
        let psi = |n: &str| m.psi.iter().find(|p| p.0 == n).unwrap().1;
        assert!((psi("B") - 0.302).abs() < 0.005);
        assert!((psi("A") - 0.132).abs() < 0.005);
        assert!((psi("C") - 0.167).abs() < 0.005);
        assert!((m.cv - 0.944).abs() < 0.005, "{}", m.cv);
        assert!((m.r_beta - 0.53).abs() < 0.01);
        assert!((m.psi.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn published_base_share_of_benchmark() {
        let vc = VarianceComponents::from_intercepts(
            &[
                ("B", 150.0),
                ("C", 29.91),
                ("A", 14.5),
                ("D", 6.64),
                ("BxC", 12.7),
                ("AxC", 12.3),
                ("BxA", 10.21),
                ("BxD", 17.2),
                ("CxD", 2.64),
                ("AxD", 0.77),
                ("three-way", 38.9),
            ],
            52.0,
        );
        let rows = variance_table(&vc);
        assert!((rows[0].share - 0.430).abs() < 0.002, "{}", rows[0].share);
        assert!((rows.iter().map(|r| r.share).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_gives_zero_signal() {
        let vc = published_slope_components().with_beta(0.0);
        let m = scaling_metrics_from(&vc, 1.0, 0.5).unwrap();
        assert_eq!(m.snr, 0.0);
        assert_eq!(m.r_beta, 0.0);
    }

    #[test]
    fn zero_slope_variance_flags_snr() {
        let zero: Vec<(&str, f64)> = PUBLISHED_SLOPES.iter().map(|(n, _)| (*n, 0.0)).collect();
        let vc = VarianceComponents::from_intercepts(&[("B", 1.0)], 1.0).with_slopes(&zero).with_beta(1.0);
        let m = scaling_metrics_from(&vc, 1.0, 0.0).unwrap();
        assert!(m.snr_undefined && m.snr.is_infinite());
    }

    #[test]
    fn omega_ordering_and_bounds() {
        let vc = published_slope_components();
        let m = scaling_metrics_from(&vc, 0.6, 0.9).unwrap();
        for v in [m.omega_x, m.omega_x_minus_b, m.omega_size_all, m.r_beta] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(m.omega_x <= m.omega_size_all);
        assert!(m.omega_x <= m.omega_x_minus_b);
    }

    #[test]
    fn g_coefficient_examples() {
        let vc = VarianceComponents::from_intercepts(&[("A", 4.0), ("BxA", 0.0)], 0.0);
        assert_eq!(g_coefficient(&vc, &["A"], 1).unwrap(), 1.0);
        let vc = VarianceComponents::from_intercepts(&[("A", 4.0), ("BxA", 3.0)], 1.0);
        assert!((g_coefficient(&vc, &["A"], 1).unwrap() - 0.5).abs() < 1e-12);
        let mut last = 0.0;
        for nb in 1..10 {
            let g = g_coefficient(&vc, &["A"], nb).unwrap();
            assert!(g > last);
            last = g;
        }
        assert!(matches!(g_coefficient(&vc, &["BxA"], 2), Err(GError::ObjectInteractsWithBenchmark(_))));
        assert!(matches!(g_coefficient(&vc, &["A"], 0), Err(GError::InvalidBenchCount)));
    }

    #[test]
    fn term_set_is_power_set_minus_full() {
        let masks: BTreeSet<u8> = TERMS.iter().map(|t| t.1).collect();
        assert_eq!(masks.len(), 14);
        assert!(!masks.contains(&15) && !masks.contains(&0));
        for (name, mask) in TERMS {
            let letters: BTreeSet<char> = name.chars().filter(|c| c.is_ascii_uppercase() && *c != 'X').collect();
            let from_mask: BTreeSet<char> = (0..4).filter(|f| mask & (1 << f) != 0).map(|f| FACETS[f]).collect();
            assert_eq!(letters, from_mask, "{name}");
        }
    }
}
