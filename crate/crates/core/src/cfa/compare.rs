use super::dwls::CfaFit;
use super::structure::StructureKind;
use super::CfaError;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Nested `(complex, simple)` pairs: the simple structure is a constrained
/// case of the complex one.
const NESTED: [(StructureKind, StructureKind); 8] = [
    (StructureKind::Hier2Ord, StructureKind::IndepFact),
    (StructureKind::CorrFact, StructureKind::IndepFact),
    (StructureKind::BiFact, StructureKind::IndepFact),
    (StructureKind::BiFact, StructureKind::GFact),
    (StructureKind::CorrBiFact, StructureKind::IndepFact),
    (StructureKind::CorrBiFact, StructureKind::GFact),
    (StructureKind::CorrBiFact, StructureKind::CorrFact),
    (StructureKind::CorrBiFact, StructureKind::BiFact),
];

pub fn is_nested(complex: StructureKind, simple: StructureKind) -> bool {
    complex == simple || NESTED.contains(&(complex, simple))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub complex: StructureKind,
    pub simple: StructureKind,
    pub nested: bool,
    pub delta_chi2: f64,
    pub delta_df: i64,
    /// Δχ² p-value for nested pairs.
    pub p_value: Option<f64>,
    /// `exp(−(BIC_complex − BIC_simple)/2)` for non-nested pairs.
    pub evidence_ratio: Option<f64>,
    /// The complex structure is preferred: `p < 0.05` when nested, lower
    /// BIC otherwise.
    pub complex_preferred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRanks {
    pub kind: StructureKind,
    /// Percent ranks (0–100, higher is better) for rmsea, cfi, tli, srmr,
    /// aic, bic, loglik.
    pub ranks: [f64; 7],
}

/// Percent rank of each value among `values` where larger is better:
/// `100 · #{v < x} / (n − 1)`.
pub fn percent_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    values
        .iter()
        .map(|x| {
            if n < 2 {
                return 100.0;
            }
            100.0 * values.iter().filter(|v| *v < x).count() as f64 / (n - 1) as f64
        })
        .collect()
}

/// Pairwise comparisons (complex listed first by parameter count) and
/// per-metric percent ranks across `fits`.
pub fn compare_structures(fits: &[&CfaFit]) -> Result<(Vec<Comparison>, Vec<MetricRanks>), CfaError> {
    if let Some(first) = fits.first() {
        for f in fits {
            if f.spec.p != first.spec.p || f.n != first.n || f.tau != first.tau {
                return Err(CfaError::MismatchedSubsets);
            }
        }
    }
    let mut out = Vec::new();
    for (x, fa) in fits.iter().enumerate() {
        for fb in &fits[x + 1..] {
            let (c, s) = if is_nested(fb.kind, fa.kind) && !is_nested(fa.kind, fb.kind) {
                (fb, fa)
            } else if is_nested(fa.kind, fb.kind) {
                (fa, fb)
            } else if fb.n_params > fa.n_params {
                (fb, fa)
            } else {
                (fa, fb)
            };
            out.push(compare_pair(c, s));
        }
    }
    let metric =
        |f: &CfaFit| [-f.indices.rmsea, f.indices.cfi, f.indices.tli, -f.indices.srmr, -f.aic, -f.bic, f.loglik];
    let table: Vec<[f64; 7]> = fits.iter().map(|f| metric(f)).collect();
    let mut ranks = vec![[0.0; 7]; fits.len()];
    for c in 0..7 {
        let col: Vec<f64> = table.iter().map(|r| r[c]).collect();
        for (i, r) in percent_ranks(&col).into_iter().enumerate() {
            ranks[i][c] = r;
        }
    }
    let ranks = fits.iter().zip(ranks).map(|(f, ranks)| MetricRanks { kind: f.kind, ranks }).collect();
    Ok((out, ranks))
}

fn compare_pair(c: &CfaFit, s: &CfaFit) -> Comparison {
    let nested = is_nested(c.kind, s.kind);
    let delta_chi2 = s.chi2 - c.chi2;
    let delta_df = s.df - c.df;
    if nested {
        let p_value = if delta_df >= 1 {
            let d = ChiSquared::new(delta_df as f64).expect("positive df");
            1.0 - d.cdf(delta_chi2.max(0.0))
        } else {
            1.0
        };
        Comparison {
            complex: c.kind,
            simple: s.kind,
            nested,
            delta_chi2,
            delta_df,
            p_value: Some(p_value),
            evidence_ratio: None,
            complex_preferred: p_value < 0.05,
        }
    } else {
        let d_bic = c.bic - s.bic;
        Comparison {
            complex: c.kind,
            simple: s.kind,
            nested,
            delta_chi2,
            delta_df,
            p_value: None,
            evidence_ratio: Some((-d_bic / 2.0).exp()),
            complex_preferred: d_bic < 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfa::dwls::tests::population_tetra;
    use crate::cfa::{fit_dwls, StructureSpec};
    use nalgebra::DMatrix;

    #[test]
    fn self_comparison_is_not_significant() {
        let p = 6;
        let s = DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 } else { 0.3 + 0.01 * (a + b) as f64 });
        let t = population_tetra(s, 1.0);
        let spec = StructureSpec::new(StructureKind::GFact, &[0; 6], &["b".into()]).unwrap();
        let f = fit_dwls(&spec, &t, 500).unwrap();
        let (cmp, ranks) = compare_structures(&[&f, &f]).unwrap();
        assert_eq!(cmp[0].delta_chi2, 0.0);
        assert!(!cmp[0].complex_preferred);
        assert_eq!(ranks.len(), 2);
    }

    #[test]
    fn percent_rank_sum_over_six() {
        let r = percent_ranks(&[0.3, 0.1, 0.5, 0.2, 0.9, 0.4]);
        assert_eq!(r.iter().sum::<f64>(), 300.0);
    }
}
