use super::reml::{fit_reml, MixedFit, MixedSpec, RandomTerm};
use super::MixedError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRow {
    pub bootstrap: usize,
    pub structure: String,
    /// 0 for true item assignment, 1 for randomized.
    pub randomized: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaCoefficient {
    pub structure: String,
    pub alpha: f64,
    pub alpha_se: f64,
    /// Absent when no row has `randomized ≠ 0` for the structure.
    pub beta: Option<f64>,
    pub beta_se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetaRegression {
    pub coefficients: Vec<MetaCoefficient>,
    /// Single bootstrap: random effects dropped, ordinary least squares.
    pub fixed_only: bool,
    pub fit: MixedFit,
}

/// `t = α_s + β_s r + u_b + v_b r + ε` with uncorrelated `u_b`, `v_b`.
pub fn fit_meta_regression(rows: &[MetaRow]) -> Result<MetaRegression, MixedError> {
    if rows.iter().any(|r| !r.value.is_finite() || !r.randomized.is_finite()) {
        return Err(MixedError::NonFinite("meta-regression table".into()));
    }
    let structures: Vec<String> = {
        let mut seen = Vec::new();
        for r in rows {
            if !seen.contains(&r.structure) {
                seen.push(r.structure.clone());
            }
        }
        seen
    };
    let boots: BTreeSet<usize> = rows.iter().map(|r| r.bootstrap).collect();
    let n = rows.len();
    let y: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let r: Vec<f64> = rows.iter().map(|r| r.randomized).collect();
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    let mut has_beta = Vec::new();
    for s in &structures {
        let ind: Vec<f64> = rows.iter().map(|row| (row.structure == *s) as u8 as f64).collect();
        let slope: Vec<f64> = ind.iter().zip(&r).map(|(i, r)| i * r).collect();
        let contrast = {
            let vals: Vec<f64> = rows.iter().filter(|row| row.structure == *s).map(|row| row.randomized).collect();
            vals.iter().any(|v| (v - vals[0]).abs() > 0.0)
        };
        cols.push((format!("alpha:{s}"), ind));
        has_beta.push(contrast);
        if contrast {
            cols.push((format!("beta:{s}"), slope));
        }
    }
    let mut x = nalgebra::DMatrix::zeros(n, cols.len());
    for (c, (_, v)) in cols.iter().enumerate() {
        for i in 0..n {
            x[(i, c)] = v[i];
        }
    }
    let mut spec = MixedSpec { y, x, fixed_names: cols.iter().map(|c| c.0.clone()).collect(), terms: vec![] };
    let fixed_only = boots.len() < 2;
    if !fixed_only {
        let b: Vec<usize> = rows.iter().map(|r| r.bootstrap).collect();
        spec.terms.push(RandomTerm::intercept("bootstrap", &b));
        if has_beta.iter().any(|&h| h) {
            spec.terms.push(RandomTerm::intercept("bootstrap:r", &b).slope_only(r.clone()));
        }
    }
    let fit = fit_reml(&spec)?;
    let coefficients = structures
        .iter()
        .zip(&has_beta)
        .map(|(s, &hb)| {
            let (alpha, alpha_se) = fit.fixed(&format!("alpha:{s}")).expect("alpha column");
            let beta = hb.then(|| fit.fixed(&format!("beta:{s}")).expect("beta column"));
            MetaCoefficient {
                structure: s.clone(),
                alpha,
                alpha_se,
                beta: beta.map(|b| b.0),
                beta_se: beta.map(|b| b.1),
            }
        })
        .collect();
    Ok(MetaRegression { coefficients, fixed_only, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{normal, seeded_rng};

    fn synthetic(boots: usize, seed: u64) -> Vec<MetaRow> {
        let mut rng = seeded_rng(seed);
        let mut rows = Vec::new();
        for b in 0..boots {
            let u = 0.005 * normal::draw(&mut rng);
            let v = 0.002 * normal::draw(&mut rng);
            for (s, alpha) in [("a", 0.05), ("b", 0.04)] {
                for r in [0.0, 1.0] {
                    let t = alpha + 0.01 * r + u + v * r + 0.002 * normal::draw(&mut rng);
                    rows.push(MetaRow { bootstrap: b, structure: s.into(), randomized: r, value: t });
                }
            }
        }
        rows
    }

    #[test]
    fn recovers_synthetic_coefficients() {
        let m = fit_meta_regression(&synthetic(40, 1)).unwrap();
        assert!(!m.fixed_only);
        for (c, alpha) in m.coefficients.iter().zip([0.05, 0.04]) {
            assert!((c.alpha - alpha).abs() < 2.0 * c.alpha_se, "{c:?}");
            let (b, se) = (c.beta.unwrap(), c.beta_se.unwrap());
            assert!((b - 0.01).abs() < 2.0 * se, "{c:?}");
        }
    }

    #[test]
    fn absent_randomization_reports_no_beta() {
        let rows: Vec<MetaRow> = synthetic(10, 2).into_iter().filter(|r| r.randomized == 0.0).collect();
        let m = fit_meta_regression(&rows).unwrap();
        assert!(m.coefficients.iter().all(|c| c.beta.is_none()));
    }

    #[test]
    fn constant_values() {
        let rows: Vec<MetaRow> = synthetic(6, 3)
            .into_iter()
            .map(|mut r| {
                r.value = 0.07;
                r
            })
            .collect();
        let m = fit_meta_regression(&rows).unwrap();
        for c in &m.coefficients {
            assert!((c.alpha - 0.07).abs() < 1e-12);
        }
        assert!(m.fit.terms.iter().all(|t| t.total() == 0.0));
        assert_eq!(m.fit.residual, 0.0);
    }

    #[test]
    fn single_bootstrap_falls_back() {
        let mut rows = synthetic(2, 4);
        for r in &mut rows {
            r.bootstrap = 0;
        }
        let m = fit_meta_regression(&rows).unwrap();
        assert!(m.fixed_only);
        assert!(m.fit.terms.is_empty());
    }
}
