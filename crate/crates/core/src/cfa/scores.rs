use super::dwls::CfaFit;
use super::{CfaError, THETA_FLOOR};
use crate::data::ResponseMatrix;
use crate::numeric::normal;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

/// MAP factor scores under the probit latent-response model:
/// `P(y_ij = 1 | η) = Φ((λ_jᵀη − τ_j) / √θ_jj)` with prior `η ~ N(0, Φ)`.
/// Rows of `rm` must be the fitted items in the fitted order.
pub fn factor_scores(fit: &CfaFit, rm: &ResponseMatrix) -> Result<DMatrix<f64>, CfaError> {
    let p = fit.spec.p;
    if rm.n_items() != p {
        return Err(CfaError::Dimension { got: rm.n_items(), want: p });
    }
    let m = fit.spec.m;
    let prior =
        fit.phi.clone().try_inverse().ok_or_else(|| CfaError::Invalid("factor covariance is singular".into()))?;
    let sd: Vec<f64> = fit.theta.iter().map(|t| t.max(THETA_FLOOR).sqrt()).collect();
    let rows: Vec<Vec<f64>> = (0..rm.n_models())
        .into_par_iter()
        .map(|i| {
            let cells: Vec<(usize, f64)> =
                (0..p).filter_map(|j| rm.get(i, j).map(|v| (j, if v == 1 { 1.0 } else { -1.0 }))).collect();
            map_score(&fit.lambda, &fit.tau, &sd, &prior, &cells).as_slice().to_vec()
        })
        .collect();
    Ok(DMatrix::from_fn(rm.n_models(), m, |i, c| rows[i][c]))
}

fn map_score(
    lambda: &DMatrix<f64>,
    tau: &[f64],
    sd: &[f64],
    prior: &DMatrix<f64>,
    cells: &[(usize, f64)],
) -> DVector<f64> {
    let m = lambda.ncols();
    let mut eta = DVector::zeros(m);
    let objective = |eta: &DVector<f64>| {
        let mut v = -0.5 * (eta.transpose() * prior * eta)[(0, 0)];
        for &(j, q) in cells {
            let z = (lambda.row(j) * eta)[(0, 0)];
            v += normal::log_cdf(q * (z - tau[j]) / sd[j]);
        }
        v
    };
    let mut cur = objective(&eta);
    for _ in 0..100 {
        let mut grad = -(prior * &eta);
        let mut hess = -prior.clone();
        for &(j, q) in cells {
            let l = lambda.row(j).transpose() / sd[j];
            let u = q * ((lambda.row(j) * &eta)[(0, 0)] - tau[j]) / sd[j];
            let mills = normal::inv_mills(u);
            grad += &l * (q * mills);
            hess -= &l * l.transpose() * (mills * (u + mills));
        }
        let step = match (-&hess).cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone() * 0.1,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &eta + &step * t;
            let val = objective(&cand);
            if val >= cur - 1e-12 {
                eta = cand;
                cur = val;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.amax() * t < 1e-10 {
            break;
        }
    }
    eta
}

/// Rank-based AUC (Mann-Whitney, ties counted one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let n1 = labels.iter().filter(|&&l| l).count() as f64;
    let n0 = labels.len() as f64 - n1;
    if n1 == 0.0 || n0 == 0.0 {
        return f64::NAN;
    }
    let rsum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    (rsum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OosMetrics {
    pub auc: f64,
    pub mae: f64,
    pub cells: usize,
}

/// Held-out prediction from factor scores. Each held-out item borrows the
/// mean training loading row of its benchmark (matched by name), its
/// residual variance `1 − λ̃ᵀΦλ̃`, and its own threshold.
pub fn oos_predict(fit: &CfaFit, scores: &DMatrix<f64>, heldout: &ResponseMatrix) -> Result<OosMetrics, CfaError> {
    let m = fit.spec.m;
    let train_benches = &fit.spec.bench_names;
    let k_train = train_benches.len();
    let mut sums = vec![vec![0.0; m]; k_train];
    let mut counts = vec![0usize; k_train];
    for j in 0..fit.spec.p {
        let b = fit.spec.bench_of[j];
        for c in 0..m {
            sums[b][c] += fit.lambda[(j, c)];
        }
        counts[b] += 1;
    }
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for h in 0..heldout.n_items() {
        let name = &heldout.bench_names()[heldout.bench_of()[h]];
        let Some(b) = train_benches.iter().position(|t| t == name) else {
            continue;
        };
        if counts[b] == 0 {
            continue;
        }
        let lt = DVector::from_iterator(m, sums[b].iter().map(|v| v / counts[b] as f64));
        let comm = (lt.transpose() * &fit.phi * &lt)[(0, 0)];
        let sd = (1.0 - comm).max(THETA_FLOOR).sqrt();
        let Some(pc) = heldout.p_correct(h) else { continue };
        let tau =
            normal::quantile(1.0 - pc.clamp(0.5 / heldout.n_models() as f64, 1.0 - 0.5 / heldout.n_models() as f64));
        for i in 0..heldout.n_models() {
            if let Some(y) = heldout.get(i, h) {
                let z = (scores.row(i) * &lt)[(0, 0)];
                probs.push(normal::cdf((z - tau) / sd));
                labels.push(y == 1);
            }
        }
    }
    if probs.is_empty() {
        return Err(CfaError::EmptyHeldOut);
    }
    let mae = probs.iter().zip(&labels).map(|(p, &y)| (p - if y { 1.0 } else { 0.0 }).abs()).sum::<f64>()
        / probs.len() as f64;
    Ok(OosMetrics { auc: auc(&probs, &labels), mae, cells: probs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfa::dwls::tests::population_tetra;
    use crate::cfa::{fit_dwls, StructureKind, StructureSpec};
    use rand::Rng;

    #[test]
    fn auc_boundaries() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), 1.0);
        assert_eq!(auc(&[0.5, 0.5, 0.5, 0.5], &[false, true, false, true]), 0.5);
        let mut rng = crate::numeric::seeded_rng(11);
        let s: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
        let l: Vec<bool> = (0..20_000).map(|_| rng.random()).collect();
        assert!((auc(&s, &l) - 0.5).abs() < 0.02);
    }

    fn gfact_fit(p: usize) -> CfaFit {
        let s = DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 } else { 0.36 });
        let spec = StructureSpec::new(StructureKind::GFact, &vec![0; p], &["b".to_string()]).unwrap();
        fit_dwls(&spec, &population_tetra(s, 1.0), 500).unwrap()
    }

    fn matrix(rows: Vec<Vec<u8>>) -> ResponseMatrix {
        let n = rows.len();
        let p = rows[0].len();
        ResponseMatrix::new(
            (0..n).map(|i| format!("m{i}")).collect(),
            (0..p).map(|j| format!("q{j}")).collect(),
            vec!["b".into()],
            vec![0; p],
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn chance_pattern_scores_near_zero_and_all_correct_positive() {
        let fit = gfact_fit(8);
        let rm = matrix(vec![vec![1, 0, 1, 0, 1, 0, 1, 0], vec![1; 8], vec![0, 1, 0, 1, 0, 1, 0, 1]]);
        let sc = factor_scores(&fit, &rm).unwrap();
        assert!(sc[(0, 0)].abs() < 1e-6);
        assert!(sc[(1, 0)] > 0.5 && sc[(1, 0)].is_finite());
    }
}
