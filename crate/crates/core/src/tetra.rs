//! Item thresholds and pairwise tetrachoric correlations.
//!
//! `avar` entries are asymptotic variances of `√n (ρ̂ − ρ)` where `n` is the
//! pair's complete-case count, so `avar / n` is the sampling variance.

use crate::data::ResponseMatrix;
use crate::numeric::{bvn, normal};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Largest admissible `|ρ|`.
pub const RHO_MAX: f64 = 0.999;
/// Eigenvalue floor of a repaired correlation matrix.
pub const EIG_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum TetraError {
    #[error("item `{0}` has no variance (all responses equal)")]
    DegenerateItem(String),
    #[error("2×2 table has an empty margin")]
    ZeroMargin,
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("{failed} of {total} item pairs failed (more than 10%)")]
    TooManyFailures { failed: usize, total: usize },
}

/// `τ_j = Φ⁻¹(1 − p̂_j)` over non-missing responses.
pub fn estimate_thresholds(rm: &ResponseMatrix) -> Result<Vec<f64>, TetraError> {
    (0..rm.n_items())
        .map(|j| match rm.p_correct(j) {
            Some(p) if p > 0.0 && p < 1.0 => Ok(normal::quantile(1.0 - p)),
            _ => Err(TetraError::DegenerateItem(rm.item_ids()[j].clone())),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEstimate {
    pub rho: f64,
    /// Asymptotic variance of `√n (ρ̂ − ρ)`.
    pub avar: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// Total count after any continuity correction.
    pub n: f64,
    pub corrected: bool,
    pub clamped: bool,
}

/// Cell probabilities `[p00, p01, p10, p11]`; index = 2·y1 + y2.
pub fn cell_probs(tau1: f64, tau2: f64, rho: f64) -> [f64; 4] {
    let p11 = bvn::upper(tau1, tau2, rho);
    let m1 = 1.0 - normal::cdf(tau1);
    let m2 = 1.0 - normal::cdf(tau2);
    let p10 = m1 - p11;
    let p01 = m2 - p11;
    let p00 = 1.0 - p11 - p10 - p01;
    [p00, p01, p10, p11]
}

struct Derivs {
    #[cfg_attr(not(test), allow(dead_code))]
    loglik: f64,
    score: f64,
    hess: f64,
}

fn derivs(n: &[f64; 4], tau1: f64, tau2: f64, rho: f64) -> Derivs {
    let p = cell_probs(tau1, tau2, rho).map(|v| v.max(1e-300));
    let sign = [1.0, -1.0, -1.0, 1.0];
    let phi2 = bvn::pdf(tau1, tau2, rho);
    let om = 1.0 - rho * rho;
    let dlogphi = rho / om + (tau1 * tau2 * (1.0 + rho * rho) - rho * (tau1 * tau1 + tau2 * tau2)) / (om * om);
    let (mut ll, mut s, mut q) = (0.0, 0.0, 0.0);
    for c in 0..4 {
        ll += n[c] * p[c].ln();
        s += sign[c] * n[c] / p[c];
        q += n[c] / (p[c] * p[c]);
    }
    Derivs { loglik: ll, score: phi2 * s, hess: phi2 * dlogphi * s - phi2 * phi2 * q }
}

/// Tetrachoric correlation of a 2×2 table `[[n00, n01], [n10, n11]]`
/// (rows: first item 0/1, columns: second item 0/1), thresholds taken from
/// the table's margins.
pub fn tetrachoric_pair(table: [[f64; 2]; 2]) -> Result<PairEstimate, TetraError> {
    let mut n = [table[0][0], table[0][1], table[1][0], table[1][1]];
    let zero_margin = n[0] + n[1] <= 0.0 || n[2] + n[3] <= 0.0 || n[0] + n[2] <= 0.0 || n[1] + n[3] <= 0.0;
    if zero_margin {
        return Err(TetraError::ZeroMargin);
    }
    let corrected = n.iter().any(|&c| c <= 0.0);
    if corrected {
        n.iter_mut().for_each(|c| *c += 0.5);
    }
    let total: f64 = n.iter().sum();
    let tau1 = normal::quantile(1.0 - (n[2] + n[3]) / total);
    let tau2 = normal::quantile(1.0 - (n[1] + n[3]) / total);
    let (rho, clamped) = solve_rho(&n, tau1, tau2);
    let d = derivs(&n, tau1, tau2, rho);
    let info = -d.hess;
    let avar = if info > 0.0 { total / info } else { f64::INFINITY };
    Ok(PairEstimate { rho, avar, tau1, tau2, n: total, corrected, clamped })
}

/// Safeguarded Newton on the score over `[−RHO_MAX, RHO_MAX]`.
///
/// Far in the tails the score can underflow to zero or NaN; there its sign
/// is taken to point back towards the cosine-π starting value.
fn solve_rho(n: &[f64; 4], tau1: f64, tau2: f64) -> (f64, bool) {
    let odds = (n[0] * n[3]) / (n[1] * n[2]);
    let start = (std::f64::consts::PI / (1.0 + odds.sqrt())).cos().clamp(-RHO_MAX + 1e-3, RHO_MAX - 1e-3);
    let sign = |r: f64, score: f64| {
        if score.is_finite() && score != 0.0 {
            score.signum()
        } else if r < start {
            1.0
        } else {
            -1.0
        }
    };
    let (mut lo, mut hi) = (-RHO_MAX, RHO_MAX);
    let s_hi = derivs(n, tau1, tau2, hi).score;
    if s_hi.is_finite() && s_hi > 0.0 {
        return (hi, true);
    }
    let s_lo = derivs(n, tau1, tau2, lo).score;
    if s_lo.is_finite() && s_lo < 0.0 {
        return (lo, true);
    }
    let mut r = start;
    for _ in 0..200 {
        let d = derivs(n, tau1, tau2, r);
        if sign(r, d.score) > 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let mut next = if d.hess < 0.0 && d.score.is_finite() { r - d.score / d.hess } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - r).abs();
        r = next;
        if step < 1e-13 || hi - lo < 1e-13 {
            break;
        }
    }
    let clamped = RHO_MAX - r.abs() < 1e-9;
    (r, clamped)
}

/// Pairwise tetrachoric correlation matrix with thresholds and asymptotic
/// variances.
#[derive(Debug, Clone)]
pub struct TetraResult {
    pub s: DMatrix<f64>,
    pub tau: Vec<f64>,
    pub avar: DMatrix<f64>,
    pub n_eff_pair: DMatrix<usize>,
    /// Rows with at least one observed response.
    pub n_obs: usize,
    /// `S` was indefinite and has been repaired.
    pub repaired: bool,
    /// Pairs that could not be estimated; their `avar` is infinite.
    pub failed_pairs: Vec<(usize, usize)>,
}

impl TetraResult {
    pub fn p(&self) -> usize {
        self.tau.len()
    }

    /// Writes `s.csv`, `tau.csv` and `avar.csv` into `dir`.
    pub fn dump_csv(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let write_mat = |name: &str, m: &DMatrix<f64>| -> std::io::Result<()> {
            let mut f = std::fs::File::create(dir.join(name))?;
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.12e}", m[(i, j)])).collect();
                writeln!(f, "{}", row.join(","))?;
            }
            Ok(())
        };
        write_mat("s.csv", &self.s)?;
        write_mat("avar.csv", &self.avar)?;
        let mut f = std::fs::File::create(dir.join("tau.csv"))?;
        for t in &self.tau {
            writeln!(f, "{t:.12e}")?;
        }
        Ok(())
    }
}

pub fn tetrachoric_matrix(rm: &ResponseMatrix) -> Result<TetraResult, TetraError> {
    let p = rm.n_items();
    if p < 2 {
        return Err(TetraError::TooFewItems(p));
    }
    let tau = estimate_thresholds(rm)?;
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).collect();
    let n = rm.n_models();
    let estimates: Vec<(Result<PairEstimate, TetraError>, usize)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let mut t = [[0.0; 2]; 2];
            let mut count = 0;
            for i in 0..n {
                if let (Some(x), Some(y)) = (rm.get(i, a), rm.get(i, b)) {
                    t[x as usize][y as usize] += 1.0;
                    count += 1;
                }
            }
            (tetrachoric_pair(t), count)
        })
        .collect();
    let mut s = DMatrix::identity(p, p);
    let mut avar = DMatrix::zeros(p, p);
    let mut n_eff = DMatrix::zeros(p, p);
    let mut failed = Vec::new();
    for (&(a, b), (est, count)) in pairs.iter().zip(estimates) {
        n_eff[(a, b)] = count;
        n_eff[(b, a)] = count;
        match est {
            Ok(e) if e.avar.is_finite() => {
                s[(a, b)] = e.rho;
                s[(b, a)] = e.rho;
                avar[(a, b)] = e.avar;
                avar[(b, a)] = e.avar;
            }
            _ => {
                failed.push((a, b));
                avar[(a, b)] = f64::INFINITY;
                avar[(b, a)] = f64::INFINITY;
            }
        }
    }
    for j in 0..p {
        n_eff[(j, j)] = (0..n).filter(|&i| rm.get(i, j).is_some()).count();
    }
    if failed.len() * 10 > pairs.len() {
        return Err(TetraError::TooManyFailures { failed: failed.len(), total: pairs.len() });
    }
    let (s, repaired) = nearest_pd_correlation(&s);
    let n_obs = (0..n).filter(|&i| (0..p).any(|j| rm.get(i, j).is_some())).count();
    Ok(TetraResult { s, tau, avar, n_eff_pair: n_eff, n_obs, repaired, failed_pairs: failed })
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Eigenvalue clipping plus unit-diagonal rescaling, repeated until the
/// smallest eigenvalue is at least [`EIG_FLOOR`]. Returns the input
/// unchanged (and `false`) when it already satisfies the floor.
pub fn nearest_pd_correlation(s: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if min_eigenvalue(s) >= EIG_FLOOR {
        return (s.clone(), false);
    }
    let p = s.nrows();
    let mut cur = s.clone();
    let mut clip = EIG_FLOOR;
    for _ in 0..200 {
        let eig = SymmetricEigen::new(cur.clone());
        let vals = eig.eigenvalues.map(|v| v.max(clip));
        let mut m = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        let d: Vec<f64> = (0..p).map(|i| m[(i, i)].sqrt()).collect();
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] = if i == j { 1.0 } else { (m[(i, j)] / (d[i] * d[j])).clamp(-RHO_MAX, RHO_MAX) };
            }
        }
        m = (&m + m.transpose()) * 0.5;
        if min_eigenvalue(&m) >= EIG_FLOOR {
            return (m, true);
        }
        cur = m;
        clip *= 2.0;
    }
    // Shrinking toward the identity always reaches the floor.
    let mut t = 0.0;
    loop {
        t = (t * 2.0f64).max(0.01).min(1.0);
        let m = &cur * (1.0 - t) + DMatrix::identity(p, p) * t;
        if min_eigenvalue(&m) >= EIG_FLOOR || t >= 1.0 {
            return (m, true);
        }
    }
}
