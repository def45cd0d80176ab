use super::dwls::{CfaFit, DwlsObjective};
use super::CfaError;
use crate::tetra::TetraResult;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiEntry {
    pub a: usize,
    pub b: usize,
    pub bench_a: usize,
    pub bench_b: usize,
    /// Score `∂ℓ/∂ψ` per observation, `w_ab r_ab`.
    pub score: f64,
    /// Partial information per observation (Schur complement).
    pub info: f64,
    pub mi: f64,
    pub epc: f64,
    pub sepc: f64,
    /// Schur complement was not positive; statistics are zero.
    pub singular: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MiReport {
    pub entries: Vec<MiEntry>,
}

impl MiReport {
    /// Entry with the largest MI.
    pub fn max(&self) -> Option<&MiEntry> {
        self.entries.iter().filter(|e| !e.singular).max_by(|x, y| x.mi.total_cmp(&y.mi))
    }

    /// Mean SEPC and MI per unordered benchmark pair `(k ≤ l)`.
    pub fn by_bench_pair(&self) -> BTreeMap<(usize, usize), (f64, f64, usize)> {
        let mut acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| !e.singular) {
            let key = (e.bench_a.min(e.bench_b), e.bench_a.max(e.bench_b));
            let v = acc.entry(key).or_insert((0.0, 0.0, 0));
            v.0 += e.sepc;
            v.1 += e.mi;
            v.2 += 1;
        }
        for v in acc.values_mut() {
            v.0 /= v.2 as f64;
            v.1 /= v.2 as f64;
        }
        acc
    }
}

/// The `q` item pairs with the largest absolute residual, excluding pairs
/// already free in the fit.
pub fn top_residual_pairs(fit: &CfaFit, q: usize) -> Vec<(usize, usize)> {
    let p = fit.spec.p;
    let mut pairs: Vec<(usize, usize)> =
        (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).filter(|pr| !fit.spec.free_resid.contains(pr)).collect();
    pairs.sort_by(|x, y| fit.residuals[*y].abs().total_cmp(&fit.residuals[*x].abs()).then(x.cmp(y)));
    pairs.truncate(q);
    pairs
}

/// Lagrange-multiplier statistics for freeing residual covariances.
///
/// With `V = n W` the DWLS weight scaled to the sample, the statistic for
/// `ψ = Θ_ab` is `MI = U² / I_ψψ·θ` where `U = n w_ab r_ab` and
/// `I_ψψ·θ = n (w_ab − w_ab² Δ_ab (ΔᵀWΔ)⁻¹ Δ_abᵀ)`; `EPC = U / I_ψψ·θ` and
/// `SEPC = EPC / √(θ_aa θ_bb)` clamped to `[−1, 1]`.
pub fn modification_indices(
    fit: &CfaFit,
    tetra: &TetraResult,
    candidates: &[(usize, usize)],
) -> Result<MiReport, CfaError> {
    let obj = DwlsObjective::new(&fit.spec, tetra)?;
    let p = fit.spec.p;
    let jac = obj.jacobian(&fit.params);
    let pairs = obj.pairs();
    let q = fit.spec.n_params();
    let mut info = nalgebra::DMatrix::zeros(q, q);
    for (r, &(a, b)) in pairs.iter().enumerate() {
        let w = obj.w[(a, b)];
        if w == 0.0 {
            continue;
        }
        let row = jac.row(r);
        info += row.transpose() * row * w;
    }
    let inv = info
        .clone()
        .try_inverse()
        .or_else(|| info.pseudo_inverse(1e-12).ok())
        .ok_or_else(|| CfaError::Invalid("parameter information is singular".into()))?;
    let row_of = |a: usize, b: usize| a * (2 * p - a - 1) / 2 + (b - a - 1);
    let n = fit.n as f64;
    let entries = candidates
        .iter()
        .map(|&(a0, b0)| {
            let (a, b) = (a0.min(b0), a0.max(b0));
            let w = obj.w[(a, b)];
            let r = fit.residuals[(a, b)];
            let d = jac.row(row_of(a, b));
            let h = (d * &inv * d.transpose())[(0, 0)];
            let info = w - w * w * h;
            let score = w * r;
            let mut e = MiEntry {
                a,
                b,
                bench_a: fit.spec.bench_of[a],
                bench_b: fit.spec.bench_of[b],
                score,
                info,
                mi: 0.0,
                epc: 0.0,
                sepc: 0.0,
                singular: true,
            };
            if info > 1e-10 * w.max(1e-300) && w > 0.0 {
                e.singular = false;
                e.mi = n * score * score / info;
                e.epc = score / info;
                e.sepc = (e.epc / (fit.theta[a] * fit.theta[b]).sqrt()).clamp(-1.0, 1.0);
            }
            e
        })
        .collect();
    Ok(MiReport { entries })
}
