use super::structure::{PhiSpec, StructureKind, StructureSpec};
use super::{CfaError, THETA_FLOOR};
use crate::numeric::optim::{self, BfgsOptions};
use crate::tetra::TetraResult;
use nalgebra::DMatrix;
use serde::Serialize;

/// DWLS discrepancy `F(x) = Σ_{a<b} w_ab (s_ab − σ_ab(x))²` with
/// `w_ab = 1 / avar_ab` (zero for failed pairs).
pub struct DwlsObjective<'a> {
    pub spec: &'a StructureSpec,
    pub s: &'a DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl<'a> DwlsObjective<'a> {
    pub fn new(spec: &'a StructureSpec, tetra: &'a TetraResult) -> Result<Self, CfaError> {
        if tetra.p() != spec.p {
            return Err(CfaError::Dimension { got: tetra.p(), want: spec.p });
        }
        let p = spec.p;
        let w = DMatrix::from_fn(p, p, |a, b| {
            let v = tetra.avar[(a, b)];
            if a != b && v.is_finite() && v > 0.0 {
                1.0 / v
            } else {
                0.0
            }
        });
        Ok(Self { spec, s: &tetra.s, w })
    }

    /// Off-diagonal implied covariances `ΛΦΛᵀ + Ψ` (diagonal left as
    /// communalities) together with `ΛΦ`, `Λ` and `Φ`.
    fn parts(&self, x: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (lambda, phi, resid) = self.spec.unpack(x).expect("parameter length checked by caller");
        let lp = &lambda * &phi;
        let mut sig = &lp * lambda.transpose();
        for (&(a, b), &v) in self.spec.free_resid.iter().zip(&resid) {
            sig[(a, b)] += v;
            sig[(b, a)] += v;
        }
        (sig, lp, lambda, phi)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let (sig, ..) = self.parts(x);
        let p = self.spec.p;
        let mut f = 0.0;
        for b in 0..p {
            for a in 0..b {
                let r = self.s[(a, b)] - sig[(a, b)];
                f += self.w[(a, b)] * r * r;
            }
        }
        f
    }

    /// Objective value with the analytic gradient written into `g`.
    pub fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let spec = self.spec;
        let p = spec.p;
        let (sig, lp, lambda, phi) = self.parts(x);
        // R̃_ab = w_ab r_ab off the diagonal.
        let mut rt = DMatrix::zeros(p, p);
        let mut f = 0.0;
        for b in 0..p {
            for a in 0..b {
                let r = self.s[(a, b)] - sig[(a, b)];
                let v = self.w[(a, b)] * r;
                f += v * r;
                rt[(a, b)] = v;
                rt[(b, a)] = v;
            }
        }
        let gl = &rt * &lp * -2.0;
        let mut i = 0;
        for &(j, c) in &spec.loadings {
            g[i] = gl[(j, c)];
            i += 1;
        }
        if spec.n_phi() > 0 {
            let gp = -(lambda.transpose() * &rt * &lambda);
            match &spec.phi {
                PhiSpec::Identity => {}
                PhiSpec::FreeCorrelation { .. } => {
                    for (a, b) in spec.corr_pairs() {
                        g[i] = gp[(a, b)] + gp[(b, a)];
                        i += 1;
                    }
                }
                PhiSpec::SecondOrder => {
                    for a in 1..=spec.k {
                        let mut d = 2.0 * gp[(0, a)];
                        for b in 1..=spec.k {
                            if b != a {
                                d += 2.0 * gp[(a, b)] * phi[(0, b)];
                            }
                        }
                        g[i] = d;
                        i += 1;
                    }
                }
            }
        }
        for &(a, b) in &spec.free_resid {
            g[i] = -2.0 * rt[(a, b)];
            i += 1;
        }
        f
    }

    /// Item pairs `(a, b)`, `a < b`, in Jacobian row order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let p = self.spec.p;
        (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).collect()
    }

    /// `∂σ_ab / ∂x` for every pair `a < b` (rows in [`pairs`](Self::pairs) order).
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let spec = self.spec;
        let p = spec.p;
        let (_, lp, lambda, phi) = self.parts(x);
        let row = |a: usize, b: usize| {
            let (a, b) = (a.min(b), a.max(b));
            a * (2 * p - a - 1) / 2 + (b - a - 1)
        };
        let n_pairs = p * (p - 1) / 2;
        let mut jac = DMatrix::zeros(n_pairs, spec.n_params());
        let mut col = 0;
        for &(j, c) in &spec.loadings {
            for o in 0..p {
                if o != j {
                    jac[(row(j, o), col)] += lp[(o, c)];
                }
            }
            col += 1;
        }
        let phi_block = |dphi: DMatrix<f64>, col: usize, jac: &mut DMatrix<f64>| {
            let d = &lambda * dphi * lambda.transpose();
            for b in 0..p {
                for a in 0..b {
                    jac[(row(a, b), col)] = d[(a, b)];
                }
            }
        };
        match &spec.phi {
            PhiSpec::Identity => {}
            PhiSpec::FreeCorrelation { .. } => {
                for (a, b) in spec.corr_pairs() {
                    let mut d = DMatrix::zeros(spec.m, spec.m);
                    d[(a, b)] = 1.0;
                    d[(b, a)] = 1.0;
                    phi_block(d, col, &mut jac);
                    col += 1;
                }
            }
            PhiSpec::SecondOrder => {
                for a in 1..=spec.k {
                    let mut d = DMatrix::zeros(spec.m, spec.m);
                    d[(0, a)] = 1.0;
                    d[(a, 0)] = 1.0;
                    for b in 1..=spec.k {
                        if b != a {
                            d[(a, b)] = phi[(0, b)];
                            d[(b, a)] = phi[(0, b)];
                        }
                    }
                    phi_block(d, col, &mut jac);
                    col += 1;
                }
            }
        }
        for &(a, b) in &spec.free_resid {
            jac[(row(a, b), col)] = 1.0;
            col += 1;
        }
        jac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitIndices {
    pub rmsea: f64,
    pub cfi: f64,
    pub tli: f64,
    pub srmr: f64,
}

/// RMSEA, CFI, TLI (capped at 1) and SRMR over the strictly lower triangle
/// of `residuals`.
pub fn fit_indices(chi2: f64, df: i64, chi2_null: f64, df_null: i64, n: usize, residuals: &DMatrix<f64>) -> FitIndices {
    let dfm = df.max(0) as f64;
    let excess = (chi2 - dfm).max(0.0);
    let rmsea = if df >= 1 && n > 1 { (excess / (dfm * (n as f64 - 1.0))).sqrt() } else { 0.0 };
    let null_excess = chi2_null - df_null as f64;
    let denom = null_excess.max(chi2 - dfm).max(0.0);
    let cfi = if denom > 0.0 { 1.0 - excess / denom } else { 1.0 };
    let tli = if df >= 1 && df_null >= 1 {
        let rn = chi2_null / df_null as f64;
        let rm = chi2 / dfm;
        if rn > 1.0 {
            ((rn - rm) / (rn - 1.0)).min(1.0)
        } else {
            1.0
        }
    } else {
        1.0
    };
    let p = residuals.nrows();
    let (mut ss, mut cnt) = (0.0, 0usize);
    for b in 0..p {
        for a in b + 1..p {
            ss += residuals[(a, b)] * residuals[(a, b)];
            cnt += 1;
        }
    }
    let srmr = if cnt > 0 { (ss / cnt as f64).sqrt() } else { 0.0 };
    FitIndices { rmsea, cfi, tli, srmr }
}

#[derive(Debug, Clone, Serialize)]
pub struct CfaFit {
    pub kind: StructureKind,
    #[serde(skip)]
    pub spec: StructureSpec,
    pub params: Vec<f64>,
    #[serde(skip)]
    pub lambda: DMatrix<f64>,
    #[serde(skip)]
    pub phi: DMatrix<f64>,
    pub theta: Vec<f64>,
    #[serde(skip)]
    pub sigma: DMatrix<f64>,
    #[serde(skip)]
    pub residuals: DMatrix<f64>,
    pub tau: Vec<f64>,
    pub f: f64,
    pub chi2: f64,
    pub df: i64,
    /// Mean-scaling factor applied to `chi2`.
    pub scaling: f64,
    pub chi2_null: f64,
    pub df_null: i64,
    pub n: usize,
    pub n_params: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub indices: FitIndices,
    /// Items whose residual variance sits at the floor.
    pub heywood: Vec<usize>,
    pub converged: bool,
    pub n_iter: usize,
    #[serde(skip)]
    pub factor_scores: Option<DMatrix<f64>>,
}

impl CfaFit {
    pub fn factor_names(&self) -> &[String] {
        &self.spec.factor_names
    }
}

pub fn fit_dwls(spec: &StructureSpec, tetra: &TetraResult, n: usize) -> Result<CfaFit, CfaError> {
    fit_dwls_with(spec, tetra, n, None, &BfgsOptions::default())
}

pub fn fit_dwls_with(
    spec: &StructureSpec,
    tetra: &TetraResult,
    n: usize,
    start: Option<&[f64]>,
    opts: &BfgsOptions,
) -> Result<CfaFit, CfaError> {
    let obj = DwlsObjective::new(spec, tetra)?;
    let x0 = match start {
        Some(s) if s.len() == spec.n_params() => s.to_vec(),
        Some(s) => return Err(CfaError::Dimension { got: s.len(), want: spec.n_params() }),
        None => spec.start(),
    };
    let (lo, hi) = spec.bounds();
    let res = optim::minimize(|x, g| obj.value_grad(x, g), &x0, &lo, &hi, opts);
    let x = res.x;
    let (lambda, phi, _) = spec.unpack(&x)?;
    let sigma = spec.sigma(&x)?;
    let theta = spec.theta(&x)?;
    let p = spec.p;
    let heywood: Vec<usize> = (0..p).filter(|&j| 1.0 - (sigma[(j, j)] - theta[j]) <= THETA_FLOOR).collect();
    let residuals = &tetra.s - &sigma;
    let f = res.f;
    let nf = n as f64;
    let scaling = 1.0;
    let chi2 = nf * f / scaling;
    let n_pairs = (p * (p - 1) / 2) as i64;
    let q = spec.n_params() as i64;
    let df = n_pairs - q;
    let mut f_null = 0.0;
    for b in 0..p {
        for a in 0..b {
            f_null += obj.w[(a, b)] * tetra.s[(a, b)] * tetra.s[(a, b)];
        }
    }
    let chi2_null = nf * f_null / scaling;
    let indices = fit_indices(chi2, df, chi2_null, n_pairs, n, &residuals);
    Ok(CfaFit {
        kind: spec.kind,
        spec: spec.clone(),
        params: x,
        lambda,
        phi,
        theta,
        sigma,
        residuals,
        tau: tetra.tau.clone(),
        f,
        chi2,
        df,
        scaling,
        chi2_null,
        df_null: n_pairs,
        n,
        n_params: q as usize,
        loglik: -0.5 * chi2,
        aic: chi2 + 2.0 * q as f64,
        bic: chi2 + q as f64 * nf.ln(),
        indices,
        heywood,
        converged: res.converged,
        n_iter: res.iterations,
        factor_scores: None,
    })
}
