use super::MixedError;
use crate::numeric::optim::{self, BfgsOptions};
use crate::numeric::sparse::{SymbolicCholesky, SymmetricPattern};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::HashMap;
use std::hash::Hash;

/// Lower bound on log relative standard deviations.
const LOG_THETA_MIN: f64 = -18.0;
const LOG_THETA_MAX: f64 = 12.0;
/// Variances below this multiple of the residual variance mark the fit singular.
const SINGULAR_RATIO: f64 = 1e-8;

/// Integer codes for labels in first-seen order, and the number of levels.
pub fn factorize<T: Hash + Eq + Clone>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut map: HashMap<T, usize> = HashMap::new();
    let codes = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l.clone()).or_insert(next)
        })
        .collect();
    (codes, map.len())
}

#[derive(Debug, Clone)]
pub struct RandomTerm {
    pub name: String,
    /// Level code per observation, `0..n_levels`.
    pub group: Vec<usize>,
    pub n_levels: usize,
    pub intercept: bool,
    pub slope: Option<Vec<f64>>,
    /// Free intercept/slope correlation within the term.
    pub correlated: bool,
}

impl RandomTerm {
    pub fn intercept<T: Hash + Eq + Clone>(name: impl Into<String>, labels: &[T]) -> Self {
        let (group, n_levels) = factorize(labels);
        Self { name: name.into(), group, n_levels, intercept: true, slope: None, correlated: false }
    }

    pub fn with_slope(mut self, x: Vec<f64>, correlated: bool) -> Self {
        self.slope = Some(x);
        self.correlated = correlated && self.intercept;
        self
    }

    pub fn slope_only(mut self, x: Vec<f64>) -> Self {
        self.intercept = false;
        self.slope = Some(x);
        self.correlated = false;
        self
    }

    fn width(&self) -> usize {
        self.intercept as usize + self.slope.is_some() as usize
    }

    fn n_theta(&self) -> usize {
        if self.correlated {
            3
        } else {
            self.width()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixedSpec {
    pub y: Vec<f64>,
    /// Fixed-effect design, one row per observation.
    pub x: DMatrix<f64>,
    pub fixed_names: Vec<String>,
    pub terms: Vec<RandomTerm>,
}

impl MixedSpec {
    /// Intercept-only fixed part.
    pub fn new(y: Vec<f64>) -> Self {
        let n = y.len();
        Self { y, x: DMatrix::from_element(n, 1, 1.0), fixed_names: vec!["(Intercept)".into()], terms: vec![] }
    }

    pub fn with_fixed(mut self, name: impl Into<String>, column: &[f64]) -> Self {
        let n = self.y.len();
        assert_eq!(column.len(), n, "fixed column length");
        self.x = self.x.clone().insert_column(self.x.ncols(), 0.0);
        let c = self.x.ncols() - 1;
        for i in 0..n {
            self.x[(i, c)] = column[i];
        }
        self.fixed_names.push(name.into());
        self
    }

    pub fn with_term(mut self, term: RandomTerm) -> Self {
        self.terms.push(term);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermVariance {
    pub name: String,
    pub intercept: Option<f64>,
    pub slope: Option<f64>,
    pub covariance: Option<f64>,
}

impl TermVariance {
    pub fn total(&self) -> f64 {
        self.intercept.unwrap_or(0.0) + self.slope.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MixedFit {
    pub fixed_names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub terms: Vec<TermVariance>,
    pub residual: f64,
    /// REML deviance, −2 × restricted log-likelihood.
    pub reml: f64,
    pub converged: bool,
    pub singular: bool,
    pub iterations: usize,
    pub n_obs: usize,
}

impl MixedFit {
    pub fn term(&self, name: &str) -> Option<&TermVariance> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn fixed(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.fixed_names.iter().position(|n| n == name)?;
        Some((self.beta[i], self.se[i]))
    }
}

/// Per-column block description: the term slot and the offset within the
/// level's block.
#[derive(Debug, Clone, Copy)]
struct Col {
    term: usize,
    offset: usize,
}

/// Precomputed cross products for repeated evaluation at different θ.
struct Problem<'a> {
    spec: &'a MixedSpec,
    n: usize,
    p: usize,
    q: usize,
    cols: Vec<Col>,
    /// First column of each term's level blocks.
    term_start: Vec<usize>,
    pattern: SymmetricPattern,
    symbolic: SymbolicCholesky,
    /// ZᵀZ in pattern order.
    ztz: Vec<f64>,
    /// For each pattern entry (i, j): contributing `(pos, k, l)` with
    /// `k ∈ block(i)`, `l ∈ block(j)`.
    contrib: Vec<Vec<(usize, usize, usize)>>,
    ztx: DMatrix<f64>,
    zty: Vec<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
}

struct Eval {
    deviance: f64,
    beta: DVector<f64>,
    r2: f64,
    rx_inv_t_rx_inv: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a MixedSpec) -> Result<Self, MixedError> {
        let n = spec.y.len();
        let p = spec.x.ncols();
        let mut cols = Vec::new();
        let mut term_start = Vec::new();
        for (t, term) in spec.terms.iter().enumerate() {
            term_start.push(cols.len());
            for _ in 0..term.n_levels {
                for offset in 0..term.width() {
                    cols.push(Col { term: t, offset });
                }
            }
        }
        let q = cols.len();
        // Sparse rows of Z: (column, value).
        let zrow = |i: usize| -> Vec<(usize, f64)> {
            let mut r = Vec::new();
            for (t, term) in spec.terms.iter().enumerate() {
                let base = term_start[t] + term.group[i] * term.width();
                let mut o = 0;
                if term.intercept {
                    r.push((base, 1.0));
                    o = 1;
                }
                if let Some(x) = &term.slope {
                    r.push((base + o, x[i]));
                }
            }
            r
        };
        let mut coords = Vec::new();
        for t in 0..spec.terms.len() {
            // Both columns of a level block interact, even when a slope is 0.
            let w = spec.terms[t].width();
            for l in 0..spec.terms[t].n_levels {
                let b = term_start[t] + l * w;
                for a in 0..w {
                    for c in a..w {
                        coords.push((b + a, b + c));
                    }
                }
            }
        }
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(zrow).collect();
        for r in &rows {
            for (a, &(ca, _)) in r.iter().enumerate() {
                for &(cb, _) in &r[a..] {
                    coords.push((ca, cb));
                }
            }
            // Whole blocks interact with whole blocks.
            for &(ca, _) in r {
                for &(cb, _) in r {
                    let ba = ca - cols[ca].offset;
                    let bb = cb - cols[cb].offset;
                    let wa = spec.terms[cols[ca].term].width();
                    let wb = spec.terms[cols[cb].term].width();
                    for da in 0..wa {
                        for db in 0..wb {
                            coords.push((ba + da, bb + db));
                        }
                    }
                }
            }
        }
        let pattern = SymmetricPattern::new(q, coords);
        let mut ztz = vec![0.0; pattern.nnz()];
        let mut ztx = DMatrix::zeros(q, p);
        let mut zty = vec![0.0; q];
        for (i, r) in rows.iter().enumerate() {
            for (a, &(ca, va)) in r.iter().enumerate() {
                for &(cb, vb) in &r[a..] {
                    let pos = pattern.position(ca, cb).expect("pattern covers Z'Z");
                    ztz[pos] += va * vb;
                }
                for c in 0..p {
                    ztx[(ca, c)] += va * spec.x[(i, c)];
                }
                zty[ca] += va * spec.y[i];
            }
        }
        let contrib = pattern
            .entries()
            .iter()
            .map(|&(i, j)| {
                let mut v = Vec::new();
                let bi = i - cols[i].offset;
                let bj = j - cols[j].offset;
                let wi = spec.terms[cols[i].term].width();
                let wj = spec.terms[cols[j].term].width();
                for k in bi + cols[i].offset..bi + wi {
                    for l in bj + cols[j].offset..bj + wj {
                        if let Some(pos) = pattern.position(k, l) {
                            v.push((pos, k, l));
                        }
                    }
                }
                v
            })
            .collect();
        let symbolic = SymbolicCholesky::analyze(&pattern);
        let xtx = spec.x.transpose() * &spec.x;
        let xty = spec.x.transpose() * DVector::from_column_slice(&spec.y);
        Ok(Self { spec, n, p, q, cols, term_start, pattern, symbolic, ztz, contrib, ztx, zty, xtx, xty })
    }

    /// Block lower-triangular factor entries `L[(offset_k, offset_i)]` for
    /// term `t`.
    fn lambda_block(&self, t: usize, th: &[f64]) -> [[f64; 2]; 2] {
        let term = &self.spec.terms[t];
        if term.correlated {
            [[th[0].exp(), 0.0], [th[1], th[2].exp()]]
        } else if term.width() == 2 {
            [[th[0].exp(), 0.0], [0.0, th[1].exp()]]
        } else {
            [[th[0].exp(), 0.0], [0.0, 0.0]]
        }
    }

    fn theta_slices<'b>(&self, theta: &'b [f64]) -> Vec<&'b [f64]> {
        let mut out = Vec::new();
        let mut at = 0;
        for term in &self.spec.terms {
            out.push(&theta[at..at + term.n_theta()]);
            at += term.n_theta();
        }
        out
    }

    /// Λ entry `Λ[k, i]` (row k, column i), nonzero within a block only.
    fn lam(&self, blocks: &[[[f64; 2]; 2]], k: usize, i: usize) -> f64 {
        let (ck, ci) = (self.cols[k], self.cols[i]);
        if ck.term != ci.term || k - ck.offset != i - ci.offset {
            return 0.0;
        }
        blocks[ck.term][ck.offset][ci.offset]
    }

    /// `Λᵀ v` for a dense vector.
    fn lambda_t(&self, blocks: &[[[f64; 2]; 2]], v: &[f64]) -> Vec<f64> {
        (0..self.q)
            .map(|i| {
                let w = self.spec.terms[self.cols[i].term].width();
                let b = i - self.cols[i].offset;
                (b + self.cols[i].offset..b + w).map(|k| self.lam(blocks, k, i) * v[k]).sum()
            })
            .collect()
    }

    fn lambda(&self, blocks: &[[[f64; 2]; 2]], u: &[f64]) -> Vec<f64> {
        (0..self.q)
            .map(|k| {
                let b = k - self.cols[k].offset;
                (b..=k).map(|i| self.lam(blocks, k, i) * u[i]).sum()
            })
            .collect()
    }

    /// Per-parameter `Λ⁻¹ ∂Λ/∂θ` within one level block of term `t`.
    fn dlambda(&self, t: usize, th: &[f64]) -> Vec<[[f64; 2]; 2]> {
        let term = &self.spec.terms[t];
        if term.correlated {
            let (l21, l22) = (th[1], th[2].exp());
            vec![[[1.0, 0.0], [-l21 / l22, 0.0]], [[0.0, 0.0], [1.0 / l22, 0.0]], [[0.0, 0.0], [0.0, 1.0]]]
        } else if term.width() == 2 {
            vec![[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]]
        } else {
            vec![[[1.0, 0.0], [0.0, 0.0]]]
        }
    }

    /// Profiled deviance; with `grad`, also its gradient
    /// `2 tr(Λ⁻¹D) − 2 tr(M⁻¹₁₁ Λ⁻¹D) − 2 df ũᵀΛ⁻¹Dũ / r²` per parameter,
    /// where `M` is the augmented system over `(u, β)`.
    fn eval(&self, theta: &[f64], grad: Option<&mut [f64]>) -> Option<Eval> {
        let (n, p) = (self.n as f64, self.p);
        let slices = self.theta_slices(theta);
        let blocks: Vec<[[f64; 2]; 2]> = (0..self.spec.terms.len()).map(|t| self.lambda_block(t, slices[t])).collect();
        let values: Vec<f64> = self
            .pattern
            .entries()
            .iter()
            .zip(&self.contrib)
            .map(|(&(i, j), c)| {
                let mut v: f64 = c
                    .iter()
                    .map(|&(pos, k, l)| self.lam(&blocks, k, i) * self.ztz[pos] * self.lam(&blocks, l, j))
                    .sum();
                if i == j {
                    v += 1.0;
                }
                v
            })
            .collect();
        let chol = self.symbolic.factor(&values).ok()?;
        let mut rzx = DMatrix::zeros(self.q, p);
        for c in 0..p {
            let col: Vec<f64> = self.ztx.column(c).iter().copied().collect();
            let f = chol.forward(&self.lambda_t(&blocks, &col));
            rzx.set_column(c, &DVector::from_vec(f));
        }
        let cu = chol.forward(&self.lambda_t(&blocks, &self.zty));
        let cu_v = DVector::from_column_slice(&cu);
        let xtx_s = &self.xtx - rzx.transpose() * &rzx;
        let rx = xtx_s.clone().cholesky()?;
        let rhs = &self.xty - rzx.transpose() * &cu_v;
        let beta = rx.solve(&rhs);
        let u_tilde = chol.backward(&(cu_v - &rzx * &beta).as_slice().to_vec());
        let b = self.lambda(&blocks, &u_tilde);
        let xb = &self.spec.x * &beta;
        let mut r2: f64 = u_tilde.iter().map(|u| u * u).sum();
        for i in 0..self.n {
            let mut fit = xb[i];
            for (t, term) in self.spec.terms.iter().enumerate() {
                let base = self.term_start[t] + term.group[i] * term.width();
                let mut o = 0;
                if term.intercept {
                    fit += b[base];
                    o = 1;
                }
                if let Some(x) = &term.slope {
                    fit += b[base + o] * x[i];
                }
            }
            let e = self.spec.y[i] - fit;
            r2 += e * e;
        }
        let log_det_rx: f64 = rx.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let df = n - p as f64;
        let deviance =
            chol.log_det() + log_det_rx + df * (1.0 + (2.0 * std::f64::consts::PI * r2.max(1e-300) / df).ln());
        if let Some(g) = grad {
            let sel = chol.selected_inverse();
            // V Vᵀ = A⁻¹B S⁻¹ BᵀA⁻¹ with B = ΛᵀZᵀX.
            let mut aib = DMatrix::zeros(self.q, p);
            for c in 0..p {
                let col: Vec<f64> = rzx.column(c).iter().copied().collect();
                aib.set_column(c, &DVector::from_vec(chol.backward(&col)));
            }
            let vt = rx.l().solve_lower_triangular(&aib.transpose())?;
            let minv = |i: usize, j: usize| -> f64 {
                sel.get(i, j).unwrap_or(0.0) + (0..p).map(|c| vt[(c, i)] * vt[(c, j)]).sum::<f64>()
            };
            let mut k = 0;
            for (t, term) in self.spec.terms.iter().enumerate() {
                let w = term.width();
                for d in self.dlambda(t, slices[t]) {
                    let tr: f64 = (0..w).map(|a| d[a][a]).sum();
                    let (mut tm, mut quad) = (0.0, 0.0);
                    for l in 0..term.n_levels {
                        let b0 = self.term_start[t] + l * w;
                        for a in 0..w {
                            for c in 0..w {
                                if d[c][a] != 0.0 {
                                    tm += minv(b0 + a, b0 + c) * d[c][a];
                                }
                                quad += u_tilde[b0 + a] * d[a][c] * u_tilde[b0 + c];
                            }
                        }
                    }
                    g[k] = 2.0 * (tr * term.n_levels as f64 - tm) - 2.0 * df * quad / r2.max(1e-300);
                    k += 1;
                }
            }
        }
        let inv = rx.inverse();
        Some(Eval { deviance, beta, r2, rx_inv_t_rx_inv: inv })
    }
}

fn validate(spec: &MixedSpec) -> Result<(), MixedError> {
    let n = spec.y.len();
    let p = spec.x.ncols();
    if spec.x.nrows() != n {
        return Err(MixedError::Dimension { what: "fixed design rows".into(), got: spec.x.nrows(), want: n });
    }
    if spec.fixed_names.len() != p {
        return Err(MixedError::Dimension { what: "fixed names".into(), got: spec.fixed_names.len(), want: p });
    }
    if n <= p {
        return Err(MixedError::TooFewObservations { n, p });
    }
    if spec.y.iter().any(|v| !v.is_finite()) || spec.x.iter().any(|v| !v.is_finite()) {
        return Err(MixedError::NonFinite("response or fixed design".into()));
    }
    for t in &spec.terms {
        if t.group.len() != n {
            return Err(MixedError::Dimension { what: format!("term {}", t.name), got: t.group.len(), want: n });
        }
        if t.n_levels < 2 {
            return Err(MixedError::TooFewLevels(t.name.clone()));
        }
        if let Some(x) = &t.slope {
            if x.len() != n {
                return Err(MixedError::Dimension { what: format!("slope of {}", t.name), got: x.len(), want: n });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(MixedError::NonFinite(format!("slope of {}", t.name)));
            }
        }
        if !t.intercept && t.slope.is_none() {
            return Err(MixedError::Dimension { what: format!("components of {}", t.name), got: 0, want: 1 });
        }
    }
    let sv = spec.x.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 || sv.min() < 1e-10 * max {
        return Err(MixedError::RankDeficient);
    }
    Ok(())
}

/// Fit by profiled REML over log relative standard deviations.
///
/// The deviance is `log|L|² + log|R_X|² + (n−p)(1 + log(2π r²/(n−p)))` with
/// `LLᵀ = ΛᵀZᵀZΛ + I`; `σ² = r²/(n−p)`.
pub fn fit_reml(spec: &MixedSpec) -> Result<MixedFit, MixedError> {
    validate(spec)?;
    let prob = Problem::new(spec)?;
    let n_theta: usize = spec.terms.iter().map(RandomTerm::n_theta).sum();
    let mut lo = Vec::with_capacity(n_theta);
    let mut hi = Vec::with_capacity(n_theta);
    let mut x0 = Vec::with_capacity(n_theta);
    for t in &spec.terms {
        if t.correlated {
            lo.extend([LOG_THETA_MIN, -1e4, LOG_THETA_MIN]);
            hi.extend([LOG_THETA_MAX, 1e4, LOG_THETA_MAX]);
            x0.extend([0.0, 0.0, 0.0]);
        } else {
            for _ in 0..t.width() {
                lo.push(LOG_THETA_MIN);
                hi.push(LOG_THETA_MAX);
                x0.push(0.0);
            }
        }
    }
    let ols = prob.eval(&vec![LOG_THETA_MIN; n_theta], None).ok_or(MixedError::RankDeficient)?;
    let yy: f64 = spec.y.iter().map(|v| v * v).sum();
    let degenerate = ols.r2 <= 1e-24 * yy.max(1.0);
    let (theta, converged, iterations) = if n_theta == 0 || degenerate {
        (vec![LOG_THETA_MIN; n_theta], true, 0)
    } else {
        let opts = BfgsOptions { max_iter: 1000, grad_tol: 1e-6, f_rel_tol: 0.0 };
        let res = optim::minimize(
            |x, g| prob.eval(x, Some(g)).map(|e| e.deviance).unwrap_or(f64::INFINITY),
            &x0,
            &lo,
            &hi,
            &opts,
        );
        let converged = res.converged || optim::projected_grad_norm(&res.x, &res.grad, &lo, &hi) < 1e-3;
        (res.x, converged, res.iterations)
    };
    let ev = prob.eval(&theta, None).ok_or(MixedError::RankDeficient)?;
    let df = (prob.n - prob.p) as f64;
    let sigma2 = if degenerate { 0.0 } else { ev.r2 / df };
    let se = (0..prob.p).map(|i| (sigma2 * ev.rx_inv_t_rx_inv[(i, i)]).max(0.0).sqrt()).collect();
    let mut terms = Vec::new();
    let mut singular = degenerate && n_theta > 0;
    for (t, sl) in spec.terms.iter().zip(prob.theta_slices(&theta)) {
        let (mut vi, mut vs, mut cov) = (None, None, None);
        if t.correlated {
            let (l11, l21, l22) = (sl[0].exp(), sl[1], sl[2].exp());
            vi = Some(sigma2 * l11 * l11);
            vs = Some(sigma2 * (l21 * l21 + l22 * l22));
            cov = Some(sigma2 * l11 * l21);
            singular |= l11 * l11 < SINGULAR_RATIO || l22 * l22 < SINGULAR_RATIO;
        } else {
            let mut k = 0;
            if t.intercept {
                vi = Some(sigma2 * (2.0 * sl[0]).exp());
                singular |= (2.0 * sl[0]).exp() < SINGULAR_RATIO;
                k = 1;
            }
            if t.slope.is_some() {
                vs = Some(sigma2 * (2.0 * sl[k]).exp());
                singular |= (2.0 * sl[k]).exp() < SINGULAR_RATIO;
            }
        }
        terms.push(TermVariance { name: t.name.clone(), intercept: vi, slope: vs, covariance: cov });
    }
    if degenerate {
        for t in &mut terms {
            t.intercept = t.intercept.map(|_| 0.0);
            t.slope = t.slope.map(|_| 0.0);
            t.covariance = t.covariance.map(|_| 0.0);
        }
    }
    Ok(MixedFit {
        fixed_names: spec.fixed_names.clone(),
        beta: ev.beta.iter().copied().collect(),
        se,
        terms,
        residual: sigma2,
        reml: ev.deviance,
        converged,
        singular,
        iterations,
        n_obs: prob.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{normal, seeded_rng};
    use proptest::prelude::*;

    fn one_way(groups: usize, per: usize, su: f64, se: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = seeded_rng(seed);
        let mut y = Vec::new();
        let mut g = Vec::new();
        for k in 0..groups {
            let u = su.sqrt() * normal::draw(&mut rng);
            for _ in 0..per {
                y.push(10.0 + u + se.sqrt() * normal::draw(&mut rng));
                g.push(k);
            }
        }
        (y, g)
    }

    fn anova(y: &[f64], groups: usize, per: usize) -> (f64, f64) {
        let grand = y.iter().sum::<f64>() / y.len() as f64;
        let means: Vec<f64> = (0..groups).map(|k| y[k * per..(k + 1) * per].iter().sum::<f64>() / per as f64).collect();
        let msb = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() * per as f64 / (groups - 1) as f64;
        let msw = (0..groups)
            .map(|k| y[k * per..(k + 1) * per].iter().map(|v| (v - means[k]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (groups * (per - 1)) as f64;
        ((msb - msw) / per as f64, msw)
    }

    #[test]
    fn recovers_one_way_variance() {
        let (y, g) = one_way(200, 10, 4.0, 1.0, 11);
        let spec = MixedSpec::new(y).with_term(RandomTerm::intercept("g", &g));
        let fit = fit_reml(&spec).unwrap();
        let su = fit.terms[0].intercept.unwrap();
        assert!((su - 4.0).abs() < 0.6, "{su}");
        assert!((fit.residual - 1.0).abs() < 0.1);
        assert!(fit.converged && !fit.singular);
    }

    #[test]
    fn balanced_matches_anova() {
        let (y, g) = one_way(30, 6, 2.0, 1.0, 5);
        let (su, sw) = anova(&y, 30, 6);
        let fit = fit_reml(&MixedSpec::new(y).with_term(RandomTerm::intercept("g", &g))).unwrap();
        assert!((fit.terms[0].intercept.unwrap() - su).abs() < 1e-6, "{} {su}", fit.terms[0].intercept.unwrap());
        assert!((fit.residual - sw).abs() < 1e-6);
    }

    #[test]
    fn null_signal_is_singular() {
        // Group means forced equal: the between mean square is zero.
        let mut y = Vec::new();
        let mut g = Vec::new();
        for k in 0..20 {
            for j in 0..5 {
                y.push([-2.0, -1.0, 0.0, 1.0, 2.0][(j + k) % 5]);
                g.push(k);
            }
        }
        let fit = fit_reml(&MixedSpec::new(y).with_term(RandomTerm::intercept("g", &g))).unwrap();
        assert!(fit.terms[0].intercept.unwrap() < 1e-6);
        assert!(fit.singular);
    }

    #[test]
    fn fixed_only_is_ols() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 1.0 + 2.0 * v + ((i * 7) % 5) as f64 * 0.1).collect();
        let spec = MixedSpec::new(y.clone()).with_fixed("x", &x);
        let fit = fit_reml(&spec).unwrap();
        let xm = &spec.x;
        let b = (xm.transpose() * xm).try_inverse().unwrap() * xm.transpose() * DVector::from_vec(y);
        assert!((fit.beta[0] - b[0]).abs() < 1e-8 && (fit.beta[1] - b[1]).abs() < 1e-8);
    }

    #[test]
    fn rank_deficient_design_errors() {
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let spec = MixedSpec::new(y).with_fixed("one", &[1.0; 10]);
        assert!(matches!(fit_reml(&spec), Err(MixedError::RankDeficient)));
    }

    #[test]
    fn constant_response_has_zero_components() {
        let g: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let fit = fit_reml(&MixedSpec::new(vec![3.0; 40]).with_term(RandomTerm::intercept("g", &g))).unwrap();
        assert_eq!(fit.terms[0].intercept, Some(0.0));
        assert_eq!(fit.residual, 0.0);
        assert!((fit.beta[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn crossed_with_slopes_recovers_components() {
        let mut rng = seeded_rng(3);
        let (na, nb) = (40, 30);
        let ua: Vec<f64> = (0..na).map(|_| 2.0 * normal::draw(&mut rng)).collect();
        let ub: Vec<f64> = (0..nb).map(|_| normal::draw(&mut rng)).collect();
        let vb: Vec<f64> = (0..nb).map(|_| 0.5 * normal::draw(&mut rng)).collect();
        let (mut y, mut a, mut b, mut x) = (vec![], vec![], vec![], vec![]);
        for i in 0..na {
            for j in 0..nb {
                let xi = normal::draw(&mut rng);
                y.push(1.0 + 0.7 * xi + ua[i] + ub[j] + vb[j] * xi + 0.5 * normal::draw(&mut rng));
                a.push(i);
                b.push(j);
                x.push(xi);
            }
        }
        let spec = MixedSpec::new(y)
            .with_fixed("x", &x)
            .with_term(RandomTerm::intercept("A", &a))
            .with_term(RandomTerm::intercept("B", &b).with_slope(x.clone(), false));
        let fit = fit_reml(&spec).unwrap();
        let va = fit.terms[0].intercept.unwrap();
        let vbi = fit.terms[1].intercept.unwrap();
        let vbs = fit.terms[1].slope.unwrap();
        assert!((va - 4.0).abs() < 2.0, "{va}");
        assert!((vbi - 1.0).abs() < 0.7, "{vbi}");
        assert!((vbs - 0.25).abs() < 0.15, "{vbs}");
        assert!((fit.residual - 0.25).abs() < 0.05);
        assert!((fit.beta[1] - 0.7).abs() < 0.3);
    }

    #[test]
    fn correlated_term_fits() {
        let mut rng = seeded_rng(9);
        let (mut y, mut g, mut x) = (vec![], vec![], vec![]);
        for k in 0..60 {
            let u = normal::draw(&mut rng);
            let v = 0.8 * u + 0.3 * normal::draw(&mut rng);
            for _ in 0..8 {
                let xi = normal::draw(&mut rng);
                y.push(u + v * xi + 0.5 * normal::draw(&mut rng));
                g.push(k);
                x.push(xi);
            }
        }
        let spec =
            MixedSpec::new(y).with_fixed("x", &x).with_term(RandomTerm::intercept("g", &g).with_slope(x.clone(), true));
        let fit = fit_reml(&spec).unwrap();
        let t = &fit.terms[0];
        let corr = t.covariance.unwrap() / (t.intercept.unwrap() * t.slope.unwrap()).sqrt();
        assert!(corr > 0.7, "{corr}");
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = seeded_rng(17);
        let (mut y, mut a, mut b, mut x) = (vec![], vec![], vec![], vec![]);
        for i in 0..12 {
            for j in 0..7 {
                if (i + j) % 5 == 0 {
                    continue;
                }
                let xi = normal::draw(&mut rng);
                y.push(0.5 * xi + 0.3 * i as f64 - 0.2 * j as f64 + normal::draw(&mut rng));
                a.push(i);
                b.push(j);
                x.push(xi);
            }
        }
        let spec = MixedSpec::new(y)
            .with_fixed("x", &x)
            .with_term(RandomTerm::intercept("A", &a))
            .with_term(RandomTerm::intercept("B", &b).with_slope(x.clone(), false))
            .with_term(RandomTerm::intercept("AB", &a.iter().zip(&b).map(|(i, j)| i * 10 + j).collect::<Vec<_>>()))
            .with_term(
                RandomTerm::intercept("C", &a.iter().map(|i| i % 4).collect::<Vec<_>>()).with_slope(x.clone(), true),
            );
        let prob = Problem::new(&spec).unwrap();
        for theta in [
            vec![0.0; 8],
            vec![-0.7, 0.4, -1.2, 0.3, -0.5, 0.6, -0.8, 0.2],
            vec![-3.0, 1.0, -2.0, -4.0, 0.5, -1.5, 1.3, -2.5],
        ] {
            let mut g = vec![0.0; 8];
            prob.eval(&theta, Some(&mut g)).unwrap();
            let mut gn = vec![0.0; 8];
            optim::numeric_gradient(|t| prob.eval(t, None).unwrap().deviance, &theta, 1e-6, &mut gn);
            for k in 0..8 {
                assert!((g[k] - gn[k]).abs() < 1e-5 * gn[k].abs().max(1.0), "param {k}: {} vs {}", g[k], gn[k]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn relabeling_invariant(seed in 0u64..1000, shift in 1usize..11) {
            let (y, g) = one_way(12, 4, 1.0, 1.0, seed);
            let relabeled: Vec<usize> = g.iter().map(|k| (k * 5 + shift) % 12 + 100).collect();
            let f1 = fit_reml(&MixedSpec::new(y.clone()).with_term(RandomTerm::intercept("g", &g))).unwrap();
            let f2 = fit_reml(&MixedSpec::new(y).with_term(RandomTerm::intercept("g", &relabeled))).unwrap();
            prop_assert!((f1.terms[0].intercept.unwrap() - f2.terms[0].intercept.unwrap()).abs() < 1e-6);
            prop_assert!((f1.reml - f2.reml).abs() < 1e-8);
        }
    }
}
