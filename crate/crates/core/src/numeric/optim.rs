//! Box-constrained BFGS.
//!
//! Iterates are projected onto the box after every line-search trial.
//! Coordinates sitting on a bound whose gradient points outward are frozen
//! for the step, and the inverse-Hessian approximation is reset whenever the
//! masked direction stops being a descent direction.

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence when the ∞-norm of the projected gradient drops below this.
    pub grad_tol: f64,
    /// Optional relative function-change stop (0 disables).
    pub f_rel_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-6, f_rel_tol: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// ∞-norm of `x − P(x − g)`.
pub fn projected_grad_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter().zip(g).enumerate().map(|(i, (xi, gi))| (xi - (xi - gi).clamp(lo[i], hi[i])).abs()).fold(0.0, f64::max)
}

/// Minimize `f` over the box `[lo, hi]`. The closure returns the objective
/// and writes the gradient into its second argument.
pub fn minimize<F>(mut fg: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    assert!(lo.len() == n && hi.len() == n);
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut [f64], scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut h, 1.0);
    let mut fresh = true;

    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = projected_grad_norm(&x, &g, lo, hi) < opts.grad_tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let active: Vec<bool> =
            (0..n).map(|i| (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)).collect();
        let dir = |h: &[f64], d: &mut [f64]| {
            for i in 0..n {
                d[i] = if active[i] {
                    0.0
                } else {
                    -(0..n).filter(|&j| !active[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>()
                };
            }
        };
        dir(&h, &mut d);
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            reset(&mut h, 1.0);
            fresh = true;
            dir(&h, &mut d);
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }
        // Projected backtracking (Armijo on the actual displacement). A step
        // must strictly lower f, so a search at the rounding floor fails.
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut fnew = f;
        for _ in 0..60 {
            for i in 0..n {
                xn[i] = x[i] + alpha * d[i];
            }
            project(&mut xn, lo, hi);
            fnew = fg(&xn, &mut gn);
            let dec: f64 = (0..n).map(|i| g[i] * (xn[i] - x[i])).sum();
            if fnew.is_finite() && fnew < f && fnew <= f + 1e-4 * dec {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if fresh {
                break;
            }
            reset(&mut h, 1.0);
            fresh = true;
            continue;
        }
        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let f_old = f;
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        f = fnew;
        if sy > 1e-12 * s.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt() {
            if fresh {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                reset(&mut h, sy / yy);
                fresh = false;
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        converged = projected_grad_norm(&x, &g, lo, hi) < opts.grad_tol;
        if !converged && opts.f_rel_tol > 0.0 && (f_old - f).abs() <= opts.f_rel_tol * f.abs().max(1.0) {
            converged = true;
        }
    }
    BfgsResult { x, f, grad: g, iterations, converged }
}

/// Central-difference gradient.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64, g: &mut [f64]) {
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
}
