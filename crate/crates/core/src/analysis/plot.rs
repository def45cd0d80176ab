use super::AnalysisError;
use crate::numeric::{median, normal};
use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

pub const BIWEIGHT_C: f64 = 4.685;
const HUBER_K: f64 = 1.345;
const MAD_CONSISTENCY: f64 = 0.6745;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustLine {
    pub intercept: f64,
    pub slope: f64,
    /// Sandwich covariance of (intercept, slope).
    pub cov: [[f64; 2]; 2],
    /// Final MAD residual scale.
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RobustLine {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Pointwise 95% band half-width at `x`.
    pub fn half_width(&self, x: f64) -> f64 {
        let v = self.cov[0][0] + 2.0 * x * self.cov[0][1] + x * x * self.cov[1][1];
        1.959963984540054 * v.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub group: Option<String>,
    pub fitted: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPlot {
    pub points: Vec<PlotPoint>,
    pub line: RobustLine,
}

/// Affine map of `v` onto `[lo, hi]`; a constant vector maps to `lo`.
pub fn min_max(v: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mn = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx <= mn {
        return vec![lo; v.len()];
    }
    v.iter().map(|x| if *x == mx { hi } else { lo + (hi - lo) * (x - mn) / (mx - mn) }).collect()
}

fn wls(x: &[f64], y: &[f64], w: &[f64]) -> Option<(f64, f64)> {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        sw += wi;
        sx += wi * xi;
        sy += wi * yi;
        sxx += wi * xi * xi;
        sxy += wi * xi * yi;
    }
    let det = sw * sxx - sx * sx;
    if sw <= 0.0 || det.abs() <= 1e-14 * sw * sxx.max(1e-300) {
        return None;
    }
    let slope = (sw * sxy - sx * sy) / det;
    Some(((sy - slope * sx) / sw, slope))
}

fn mad_scale(r: &[f64]) -> f64 {
    median(&r.iter().map(|v| v.abs()).collect::<Vec<f64>>()) / MAD_CONSISTENCY
}

fn biweight_weight(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - u * u).powi(2)
    }
}

/// Tukey-biweight M-estimate of a line by IRLS with MAD scale re-estimated
/// each iteration. Starts from Huber IRLS to avoid the least-squares basin
/// when outliers are gross.
pub fn tukey_biweight_line(x: &[f64], y: &[f64], c: f64, max_iter: usize) -> Result<RobustLine, AnalysisError> {
    let n = x.len();
    if n != y.len() {
        return Err(AnalysisError::LengthMismatch { left: n, right: y.len() });
    }
    if n < 3 {
        return Err(AnalysisError::TooFew { need: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let ones = vec![1.0; n];
    let (mut a, mut b) = wls(x, y, &ones).ok_or(AnalysisError::Degenerate("x has no spread".into()))?;
    let resid = |a: f64, b: f64| -> Vec<f64> { x.iter().zip(y).map(|(xi, yi)| yi - a - b * xi).collect() };
    for _ in 0..20 {
        let r = resid(a, b);
        let s = mad_scale(&r);
        if s <= 0.0 {
            break;
        }
        let w: Vec<f64> = r.iter().map(|ri| (HUBER_K * s / ri.abs()).min(1.0)).collect();
        match wls(x, y, &w) {
            Some(v) => (a, b) = v,
            None => break,
        }
    }
    let mut converged = false;
    let mut iterations = 0;
    let mut s = 0.0;
    for it in 0..max_iter {
        iterations = it + 1;
        let r = resid(a, b);
        s = mad_scale(&r);
        if s <= 0.0 {
            converged = true;
            break;
        }
        let w: Vec<f64> = r.iter().map(|ri| biweight_weight(ri / (c * s))).collect();
        let Some((na, nb)) = wls(x, y, &w) else { break };
        let delta = (na - a).abs().max((nb - b).abs());
        (a, b) = (na, nb);
        if delta <= 1e-10 * (1.0 + a.abs().max(b.abs())) {
            converged = true;
            break;
        }
    }
    let r = resid(a, b);
    if s > 0.0 {
        s = mad_scale(&r);
    }
    let cov = if s > 0.0 {
        let mut psi2 = 0.0;
        let mut dpsi = 0.0;
        let mut xtx = Matrix2::zeros();
        for (xi, ri) in x.iter().zip(&r) {
            let u = ri / (c * s);
            if u.abs() < 1.0 {
                let ps = u * (1.0 - u * u).powi(2);
                psi2 += ps * ps;
                dpsi += (1.0 - u * u) * (1.0 - 5.0 * u * u);
            }
            let v = Vector2::new(1.0, *xi);
            xtx += v * v.transpose();
        }
        let nf = n as f64;
        let k = (c * s).powi(2) * (psi2 / (nf - 2.0)) / (dpsi / nf).powi(2);
        let inv = xtx.try_inverse().unwrap_or_else(Matrix2::zeros);
        let m = inv * k;
        [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
    } else {
        [[0.0; 2]; 2]
    };
    Ok(RobustLine { intercept: a, slope: b, cov, scale: s, iterations, converged })
}

/// Log-log scaling plot data. Latent scores go through `Φ` first; scores
/// are then min-max scaled to `[1, 100]` and `log10`-transformed. `x` is
/// already on the log-size scale.
pub fn scaling_plot_data(
    scores: &[f64],
    x: &[f64],
    groups: Option<&[String]>,
    latent: bool,
) -> Result<ScalingPlot, AnalysisError> {
    if scores.len() != x.len() {
        return Err(AnalysisError::LengthMismatch { left: scores.len(), right: x.len() });
    }
    if let Some(g) = groups {
        if g.len() != x.len() {
            return Err(AnalysisError::LengthMismatch { left: g.len(), right: x.len() });
        }
    }
    if scores.len() < 3 {
        return Err(AnalysisError::TooFew { need: 3, got: scores.len() });
    }
    if scores.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let s: Vec<f64> = if latent { scores.iter().map(|v| normal::cdf(*v)).collect() } else { scores.to_vec() };
    let y: Vec<f64> = min_max(&s, 1.0, 100.0).iter().map(|v| v.log10()).collect();
    let line = tukey_biweight_line(x, &y, BIWEIGHT_C, 50)?;
    let points = x
        .iter()
        .zip(&y)
        .enumerate()
        .map(|(i, (xi, yi))| {
            let f = line.predict(*xi);
            let h = line.half_width(*xi);
            PlotPoint { x: *xi, y: *yi, group: groups.map(|g| g[i].clone()), fitted: f, lower: f - h, upper: f + h }
        })
        .collect();
    Ok(ScalingPlot { points, line })
}
