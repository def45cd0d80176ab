//! Bivariate standard normal distribution function.
//!
//! Genz's refinement of the Drezner-Wesolowsky method: Gauss-Legendre
//! integration of the Plackett identity for |ρ| < 0.925 and an asymptotic
//! expansion plus correction integral otherwise. Absolute error is of order
//! 1e-15 over the whole parameter range.

use super::normal::cdf;
use super::quad::gauss_legendre;
use std::f64::consts::PI;
use std::sync::OnceLock;

struct Rules {
    // Half-rules (negative nodes only) for 6, 12 and 20 points.
    rules: [(Vec<f64>, Vec<f64>); 3],
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| {
        let half = |n: usize| {
            let (x, w) = gauss_legendre(n);
            (x[..n / 2].to_vec(), w[..n / 2].to_vec())
        };
        Rules { rules: [half(6), half(12), half(20)] }
    })
}

/// Upper orthant probability `P(X > h, Y > k)` with correlation `r`.
pub fn upper(h: f64, k: f64, r: f64) -> f64 {
    let rule = if r.abs() < 0.3 {
        &rules().rules[0]
    } else if r.abs() < 0.75 {
        &rules().rules[1]
    } else {
        &rules().rules[2]
    };
    let (xs, ws) = (&rule.0, &rule.1);
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for (x, w) in xs.iter().zip(ws) {
            for s in [-1.0, 1.0] {
                let sn = (asr * (1.0 + s * x) / 2.0).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / (4.0 * PI) + cdf(-h) * cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            bvn = a
                * (-(bs / as_ + hk) / 2.0).exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            if hk > -160.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * (2.0 * PI).sqrt()
                    * cdf(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for (x, w) in xs.iter().zip(ws) {
                for s in [-1.0, 1.0] {
                    let xs2 = (a * (s * x + 1.0)).powi(2);
                    let rs = (1.0 - xs2).sqrt();
                    let asr = -(bs / xs2 + hk) / 2.0;
                    if asr > -100.0 {
                        bvn += a
                            * w
                            * asr.exp()
                            * ((-hk * xs2 / (2.0 * (1.0 + rs).powi(2))).exp() / rs - (1.0 + c * xs2 * (1.0 + d * xs2)));
                    }
                }
            }
            bvn = -bvn / (2.0 * PI);
        }
        if r > 0.0 {
            bvn += cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 { cdf(k) - cdf(h) } else { cdf(-h) - cdf(-k) };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Lower orthant probability `P(X ≤ h, Y ≤ k)` with correlation `r`.
#[inline]
pub fn lower(h: f64, k: f64, r: f64) -> f64 {
    upper(-h, -k, r)
}

/// Bivariate standard normal density.
pub fn pdf(h: f64, k: f64, r: f64) -> f64 {
    let om = 1.0 - r * r;
    (-(h * h - 2.0 * r * h * k + k * k) / (2.0 * om)).exp() / (2.0 * PI * om.sqrt())
}
