use super::{CfaError, THETA_FLOOR};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructureKind {
    #[serde(rename = "indepfact")]
    IndepFact,
    #[serde(rename = "gfact")]
    GFact,
    #[serde(rename = "hier2ord")]
    Hier2Ord,
    #[serde(rename = "corrfact")]
    CorrFact,
    #[serde(rename = "bifact")]
    BiFact,
    #[serde(rename = "corrbifact")]
    CorrBiFact,
}

impl StructureKind {
    pub const ALL: [StructureKind; 6] = [
        StructureKind::IndepFact,
        StructureKind::GFact,
        StructureKind::Hier2Ord,
        StructureKind::CorrFact,
        StructureKind::BiFact,
        StructureKind::CorrBiFact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StructureKind::IndepFact => "indepfact",
            StructureKind::GFact => "gfact",
            StructureKind::Hier2Ord => "hier2ord",
            StructureKind::CorrFact => "corrfact",
            StructureKind::BiFact => "bifact",
            StructureKind::CorrBiFact => "corrbifact",
        }
    }

    /// Whether the structure uses the item-to-benchmark map.
    pub fn uses_benchmarks(self) -> bool {
        self != StructureKind::GFact
    }

    /// Whether the first factor column is a general factor.
    pub fn has_general(self) -> bool {
        matches!(
            self,
            StructureKind::GFact | StructureKind::Hier2Ord | StructureKind::BiFact | StructureKind::CorrBiFact
        )
    }
}

impl std::fmt::Display for StructureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StructureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        StructureKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown structure `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PhiSpec {
    /// Orthogonal unit-variance factors.
    Identity,
    /// Free correlations among the listed factor columns; all others are
    /// orthogonal.
    FreeCorrelation { factors: Vec<usize> },
    /// Column 0 is a second-order factor `g`, columns `1..=K` are first-order
    /// factors with `Cov(f) = γγᵀ + Δ`, `Δ = diag(1 − γ²)`, `Cov(g, f) = γ`.
    SecondOrder,
}

/// Constraint pattern of one structure over `p` items and `K` benchmarks.
///
/// Free parameters are laid out as loadings, then factor-covariance
/// parameters (correlations in `(k < l)` order, or `γ`), then residual
/// covariances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureSpec {
    pub kind: StructureKind,
    pub p: usize,
    pub k: usize,
    pub m: usize,
    pub bench_of: Vec<usize>,
    /// Free loading entries `(item, factor column)`.
    pub loadings: Vec<(usize, usize)>,
    pub phi: PhiSpec,
    /// Free residual covariances `(a, b)` with `a < b`.
    pub free_resid: Vec<(usize, usize)>,
    pub factor_names: Vec<String>,
    pub bench_names: Vec<String>,
}

impl StructureSpec {
    /// Builds the pattern of `kind` for items mapped to benchmarks
    /// `bench_of[j] ∈ 0..bench_names.len()`.
    pub fn new(kind: StructureKind, bench_of: &[usize], bench_names: &[String]) -> Result<Self, CfaError> {
        let p = bench_of.len();
        let k = bench_names.len();
        if p < 2 {
            return Err(CfaError::Structure { need: "at least 2 items".into(), have: format!("{p}") });
        }
        if bench_of.iter().any(|&b| b >= k) {
            return Err(CfaError::Invalid("benchmark index out of range".into()));
        }
        let needs_k = match kind {
            StructureKind::GFact | StructureKind::IndepFact => 1,
            StructureKind::CorrFact | StructureKind::BiFact => 2,
            StructureKind::Hier2Ord | StructureKind::CorrBiFact => 3,
        };
        if kind.uses_benchmarks() && k < needs_k {
            return Err(CfaError::Structure { need: format!("{needs_k} benchmarks for {kind}"), have: format!("{k}") });
        }
        let mut names = Vec::new();
        if kind.has_general() {
            names.push("g".to_string());
        }
        if kind != StructureKind::GFact {
            names.extend(bench_names.iter().cloned());
        }
        let m = names.len();
        let off = usize::from(kind.has_general());
        let mut loadings = Vec::new();
        for (j, &b) in bench_of.iter().enumerate() {
            match kind {
                StructureKind::GFact => loadings.push((j, 0)),
                StructureKind::IndepFact | StructureKind::CorrFact | StructureKind::Hier2Ord => {
                    loadings.push((j, off + b))
                }
                StructureKind::BiFact | StructureKind::CorrBiFact => {
                    loadings.push((j, 0));
                    loadings.push((j, 1 + b));
                }
            }
        }
        let phi = match kind {
            StructureKind::IndepFact | StructureKind::GFact | StructureKind::BiFact => PhiSpec::Identity,
            StructureKind::CorrFact => PhiSpec::FreeCorrelation { factors: (0..k).collect() },
            StructureKind::CorrBiFact => PhiSpec::FreeCorrelation { factors: (1..=k).collect() },
            StructureKind::Hier2Ord => PhiSpec::SecondOrder,
        };
        Ok(Self {
            kind,
            p,
            k,
            m,
            bench_of: bench_of.to_vec(),
            loadings,
            phi,
            free_resid: Vec::new(),
            factor_names: names,
            bench_names: bench_names.to_vec(),
        })
    }

    /// Same structure with additional free residual covariances.
    pub fn with_free_resid(mut self, pairs: &[(usize, usize)]) -> Self {
        for &(a, b) in pairs {
            let pr = (a.min(b), a.max(b));
            if pr.0 != pr.1 && !self.free_resid.contains(&pr) {
                self.free_resid.push(pr);
            }
        }
        self
    }

    pub fn n_phi(&self) -> usize {
        match &self.phi {
            PhiSpec::Identity => 0,
            PhiSpec::FreeCorrelation { factors } => factors.len() * (factors.len() - 1) / 2,
            PhiSpec::SecondOrder => self.k,
        }
    }

    pub fn n_params(&self) -> usize {
        self.loadings.len() + self.n_phi() + self.free_resid.len()
    }

    /// Factor pairs `(k, l)` with a free correlation, in parameter order.
    pub fn corr_pairs(&self) -> Vec<(usize, usize)> {
        match &self.phi {
            PhiSpec::FreeCorrelation { factors } => {
                let mut v = Vec::new();
                for (x, &a) in factors.iter().enumerate() {
                    for &b in &factors[x + 1..] {
                        v.push((a, b));
                    }
                }
                v
            }
            _ => Vec::new(),
        }
    }

    /// Starting values: loadings 0.5, correlations 0.3, `γ = √0.3` so that
    /// implied first-order correlations start at 0.3, residual covariances 0.
    pub fn start(&self) -> Vec<f64> {
        let mut x = vec![0.5; self.loadings.len()];
        match &self.phi {
            PhiSpec::Identity => {}
            PhiSpec::FreeCorrelation { .. } => x.extend(std::iter::repeat_n(0.3, self.n_phi())),
            PhiSpec::SecondOrder => x.extend(std::iter::repeat_n(0.3f64.sqrt(), self.k)),
        }
        x.extend(std::iter::repeat_n(0.0, self.free_resid.len()));
        x
    }

    /// Box constraints: loadings free, correlations and `γ` in
    /// `[−0.999, 0.999]`, residual covariances in `[−0.999, 0.999]`.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nl = self.loadings.len();
        let rest = self.n_params() - nl;
        let mut lo = vec![f64::NEG_INFINITY; nl];
        let mut hi = vec![f64::INFINITY; nl];
        lo.extend(std::iter::repeat_n(-0.999, rest));
        hi.extend(std::iter::repeat_n(0.999, rest));
        (lo, hi)
    }

    /// Loading matrix, factor covariance and residual covariances from `x`.
    pub fn unpack(&self, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>), CfaError> {
        if x.len() != self.n_params() {
            return Err(CfaError::Dimension { got: x.len(), want: self.n_params() });
        }
        let mut lambda = DMatrix::zeros(self.p, self.m);
        for (&(j, c), &v) in self.loadings.iter().zip(x) {
            lambda[(j, c)] = v;
        }
        let rest = &x[self.loadings.len()..];
        let mut phi = DMatrix::identity(self.m, self.m);
        match &self.phi {
            PhiSpec::Identity => {}
            PhiSpec::FreeCorrelation { .. } => {
                for (&(a, b), &v) in self.corr_pairs().iter().zip(rest) {
                    phi[(a, b)] = v;
                    phi[(b, a)] = v;
                }
            }
            PhiSpec::SecondOrder => {
                let g = &rest[..self.k];
                for a in 0..self.k {
                    phi[(0, a + 1)] = g[a];
                    phi[(a + 1, 0)] = g[a];
                    for b in 0..self.k {
                        if a != b {
                            phi[(a + 1, b + 1)] = g[a] * g[b];
                        }
                    }
                }
            }
        }
        let resid = rest[self.n_phi()..].to_vec();
        Ok((lambda, phi, resid))
    }

    /// `Σ = ΛΦΛᵀ + Ψ + Θ` with `Θ_jj = max(1 − (ΛΦΛᵀ)_jj, THETA_FLOOR)`.
    pub fn sigma(&self, x: &[f64]) -> Result<DMatrix<f64>, CfaError> {
        let (lambda, phi, resid) = self.unpack(x)?;
        let mut s = &lambda * &phi * lambda.transpose();
        for (&(a, b), &v) in self.free_resid.iter().zip(&resid) {
            s[(a, b)] += v;
            s[(b, a)] += v;
        }
        for j in 0..self.p {
            let comm = s[(j, j)];
            s[(j, j)] = comm + (1.0 - comm).max(THETA_FLOOR);
        }
        Ok(s)
    }

    /// Residual variances `Θ_jj` implied by `x` (floored).
    pub fn theta(&self, x: &[f64]) -> Result<Vec<f64>, CfaError> {
        let (lambda, phi, _) = self.unpack(x)?;
        let lp = &lambda * &phi;
        Ok((0..self.p)
            .map(|j| {
                let comm: f64 = (0..self.m).map(|c| lp[(j, c)] * lambda[(j, c)]).sum();
                (1.0 - comm).max(THETA_FLOOR)
            })
            .collect())
    }
}

/// Model-implied correlation matrix for `spec` at `params`.
pub fn implied_sigma(spec: &StructureSpec, params: &[f64]) -> Result<DMatrix<f64>, CfaError> {
    spec.sigma(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|b| format!("b{b}")).collect()
    }

    #[test]
    fn dimensions_per_kind() {
        let bench_of = [0, 0, 1, 1, 2, 2];
        let want = [
            (StructureKind::IndepFact, 3, 6, 0),
            (StructureKind::GFact, 1, 6, 0),
            (StructureKind::Hier2Ord, 4, 6, 3),
            (StructureKind::CorrFact, 3, 6, 3),
            (StructureKind::BiFact, 4, 12, 0),
            (StructureKind::CorrBiFact, 4, 12, 3),
        ];
        for (kind, m, nl, nphi) in want {
            let s = StructureSpec::new(kind, &bench_of, &names(3)).unwrap();
            assert_eq!((s.m, s.loadings.len(), s.n_phi()), (m, nl, nphi), "{kind}");
            assert_eq!(kind.as_str().parse::<StructureKind>().unwrap(), kind);
        }
    }

    #[test]
    fn zero_loadings_give_identity() {
        let s = StructureSpec::new(StructureKind::BiFact, &[0, 0, 1, 1], &names(2)).unwrap();
        let x = vec![0.0; s.n_params()];
        assert_eq!(implied_sigma(&s, &x).unwrap(), DMatrix::identity(4, 4));
    }

    #[test]
    fn bifactor_cross_bench_covariance() {
        let s = StructureSpec::new(StructureKind::BiFact, &[0, 1], &names(2)).unwrap();
        // loadings: (0,g), (0,f0), (1,g), (1,f1)
        let x = [0.6, 0.4, 0.5, 0.7];
        let sig = implied_sigma(&s, &x).unwrap();
        assert!((sig[(0, 1)] - 0.30).abs() < 1e-15);
        let (_, phi, _) = s.unpack(&x).unwrap();
        assert_eq!(phi, DMatrix::identity(3, 3));
    }

    #[test]
    fn corrfact_cross_bench_covariance() {
        let s = StructureSpec::new(StructureKind::CorrFact, &[0, 1], &names(2)).unwrap();
        let sig = implied_sigma(&s, &[0.7, 0.7, 0.5]).unwrap();
        assert!((sig[(0, 1)] - 0.245).abs() < 1e-15);
    }

    #[test]
    fn second_order_factor_covariance() {
        let s = StructureSpec::new(StructureKind::Hier2Ord, &[0, 1, 2], &names(3)).unwrap();
        let x = [0.8, 0.7, 0.6, 0.9, 0.5, 0.4];
        let (_, phi, _) = s.unpack(&x).unwrap();
        assert!((phi[(1, 2)] - 0.45).abs() < 1e-15);
        assert!((phi[(0, 3)] - 0.4).abs() < 1e-15);
        assert_eq!(phi[(2, 2)], 1.0);
        let sig = implied_sigma(&s, &x).unwrap();
        assert!((sig[(0, 1)] - 0.8 * 0.7 * 0.45).abs() < 1e-15);
    }
}
