//! Synthetic-data oracle with fully known generating parameters.
//!
//! Every generator is deterministic in its seed. Normal variates use
//! [`normal::draw`](crate::numeric::normal::draw) on a ChaCha8 stream.
//! Parameter draws use stream `derive_seed(seed, 0)` and data draws use
//! stream `derive_seed(seed, 1)`, so changing N does not perturb the
//! parameters.

use crate::cfa::{StructureKind, StructureSpec};
use crate::data::{EcosystemMetadata, ModelMeta, ResponseMatrix, ScoreRow};
use crate::gtheory::TERMS;
use crate::irt::{irt_prob, IrtParams};
use crate::numeric::{derive_seed, normal, seeded_rng};
use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{0} is not positive semi-definite")]
    NotPsd(&'static str),
    #[error("invalid generator spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

fn bench_layout(bench_sizes: &[usize]) -> (Vec<usize>, Vec<String>, Vec<String>) {
    let mut bench_of = Vec::new();
    let mut items = Vec::new();
    for (k, &s) in bench_sizes.iter().enumerate() {
        for j in 0..s {
            bench_of.push(k);
            items.push(format!("b{k}_i{j}"));
        }
    }
    let names = (0..bench_sizes.len()).map(|k| format!("b{k}")).collect();
    (bench_of, items, names)
}

fn model_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("m{i:05}")).collect()
}

/// Cholesky factor of a PSD matrix, tolerating exact zeros on the diagonal.
fn psd_factor(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, SimError> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| *v < -1e-10) {
        return Err(SimError::NotPsd(what));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d)
}

/// Latent-response generator for CFA structures.
#[derive(Debug, Clone, Serialize)]
pub struct CfaGenSpec {
    pub kind: StructureKind,
    #[serde(skip)]
    pub lambda: DMatrix<f64>,
    #[serde(skip)]
    pub phi: DMatrix<f64>,
    /// Residual covariance; defaults to `diag(1 − λᵀΦλ)`.
    #[serde(skip)]
    pub theta: Option<DMatrix<f64>>,
    pub tau: Vec<f64>,
    pub n: usize,
    pub bench_of: Vec<usize>,
    pub bench_names: Vec<String>,
    pub item_ids: Vec<String>,
    pub seed: u64,
}

impl CfaGenSpec {
    /// Random truth for a structure: general loadings U(0.5, 0.75), specific
    /// U(0.35, 0.55), thresholds N(0, 0.5²); correlated specifics at 0.3,
    /// second-order loadings 0.7.
    pub fn structured(kind: StructureKind, bench_sizes: &[usize], n: usize, seed: u64) -> Result<Self, SimError> {
        let (bench_of, item_ids, bench_names) = bench_layout(bench_sizes);
        let spec = StructureSpec::new(kind, &bench_of, &bench_names).map_err(|e| SimError::Invalid(e.to_string()))?;
        let mut rng = seeded_rng(derive_seed(seed, 0));
        let p = bench_of.len();
        let general = kind.has_general();
        let mut lambda = DMatrix::zeros(p, spec.m);
        for &(j, c) in &spec.loadings {
            lambda[(j, c)] = if general && c == 0 { rng.random_range(0.5..0.75) } else { rng.random_range(0.35..0.55) };
        }
        let mut phi = DMatrix::identity(spec.m, spec.m);
        let off = usize::from(general);
        let k = bench_names.len();
        match kind {
            StructureKind::CorrFact | StructureKind::CorrBiFact => {
                for a in 0..k {
                    for b in 0..k {
                        if a != b {
                            phi[(a + off, b + off)] = 0.3;
                        }
                    }
                }
            }
            StructureKind::Hier2Ord => {
                for a in 0..k {
                    for b in 0..k {
                        if a != b {
                            phi[(a, b)] = 0.49;
                        }
                    }
                }
            }
            _ => {}
        }
        let tau = (0..p).map(|_| 0.5 * normal::draw(&mut rng)).collect();
        Ok(Self { kind, lambda, phi, theta: None, tau, n, bench_of, bench_names, item_ids, seed })
    }

    /// Adds residual covariance `ρ √(θ_aa θ_bb)` between items `a` and `b`.
    pub fn with_residual_correlation(mut self, a: usize, b: usize, rho: f64) -> Self {
        let mut th = self.residual_cov();
        let v = rho * (th[(a, a)] * th[(b, b)]).sqrt();
        th[(a, b)] = v;
        th[(b, a)] = v;
        self.theta = Some(th);
        self
    }

    pub fn residual_cov(&self) -> DMatrix<f64> {
        match &self.theta {
            Some(t) => t.clone(),
            None => {
                let p = self.lambda.nrows();
                let d = (0..p).map(|j| {
                    let l = self.lambda.row(j);
                    1.0 - (l * &self.phi * l.transpose())[(0, 0)]
                });
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(p, d))
            }
        }
    }

    /// Implied latent-response correlation `ΛΦΛᵀ + Θ`.
    pub fn implied(&self) -> DMatrix<f64> {
        &self.lambda * &self.phi * self.lambda.transpose() + self.residual_cov()
    }
}

/// Draw order per model: `m` factor normals, then `p` residual normals.
pub fn gen_cfa_data(spec: &CfaGenSpec) -> Result<ResponseMatrix, SimError> {
    let p = spec.lambda.nrows();
    let m = spec.lambda.ncols();
    if spec.phi.shape() != (m, m) || spec.tau.len() != p || spec.bench_of.len() != p {
        return Err(SimError::Invalid("dimension mismatch".into()));
    }
    let theta = spec.residual_cov();
    if (0..p).any(|j| theta[(j, j)] < 0.0) {
        return Err(SimError::NotPsd("residual covariance"));
    }
    let lphi = psd_factor(&spec.phi, "factor covariance")?;
    let lth = psd_factor(&theta, "residual covariance")?;
    let mut rng = seeded_rng(derive_seed(spec.seed, 1));
    let mut values = vec![0u8; spec.n * p];
    let mut z = nalgebra::DVector::zeros(m);
    let mut e = nalgebra::DVector::zeros(p);
    for i in 0..spec.n {
        for v in z.iter_mut() {
            *v = normal::draw(&mut rng);
        }
        for v in e.iter_mut() {
            *v = normal::draw(&mut rng);
        }
        let eta = &lphi * &z;
        let ystar = &spec.lambda * eta + &lth * &e;
        for j in 0..p {
            values[i * p + j] = u8::from(ystar[j] > spec.tau[j]);
        }
    }
    Ok(ResponseMatrix::new(
        model_ids(spec.n),
        spec.item_ids.clone(),
        spec.bench_names.clone(),
        spec.bench_of.clone(),
        values,
    )?)
}

/// Known structural-layer truth for IRT data.
#[derive(Debug, Clone, Serialize)]
pub struct LatRegTruth {
    /// Log-size slope per dimension (general first).
    pub beta: Vec<f64>,
    pub contributors: usize,
    pub contributor_sd: f64,
    /// Bernoulli rate of the `chat_template`, `merged` and `mo_e` flags
    /// (0 disables them).
    pub flag_rate: f64,
    /// Effects of those three flags per dimension.
    pub flag_effects: [Vec<f64>; 3],
}

impl LatRegTruth {
    pub fn new(beta: Vec<f64>, contributors: usize, contributor_sd: f64) -> Self {
        let d = beta.len();
        Self {
            beta,
            contributors,
            contributor_sd,
            flag_rate: 0.0,
            flag_effects: [vec![0.0; d], vec![0.0; d], vec![0.0; d]],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IrtGenSpec {
    pub n: usize,
    pub bench_sizes: Vec<usize>,
    pub a_range: (f64, f64),
    pub b_sd: f64,
    /// When false every general discrimination is 0.
    pub general: bool,
    pub regression: Option<LatRegTruth>,
    pub seed: u64,
}

impl IrtGenSpec {
    pub fn new(n: usize, bench_sizes: Vec<usize>, seed: u64) -> Self {
        Self { n, bench_sizes, a_range: (0.8, 2.0), b_sd: 1.0, general: true, regression: None, seed }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IrtTruth {
    pub params: IrtParams,
    /// N × (K+1) abilities, row-major.
    pub theta: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub contributor_of: Vec<usize>,
    /// Contributor effects, one row per contributor.
    pub u: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct IrtSample {
    pub rm: ResponseMatrix,
    pub md: Option<EcosystemMetadata>,
    pub truth: IrtTruth,
}

fn model_meta(id: &str, arch: &str, author: &str, dep: &str, flags: [bool; 3], x: f64) -> ModelMeta {
    let f = |b: bool| if b { "1" } else { "0" }.to_string();
    let attrs: BTreeMap<String, String> = [
        ("architecture", arch.to_string()),
        ("generation", "g1".to_string()),
        ("author", author.to_string()),
        ("removed", "0".to_string()),
        ("not_avail", "0".to_string()),
        ("type", dep.to_string()),
        ("chat_template", f(flags[0])),
        ("mo_e", f(flags[2])),
        ("merged", f(flags[1])),
        ("precision", "bf16".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    ModelMeta::from_attrs(id.to_string(), attrs, x)
}

/// Parameter stream: a0, ak, b per item. Data stream per model: x,
/// flags, residual normals, then one uniform per item; contributor effects
/// are drawn first on the data stream.
pub fn gen_irt_data(spec: &IrtGenSpec) -> Result<IrtSample, SimError> {
    if spec.bench_sizes.is_empty() || spec.n < 2 {
        return Err(SimError::Invalid("need at least one benchmark and two models".into()));
    }
    let (bench_of, item_ids, bench_names) = bench_layout(&spec.bench_sizes);
    let k = bench_names.len();
    let d = k + 1;
    let mut prng = seeded_rng(derive_seed(spec.seed, 0));
    let (lo, hi) = spec.a_range;
    let p = bench_of.len();
    let mut a0 = vec![0.0; p];
    let mut ak = vec![0.0; p];
    let mut b = vec![0.0; p];
    for j in 0..p {
        let g = prng.random_range(lo..hi);
        a0[j] = if spec.general { g } else { 0.0 };
        ak[j] = prng.random_range(lo..hi);
        b[j] = spec.b_sd * normal::draw(&mut prng);
    }
    let params = IrtParams::new(&a0, &ak, &b, &bench_of);
    let mut rng = seeded_rng(derive_seed(spec.seed, 1));
    let reg = spec.regression.as_ref();
    if let Some(r) = reg {
        if r.beta.len() != d || r.flag_effects.iter().any(|v| v.len() != d) {
            return Err(SimError::Invalid(format!("regression effects need {d} dimensions")));
        }
        if r.contributors == 0 {
            return Err(SimError::Invalid("no contributors".into()));
        }
    }
    let u: Vec<Vec<f64>> = match reg {
        Some(r) => {
            (0..r.contributors).map(|_| (0..d).map(|_| r.contributor_sd * normal::draw(&mut rng)).collect()).collect()
        }
        None => vec![],
    };
    let ids = model_ids(spec.n);
    let mut theta = Vec::with_capacity(spec.n);
    let mut xs = Vec::with_capacity(spec.n);
    let mut contributor_of = Vec::with_capacity(spec.n);
    let mut metas = Vec::new();
    let mut values = vec![0u8; spec.n * p];
    for i in 0..spec.n {
        let mut th: Vec<f64>;
        match reg {
            Some(r) => {
                let x = rng.random_range(-1.0..1.0);
                let c = i % r.contributors;
                let flags = [0, 1, 2].map(|_| r.flag_rate > 0.0 && rng.random::<f64>() < r.flag_rate);
                th = (0..d)
                    .map(|dd| {
                        let mut m = r.beta[dd] * x + u[c][dd];
                        for (f, &on) in flags.iter().enumerate() {
                            if on {
                                m += r.flag_effects[f][dd];
                            }
                        }
                        m
                    })
                    .collect();
                for v in th.iter_mut() {
                    *v += normal::draw(&mut rng);
                }
                metas.push(model_meta(&ids[i], "arch", &format!("c{c}"), "base", flags, x));
                xs.push(x);
                contributor_of.push(c);
            }
            None => th = (0..d).map(|_| normal::draw(&mut rng)).collect(),
        }
        for j in 0..p {
            let pr = irt_prob(&params.items[j], &th);
            values[i * p + j] = u8::from(rng.random::<f64>() < pr);
        }
        theta.push(th);
    }
    let rm = ResponseMatrix::new(ids, item_ids, bench_names, bench_of, values)?;
    let md = reg.map(|_| EcosystemMetadata { models: metas, scores: vec![], input_rows: spec.n, dropped_rows: 0 });
    Ok(IrtSample { rm, md, truth: IrtTruth { params, theta, x: xs, contributor_of, u } })
}

/// Crossed G-study score generator over facets A, B, C, D.
#[derive(Debug, Clone, Serialize)]
pub struct GStudyGenSpec {
    pub n_models: usize,
    pub n_benches: usize,
    /// Levels of A, C and D; each model draws its labels uniformly.
    pub levels_a: usize,
    pub levels_c: usize,
    pub levels_d: usize,
    /// Intercept variance per term name in [`TERMS`]; absent terms are 0.
    pub intercept_var: BTreeMap<String, f64>,
    pub slope_var: BTreeMap<String, f64>,
    pub residual: f64,
    pub mu: f64,
    pub beta: f64,
    pub x_mean: f64,
    pub x_sd: f64,
    pub seed: u64,
}

impl GStudyGenSpec {
    pub fn new(n_models: usize, n_benches: usize, levels: [usize; 3], seed: u64) -> Self {
        Self {
            n_models,
            n_benches,
            levels_a: levels[0],
            levels_c: levels[1],
            levels_d: levels[2],
            intercept_var: BTreeMap::new(),
            slope_var: BTreeMap::new(),
            residual: 1.0,
            mu: 0.0,
            beta: 0.0,
            x_mean: 0.0,
            x_sd: 1.0,
            seed,
        }
    }

    pub fn intercept(mut self, term: &str, var: f64) -> Self {
        self.intercept_var.insert(term.to_string(), var);
        self
    }

    pub fn slope(mut self, term: &str, var: f64) -> Self {
        self.slope_var.insert(term.to_string(), var);
        self
    }

    /// Population `Var(y)` for a randomly drawn observation.
    pub fn implied_variance(&self) -> f64 {
        let vx = self.x_sd * self.x_sd;
        let iv: f64 = self.intercept_var.values().sum();
        let sv: f64 = self.slope_var.values().sum();
        iv + self.beta * self.beta * vx + (vx + self.x_mean * self.x_mean) * sv + self.residual
    }
}

#[derive(Debug, Clone)]
pub struct GStudySample {
    pub md: EcosystemMetadata,
    pub spec: GStudyGenSpec,
}

/// Data stream per model: A, C, D labels then x. Scores follow per
/// (model, benchmark); a term's level effects `(u, v)` are drawn when the
/// level first appears, then the residual.
pub fn gen_gstudy_scores(spec: &GStudyGenSpec) -> Result<GStudySample, SimError> {
    for name in spec.intercept_var.keys().chain(spec.slope_var.keys()) {
        if !TERMS.iter().any(|t| t.0 == name) {
            return Err(SimError::Invalid(format!("unknown term `{name}`")));
        }
    }
    if spec.intercept_var.values().chain(spec.slope_var.values()).any(|v| *v < 0.0) || spec.residual < 0.0 {
        return Err(SimError::Invalid("negative variance".into()));
    }
    if spec.n_models == 0 || spec.n_benches == 0 || spec.levels_a == 0 || spec.levels_c == 0 || spec.levels_d == 0 {
        return Err(SimError::Invalid("empty facet".into()));
    }
    let mut rng = seeded_rng(derive_seed(spec.seed, 1));
    let ids = model_ids(spec.n_models);
    let mut models = Vec::with_capacity(spec.n_models);
    let mut levels = Vec::with_capacity(spec.n_models);
    for id in &ids {
        let a = rng.random_range(0..spec.levels_a);
        let c = rng.random_range(0..spec.levels_c);
        let d = rng.random_range(0..spec.levels_d);
        let x = spec.x_mean + spec.x_sd * normal::draw(&mut rng);
        models.push(model_meta(id, &format!("a{a}"), &format!("c{c}"), &format!("d{d}"), [false; 3], x));
        levels.push([a, c, d]);
    }
    let sd = |m: &BTreeMap<String, f64>, t: &str| m.get(t).copied().unwrap_or(0.0).sqrt();
    let mut effects: Vec<HashMap<[usize; 4], (f64, f64)>> = vec![HashMap::new(); TERMS.len()];
    let mut scores = Vec::with_capacity(spec.n_models * spec.n_benches);
    for (i, lv) in levels.iter().enumerate() {
        let x = models[i].x;
        for bench in 0..spec.n_benches {
            let facet = [lv[0], bench, lv[1], lv[2]];
            let mut y = spec.mu + spec.beta * x;
            for (t, (name, mask)) in TERMS.iter().enumerate() {
                let key = [0, 1, 2, 3].map(|f| if mask & (1 << f) != 0 { facet[f] } else { usize::MAX });
                let (u, v) = *effects[t].entry(key).or_insert_with(|| {
                    let u = sd(&spec.intercept_var, name) * normal::draw(&mut rng);
                    let v = sd(&spec.slope_var, name) * normal::draw(&mut rng);
                    (u, v)
                });
                y += u + v * x;
            }
            y += spec.residual.sqrt() * normal::draw(&mut rng);
            scores.push(ScoreRow { model: i, bench: format!("bench{bench}"), value: y });
        }
    }
    let md = EcosystemMetadata { models, scores, input_rows: spec.n_models * spec.n_benches, dropped_rows: 0 };
    Ok(GStudySample { md, spec: spec.clone() })
}
