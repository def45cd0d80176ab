use super::params::{item_logit, IrtParams, ItemParams};
use super::IrtError;
use crate::data::{EcosystemMetadata, ResponseMatrix, DEPLOYMENT_FLAGS};
use crate::mixed::factorize;
use crate::numeric::quad::gauss_hermite_normal;
use crate::numeric::{derive_seed, log_sigmoid, normal, seeded_rng, sigmoid};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhrmConfig {
    pub cycles: usize,
    pub burnin: usize,
    pub gain_exponent: f64,
    /// Initial random-walk proposal SD; adapted during burn-in.
    pub proposal_sd: f64,
    pub seed: u64,
    pub target_acceptance: f64,
    pub adapt_every: usize,
    /// Metropolis steps per model per cycle.
    pub mh_steps: usize,
    pub window: usize,
    pub tol: f64,
    /// Imputations at the final estimates for standard errors and scores.
    pub se_draws: usize,
    pub quad_points: usize,
    /// Log-likelihood trace interval in cycles; 0 disables the trace.
    pub trace_every: usize,
    pub max_discrimination: f64,
    /// Estimate general-factor discriminations; otherwise they are fixed at 0.
    pub general: bool,
}

impl Default for MhrmConfig {
    fn default() -> Self {
        Self {
            cycles: 5000,
            burnin: 200,
            gain_exponent: 0.75,
            proposal_sd: 0.5,
            seed: 1,
            target_acceptance: 0.35,
            adapt_every: 25,
            mh_steps: 2,
            window: 30,
            tol: 1e-4,
            se_draws: 200,
            quad_points: 11,
            trace_every: 10,
            max_discrimination: 20.0,
            general: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatRegFit {
    pub params: IrtParams,
    /// SEs of (a0, ak, b) per item; NaN where a parameter is fixed.
    pub item_se: Vec<[f64; 3]>,
    /// Rows of Γ: intercept (fixed at 0), then covariates.
    pub covariates: Vec<String>,
    /// Γ as rows per covariate, columns per dimension (general first).
    pub gamma: Vec<Vec<f64>>,
    pub gamma_se: Vec<Vec<f64>>,
    /// Contributor random-effect variances per dimension.
    pub sigma_zeta: Vec<f64>,
    pub sigma_zeta_se: Vec<f64>,
    /// Residual latent variances, fixed at 1.
    pub sigma_e: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub theta_se: Vec<Vec<f64>>,
    pub loglik: f64,
    /// `(cycle, log-likelihood)` pairs.
    pub trace: Vec<(usize, f64)>,
    /// ∞-norm of the parameter change per cycle.
    pub changes: Vec<f64>,
    pub converged: bool,
    pub cycles: usize,
    pub acceptance: f64,
    pub proposal_sd: f64,
    pub regression: bool,
    /// The observed information needed eigenvalue clipping.
    pub se_regularized: bool,
    pub model_ids: Vec<String>,
}

/// Structural layer inputs aligned to the response rows.
#[derive(Debug, Clone)]
struct Structural {
    names: Vec<String>,
    /// N × F design including the intercept column.
    z: DMatrix<f64>,
    contributor: Vec<usize>,
    n_contrib: usize,
}

fn structural(rm: &ResponseMatrix, md: &EcosystemMetadata) -> Result<Structural, IrtError> {
    let idx = md.align(rm.model_ids())?;
    let n = idx.len();
    let mut names = vec!["(Intercept)".to_string(), crate::gtheory::SIZE_COVARIATE.to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n], idx.iter().map(|&m| md.models[m].x).collect()];
    for (f, flag) in DEPLOYMENT_FLAGS.iter().enumerate() {
        let c: Vec<f64> = idx.iter().map(|&m| md.models[m].w[f]).collect();
        if c.iter().any(|v| *v != c[0]) {
            names.push(flag.to_string());
            cols.push(c);
        }
    }
    let z = DMatrix::from_fn(n, cols.len(), |i, c| cols[c][i]);
    let labels: Vec<&str> = idx.iter().map(|&m| md.models[m].contributor.as_str()).collect();
    let (contributor, n_contrib) = factorize(&labels);
    Ok(Structural { names, z, contributor, n_contrib })
}

/// Current estimates in packed form.
#[derive(Debug, Clone)]
struct State {
    items: Vec<ItemParams>,
    /// F × D.
    gamma: DMatrix<f64>,
    sigma: Vec<f64>,
}

struct Layout {
    general: bool,
    p: usize,
    d: usize,
    /// Estimated Γ rows (all but the intercept).
    f_free: usize,
    random: bool,
}

impl Layout {
    fn item_width(&self) -> usize {
        if self.general {
            3
        } else {
            2
        }
    }
    fn gamma_offset(&self) -> usize {
        self.p * self.item_width()
    }
    fn sigma_offset(&self) -> usize {
        self.gamma_offset() + self.f_free * self.d
    }
    fn len(&self) -> usize {
        self.sigma_offset() + if self.random { self.d } else { 0 }
    }

    fn pack(&self, s: &State) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for it in &s.items {
            if self.general {
                v.push(it.a0);
            }
            v.push(it.ak);
            v.push(it.b);
        }
        for d in 0..self.d {
            for f in 1..=self.f_free {
                v.push(s.gamma[(f, d)]);
            }
        }
        if self.random {
            v.extend(&s.sigma);
        }
        v
    }

    fn unpack(&self, v: &[f64], s: &mut State) {
        let w = self.item_width();
        for (j, it) in s.items.iter_mut().enumerate() {
            let o = j * w;
            if self.general {
                it.a0 = v[o];
            }
            it.ak = v[o + w - 2];
            it.b = v[o + w - 1];
        }
        let go = self.gamma_offset();
        for d in 0..self.d {
            for f in 1..=self.f_free {
                s.gamma[(f, d)] = v[go + d * self.f_free + f - 1];
            }
        }
        if self.random {
            s.sigma.copy_from_slice(&v[self.sigma_offset()..]);
        }
    }

    /// Contiguous parameter blocks of the block-diagonal complete-data
    /// information.
    fn blocks(&self) -> Vec<(usize, usize)> {
        let w = self.item_width();
        let mut b: Vec<(usize, usize)> = (0..self.p).map(|j| (j * w, w)).collect();
        if self.f_free > 0 {
            for d in 0..self.d {
                b.push((self.gamma_offset() + d * self.f_free, self.f_free));
            }
        }
        if self.random {
            for d in 0..self.d {
                b.push((self.sigma_offset() + d, 1));
            }
        }
        b
    }
}

/// Imputation engine: data, latent draws and per-cycle statistics.
struct Sampler<'a> {
    rm: &'a ResponseMatrix,
    obs: Vec<Vec<(usize, bool)>>,
    st: Option<Structural>,
    layout: Layout,
    theta: Vec<f64>,
    u: Vec<f64>,
    proposal: f64,
    seed: u64,
    steps: usize,
}

impl<'a> Sampler<'a> {
    fn n(&self) -> usize {
        self.obs.len()
    }

    fn prior_mean(&self, s: &State, i: usize, out: &mut [f64]) {
        let d = self.layout.d;
        match &self.st {
            Some(st) => {
                for dd in 0..d {
                    let mut m = 0.0;
                    for f in 0..st.z.ncols() {
                        m += st.z[(i, f)] * s.gamma[(f, dd)];
                    }
                    if self.layout.random {
                        m += self.u[st.contributor[i] * d + dd];
                    }
                    out[dd] = m;
                }
            }
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    fn log_target(items: &[ItemParams], obs: &[(usize, bool)], th: &[f64], mean: &[f64]) -> f64 {
        let mut ll = 0.0;
        for &(j, y) in obs {
            let eta = item_logit(&items[j], th);
            ll += log_sigmoid(if y { eta } else { -eta });
        }
        for (t, m) in th.iter().zip(mean) {
            ll -= 0.5 * (t - m) * (t - m);
        }
        ll
    }

    /// One sweep of random-walk Metropolis over all models; returns the
    /// acceptance count.
    fn mh_sweep(&mut self, s: &State, cycle: u64) -> usize {
        let d = self.layout.d;
        let base = derive_seed(self.seed, cycle);
        let means: Vec<f64> = {
            let mut m = vec![0.0; self.n() * d];
            for i in 0..self.n() {
                self.prior_mean(s, i, &mut m[i * d..(i + 1) * d]);
            }
            m
        };
        let sd = self.proposal;
        let steps = self.steps;
        let obs = &self.obs;
        self.theta
            .par_chunks_mut(d)
            .enumerate()
            .map(|(i, th)| {
                let mut rng = seeded_rng(derive_seed(base, i as u64));
                let mean = &means[i * d..(i + 1) * d];
                let mut cur = Self::log_target(&s.items, &obs[i], th, mean);
                let mut prop = vec![0.0; d];
                let mut acc = 0;
                for _ in 0..steps {
                    for (k, v) in prop.iter_mut().enumerate() {
                        *v = th[k] + sd * normal::draw(&mut rng);
                    }
                    let new = Self::log_target(&s.items, &obs[i], &prop, mean);
                    if (new - cur) >= 0.0 || normal::open_uniform(&mut rng).ln() < new - cur {
                        th.copy_from_slice(&prop);
                        cur = new;
                        acc += 1;
                    }
                }
                acc
            })
            .sum()
    }

    /// Conjugate Gibbs draw of contributor effects given the abilities.
    fn gibbs_u(&mut self, s: &State, cycle: u64) {
        let Some(st) = &self.st else { return };
        if !self.layout.random {
            return;
        }
        let d = self.layout.d;
        let mut rng = seeded_rng(derive_seed(derive_seed(self.seed, cycle), u64::MAX));
        let mut sum = vec![0.0; st.n_contrib * d];
        let mut count = vec![0usize; st.n_contrib];
        for i in 0..self.n() {
            let c = st.contributor[i];
            count[c] += 1;
            for dd in 0..d {
                let mut m = 0.0;
                for f in 0..st.z.ncols() {
                    m += st.z[(i, f)] * s.gamma[(f, dd)];
                }
                sum[c * d + dd] += self.theta[i * d + dd] - m;
            }
        }
        for c in 0..st.n_contrib {
            for dd in 0..d {
                let prec = count[c] as f64 + 1.0 / s.sigma[dd];
                self.u[c * d + dd] = sum[c * d + dd] / prec + normal::draw(&mut rng) / prec.sqrt();
            }
        }
    }

    /// Complete-data gradient and block information at the current draws.
    /// `observed` selects the observed rather than expected information for
    /// the variance components.
    fn complete_stats(&self, s: &State, observed: bool) -> (Vec<f64>, Vec<DMatrix<f64>>) {
        let l = &self.layout;
        let d = l.d;
        let w = l.item_width();
        let mut g = vec![0.0; l.len()];
        let mut blocks: Vec<DMatrix<f64>> = l.blocks().iter().map(|&(_, k)| DMatrix::zeros(k, k)).collect();
        let per_item: Vec<(Vec<f64>, DMatrix<f64>)> = (0..l.p)
            .into_par_iter()
            .map(|j| {
                let it = &s.items[j];
                let mut gj = vec![0.0; w];
                let mut hj = DMatrix::zeros(w, w);
                let mut v = [0.0; 3];
                for i in 0..self.n() {
                    let Some(y) = self.rm.get(i, j) else { continue };
                    let th = &self.theta[i * d..(i + 1) * d];
                    let pr = sigmoid(item_logit(it, th));
                    let r = f64::from(y) - pr;
                    let q = pr * (1.0 - pr);
                    let vv: &[f64] = if l.general {
                        v = [th[0], th[1 + it.bench], -1.0];
                        &v
                    } else {
                        v[0] = th[1 + it.bench];
                        v[1] = -1.0;
                        &v[..2]
                    };
                    for a in 0..w {
                        gj[a] += r * vv[a];
                        for b in 0..w {
                            hj[(a, b)] += q * vv[a] * vv[b];
                        }
                    }
                }
                (gj, hj)
            })
            .collect();
        for (j, (gj, hj)) in per_item.into_iter().enumerate() {
            g[j * w..(j + 1) * w].copy_from_slice(&gj);
            blocks[j] = hj;
        }
        if let Some(st) = &self.st {
            let f_free = l.f_free;
            if f_free > 0 {
                let zf = st.z.columns(1, f_free);
                let ztz = zf.transpose() * zf;
                for dd in 0..d {
                    let mut gd = DVector::zeros(f_free);
                    for i in 0..self.n() {
                        let mut m = 0.0;
                        for f in 0..st.z.ncols() {
                            m += st.z[(i, f)] * s.gamma[(f, dd)];
                        }
                        let uu = if l.random { self.u[st.contributor[i] * d + dd] } else { 0.0 };
                        let r = self.theta[i * d + dd] - m - uu;
                        for f in 0..f_free {
                            gd[f] += zf[(i, f)] * r;
                        }
                    }
                    let o = l.gamma_offset() + dd * f_free;
                    g[o..o + f_free].copy_from_slice(gd.as_slice());
                    blocks[l.p + dd] = ztz.clone();
                }
            }
            if l.random {
                let c = st.n_contrib as f64;
                let base = l.p + if f_free > 0 { d } else { 0 };
                for dd in 0..d {
                    let s2 = s.sigma[dd];
                    let ssq: f64 = (0..st.n_contrib).map(|k| self.u[k * d + dd].powi(2)).sum();
                    g[l.sigma_offset() + dd] = -0.5 * c / s2 + 0.5 * ssq / (s2 * s2);
                    let info = if observed { -0.5 * c / (s2 * s2) + ssq / (s2 * s2 * s2) } else { 0.5 * c / (s2 * s2) };
                    blocks[base + dd] = DMatrix::from_element(1, 1, info);
                }
            }
        }
        (g, blocks)
    }

    /// Contributors under a random contributor effect, otherwise models.
    fn n_groups(&self) -> usize {
        match &self.st {
            Some(st) if self.layout.random => st.n_contrib,
            _ => self.n(),
        }
    }

    fn group_of(&self, i: usize) -> usize {
        match &self.st {
            Some(st) if self.layout.random => st.contributor[i],
            _ => i,
        }
    }

    /// Complete-data score summed within each group, one row per group.
    fn group_scores(&self, s: &State) -> DMatrix<f64> {
        let l = &self.layout;
        let d = l.d;
        let w = l.item_width();
        let rows: Vec<Vec<(usize, f64)>> = (0..self.n())
            .into_par_iter()
            .map(|i| {
                let th = &self.theta[i * d..(i + 1) * d];
                let mut out = Vec::with_capacity(self.obs[i].len() * w + l.f_free * d);
                for &(j, y) in &self.obs[i] {
                    let it = &s.items[j];
                    let r = f64::from(u8::from(y)) - sigmoid(item_logit(it, th));
                    let o = j * w;
                    if l.general {
                        out.push((o, r * th[0]));
                    }
                    out.push((o + w - 2, r * th[1 + it.bench]));
                    out.push((o + w - 1, -r));
                }
                if let Some(st) = &self.st {
                    for dd in 0..d {
                        let mut mu = 0.0;
                        for f in 0..st.z.ncols() {
                            mu += st.z[(i, f)] * s.gamma[(f, dd)];
                        }
                        let uu = if l.random { self.u[st.contributor[i] * d + dd] } else { 0.0 };
                        let res = th[dd] - mu - uu;
                        for f in 0..l.f_free {
                            out.push((l.gamma_offset() + dd * l.f_free + f, st.z[(i, f + 1)] * res));
                        }
                    }
                }
                out
            })
            .collect();
        let mut g = DMatrix::zeros(self.n_groups(), l.len());
        for (i, row) in rows.iter().enumerate() {
            let gi = self.group_of(i);
            for &(a, v) in row {
                g[(gi, a)] += v;
            }
        }
        if l.random {
            for c in 0..self.n_groups() {
                for dd in 0..d {
                    let s2 = s.sigma[dd];
                    g[(c, l.sigma_offset() + dd)] += -0.5 / s2 + 0.5 * self.u[c * d + dd].powi(2) / (s2 * s2);
                }
            }
        }
        g
    }

    /// Person-level marginal log-likelihood by Gauss-Hermite quadrature,
    /// integrating the general dimension outside the specific ones. Under
    /// regression the contributor effect is folded into the prior variance.
    fn loglik(&self, s: &State, q: usize) -> f64 {
        let (nodes, weights) = gauss_hermite_normal(q);
        let lw: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let l = &self.layout;
        let d = l.d;
        let k = d - 1;
        (0..self.n())
            .into_par_iter()
            .map(|i| {
                let mut mean = vec![0.0; d];
                let mut sd = vec![1.0; d];
                if let Some(st) = &self.st {
                    for dd in 0..d {
                        let mut m = 0.0;
                        for f in 0..st.z.ncols() {
                            m += st.z[(i, f)] * s.gamma[(f, dd)];
                        }
                        mean[dd] = m;
                        if l.random {
                            sd[dd] = (1.0 + s.sigma[dd]).sqrt();
                        }
                    }
                }
                let mut by_bench: Vec<Vec<(usize, bool)>> = vec![Vec::new(); k];
                for &(j, y) in &self.obs[i] {
                    by_bench[s.items[j].bench].push((j, y));
                }
                let mut th = vec![0.0; d];
                let outer: Vec<f64> = nodes
                    .iter()
                    .zip(&lw)
                    .map(|(n0, lw0)| {
                        th[0] = mean[0] + sd[0] * n0;
                        let mut tot = *lw0;
                        for (b, obs) in by_bench.iter().enumerate() {
                            if obs.is_empty() {
                                continue;
                            }
                            let terms: Vec<f64> = nodes
                                .iter()
                                .zip(&lw)
                                .map(|(nk, lwk)| {
                                    th[1 + b] = mean[1 + b] + sd[1 + b] * nk;
                                    let mut ll = *lwk;
                                    for &(j, y) in obs {
                                        let eta = item_logit(&s.items[j], &th);
                                        ll += log_sigmoid(if y { eta } else { -eta });
                                    }
                                    ll
                                })
                                .collect();
                            tot += log_sum_exp(&terms);
                        }
                        tot
                    })
                    .collect();
                log_sum_exp(&outer)
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn prepare<'a>(
    rm: &'a ResponseMatrix,
    md: Option<&EcosystemMetadata>,
    with_regression: bool,
    config: &MhrmConfig,
) -> Result<(Sampler<'a>, State), IrtError> {
    let zv: Vec<String> =
        rm.zero_variance().iter().enumerate().filter(|(_, z)| **z).map(|(j, _)| rm.item_ids()[j].clone()).collect();
    if !zv.is_empty() {
        return Err(IrtError::ZeroVarianceItems(zv));
    }
    let st = if with_regression { Some(structural(rm, md.ok_or(IrtError::MetadataRequired)?)?) } else { None };
    let n = rm.n_models();
    let p = rm.n_items();
    let k = rm.n_benches();
    let d = k + 1;
    if config.general && k < 2 {
        log::warn!("general and specific factors coincide with a single benchmark");
    }
    let obs: Vec<Vec<(usize, bool)>> =
        (0..n).map(|i| (0..p).filter_map(|j| rm.get(i, j).map(|y| (j, y == 1))).collect()).collect();
    let f = st.as_ref().map_or(1, |s| s.z.ncols());
    let random = st.as_ref().is_some_and(|s| s.n_contrib >= 2);
    let layout = Layout { general: config.general, p, d, f_free: f - 1, random };
    let items = (0..p)
        .map(|j| {
            let a0: f64 = if config.general { 1.0 } else { 0.0 };
            let ak: f64 = 1.0;
            let pc = rm.p_correct(j).unwrap_or(0.5).clamp(0.01, 0.99);
            let b = -(pc / (1.0 - pc)).ln() * (1.0 + 0.346 * (a0 * a0 + ak * ak)).sqrt();
            ItemParams { a0, ak, b, bench: rm.bench_of()[j] }
        })
        .collect();
    let state = State { items, gamma: DMatrix::zeros(f, d), sigma: vec![if random { 0.1 } else { 0.0 }; d] };
    let mut rng = seeded_rng(derive_seed(config.seed, u64::MAX - 1));
    let theta = (0..n * d).map(|_| normal::draw(&mut rng)).collect();
    let n_contrib = st.as_ref().map_or(0, |s| s.n_contrib);
    let sampler = Sampler {
        rm,
        obs,
        st,
        layout,
        theta,
        u: vec![0.0; n_contrib * d],
        proposal: config.proposal_sd,
        seed: config.seed,
        steps: config.mh_steps.max(1),
    };
    Ok((sampler, state))
}

fn solve_block(h: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let k = h.nrows();
    let ridge = 1e-8 * (0..k).map(|i| h[(i, i)].abs()).fold(1e-12, f64::max);
    let hr = h + DMatrix::identity(k, k) * ridge;
    let gv = DVector::from_column_slice(g);
    match hr.clone().cholesky() {
        Some(c) => c.solve(&gv).as_slice().to_vec(),
        None => hr.pseudo_inverse(1e-12).map(|m| (m * gv).as_slice().to_vec()).unwrap_or_else(|_| vec![0.0; k]),
    }
}

/// Bifactor 2PL by MH-RM, optionally with the latent regression
/// `θ_i = Γᵀz_i + u_c(i) + e_i`, `e_i ~ N(0, I)`.
pub fn fit_mhrm(
    rm: &ResponseMatrix,
    md: Option<&EcosystemMetadata>,
    with_regression: bool,
    config: &MhrmConfig,
) -> Result<LatRegFit, IrtError> {
    let (mut smp, mut state) = prepare(rm, md, with_regression, config)?;
    let layout_len = smp.layout.len();
    let blocks_idx = smp.layout.blocks();
    let n = smp.n();
    let d = smp.layout.d;
    // Warm-up sweeps at the starting values.
    for w in 0..20u64 {
        smp.mh_sweep(&state, u64::MAX - 2 - w);
        smp.gibbs_u(&state, u64::MAX - 2 - w);
    }
    let mut h_avg: Vec<DMatrix<f64>> = Vec::new();
    let mut changes = Vec::new();
    let mut trace = Vec::new();
    let mut below = 0usize;
    let mut converged = false;
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let mut cycle = 0usize;
    while cycle < config.cycles {
        cycle += 1;
        let acc = smp.mh_sweep(&state, cycle as u64);
        smp.gibbs_u(&state, cycle as u64);
        accepted += acc;
        proposed += n * smp.steps;
        if cycle <= config.burnin && cycle % config.adapt_every.max(1) == 0 {
            let rate = accepted as f64 / proposed as f64;
            if !(0.2..=0.5).contains(&rate) {
                smp.proposal *= (2.0 * (rate - config.target_acceptance)).exp();
            }
            accepted = 0;
            proposed = 0;
        }
        let gain = if cycle <= config.burnin {
            1.0
        } else {
            1.0 / ((cycle - config.burnin) as f64).powf(config.gain_exponent)
        };
        let (g, h) = smp.complete_stats(&state, false);
        if h_avg.is_empty() {
            h_avg = h;
        } else {
            for (a, b) in h_avg.iter_mut().zip(h) {
                *a += (b - &*a) * gain;
            }
        }
        let old = smp.layout.pack(&state);
        let mut new = old.clone();
        for (bi, &(o, k)) in blocks_idx.iter().enumerate() {
            let step = solve_block(&h_avg[bi], &g[o..o + k]);
            let max = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = if max > 1.0 { 1.0 / max } else { 1.0 };
            for a in 0..k {
                new[o + a] += gain * scale * step[a];
            }
        }
        smp.layout.unpack(&new, &mut state);
        for (j, it) in state.items.iter_mut().enumerate() {
            it.a0 = it.a0.max(0.0);
            it.ak = it.ak.max(0.0);
            for a in [it.a0, it.ak] {
                if a > config.max_discrimination || !a.is_finite() {
                    return Err(IrtError::Divergent { item: rm.item_ids()[j].clone(), cycle, value: a });
                }
            }
        }
        for s in state.sigma.iter_mut() {
            if smp.layout.random {
                *s = s.max(1e-8);
            }
        }
        let now = smp.layout.pack(&state);
        let change = now.iter().zip(&old).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        changes.push(change);
        if config.trace_every > 0 && cycle % config.trace_every == 0 {
            trace.push((cycle, smp.loglik(&state, config.quad_points)));
        }
        if cycle > config.burnin {
            below = if change < config.tol { below + 1 } else { 0 };
            if below >= config.window {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("MH-RM stopped at {cycle} cycles without meeting the convergence window");
    }
    // Louis identity at the final estimates, with the score covariance
    // accumulated per a-posteriori independent group.
    let m = config.se_draws.max(2);
    let n_groups = smp.n_groups();
    let mut group_mean = DMatrix::zeros(n_groups, layout_len);
    let mut mean_ggt = DMatrix::zeros(layout_len, layout_len);
    let mut mean_h = DMatrix::zeros(layout_len, layout_len);
    let mut th_sum = vec![0.0; n * d];
    let mut th_sq = vec![0.0; n * d];
    let mut post_acc = 0usize;
    for t in 0..m {
        let c = (config.cycles + 1 + t) as u64;
        post_acc += smp.mh_sweep(&state, c);
        smp.gibbs_u(&state, c);
        let (_, h) = smp.complete_stats(&state, true);
        let g = smp.group_scores(&state);
        mean_ggt += g.transpose() * &g / m as f64;
        group_mean += g / m as f64;
        for (bi, &(o, k)) in blocks_idx.iter().enumerate() {
            let mut view = mean_h.view_mut((o, o), (k, k));
            view += &h[bi] / m as f64;
        }
        for (a, v) in smp.theta.iter().enumerate() {
            th_sum[a] += v;
            th_sq[a] += v * v;
        }
    }
    let info = &mean_h - (&mean_ggt - group_mean.transpose() * &group_mean);
    let (cov, se_regularized) = invert_information(&info);
    let se: Vec<f64> = (0..layout_len).map(|a| cov[(a, a)].sqrt()).collect();
    let w = smp.layout.item_width();
    let item_se = (0..smp.layout.p)
        .map(|j| {
            let o = j * w;
            if smp.layout.general {
                [se[o], se[o + 1], se[o + 2]]
            } else {
                [f64::NAN, se[o], se[o + 1]]
            }
        })
        .collect();
    let f = state.gamma.nrows();
    let mut gamma_se = vec![vec![f64::NAN; d]; f];
    for dd in 0..d {
        for ff in 1..f {
            gamma_se[ff][dd] = se[smp.layout.gamma_offset() + dd * smp.layout.f_free + ff - 1];
        }
        gamma_se[0][dd] = 0.0;
    }
    let sigma_zeta_se =
        if smp.layout.random { (0..d).map(|dd| se[smp.layout.sigma_offset() + dd]).collect() } else { vec![0.0; d] };
    let theta: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|dd| th_sum[i * d + dd] / m as f64).collect()).collect();
    let theta_se = (0..n)
        .map(|i| {
            (0..d)
                .map(|dd| {
                    let mu = th_sum[i * d + dd] / m as f64;
                    (th_sq[i * d + dd] / m as f64 - mu * mu).max(0.0).sqrt()
                })
                .collect()
        })
        .collect();
    let loglik = smp.loglik(&state, config.quad_points);
    if config.trace_every > 0 {
        trace.push((cycle, loglik));
    }
    let covariates = match &smp.st {
        Some(st) => st.names.clone(),
        None => vec!["(Intercept)".to_string()],
    };
    Ok(LatRegFit {
        params: IrtParams { items: state.items.clone(), n_benches: d - 1 },
        item_se,
        covariates,
        gamma: (0..f).map(|ff| (0..d).map(|dd| state.gamma[(ff, dd)]).collect()).collect(),
        gamma_se,
        sigma_zeta: state.sigma.clone(),
        sigma_zeta_se,
        sigma_e: vec![1.0; d],
        theta,
        theta_se,
        loglik,
        trace,
        changes,
        converged,
        cycles: cycle,
        acceptance: post_acc as f64 / (n * smp.steps * m) as f64,
        proposal_sd: smp.proposal,
        regression: smp.st.is_some(),
        se_regularized,
        model_ids: rm.model_ids().to_vec(),
    })
}

/// Inverse of the symmetrized information. An indefinite estimate is
/// equilibrated by its diagonal and has its negative eigenvalues reflected,
/// so Monte-Carlo noise in one weak direction cannot inflate every variance
/// and a boundary variance component cannot set the floor for the rest.
/// Parameters with non-positive information get NaN variances.
fn invert_information(info: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = (info + info.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return (c.inverse(), false);
    }
    let k = sym.nrows();
    let scale: Vec<f64> = (0..k).map(|a| if sym[(a, a)] > 0.0 { 1.0 / sym[(a, a)].sqrt() } else { 0.0 }).collect();
    let mut eq = DMatrix::from_fn(k, k, |a, b| sym[(a, b)] * scale[a] * scale[b]);
    for (a, sa) in scale.iter().enumerate() {
        if *sa == 0.0 {
            eq[(a, a)] = 1.0;
        }
    }
    let eig = eq.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-8 * max.max(1e-300);
    let inv = eig.eigenvalues.map(|v| 1.0 / v.abs().max(floor));
    let eq_inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    let cov = DMatrix::from_fn(k, k, |a, b| {
        if scale[a] == 0.0 || scale[b] == 0.0 {
            if a == b {
                f64::NAN
            } else {
                0.0
            }
        } else {
            eq_inv[(a, b)] * scale[a] * scale[b]
        }
    });
    (cov, true)
}

/// Truth for [`averaged_score`]: item parameters and, under regression,
/// Γ (rows as in [`LatRegFit::covariates`]) and contributor variances.
#[derive(Debug, Clone)]
pub struct ScoreParams {
    pub params: IrtParams,
    pub gamma: Option<Vec<Vec<f64>>>,
    pub sigma_zeta: Option<Vec<f64>>,
}

/// Mean complete-data score over `draws` imputations at fixed parameters,
/// after `warmup` sweeps, in the packed order (items, Γ, Σ_ζ).
pub fn averaged_score(
    rm: &ResponseMatrix,
    md: Option<&EcosystemMetadata>,
    truth: &ScoreParams,
    config: &MhrmConfig,
    warmup: usize,
    draws: usize,
) -> Result<Vec<f64>, IrtError> {
    let with_regression = truth.gamma.is_some();
    let (mut smp, mut state) = prepare(rm, md, with_regression, config)?;
    state.items = truth.params.items.clone();
    if let Some(g) = &truth.gamma {
        for (f, row) in g.iter().enumerate() {
            for (dd, v) in row.iter().enumerate() {
                state.gamma[(f, dd)] = *v;
            }
        }
    }
    if let Some(s) = &truth.sigma_zeta {
        state.sigma.copy_from_slice(s);
    }
    for c in 0..warmup as u64 {
        smp.mh_sweep(&state, c);
        smp.gibbs_u(&state, c);
        if c % 25 == 24 {
            let rate = smp.mh_sweep(&state, u64::MAX - c) as f64 / (smp.n() * smp.steps) as f64;
            smp.proposal *= (2.0 * (rate - config.target_acceptance)).exp();
        }
    }
    let mut mean = vec![0.0; smp.layout.len()];
    for t in 0..draws {
        let c = (warmup + t) as u64;
        smp.mh_sweep(&state, c);
        smp.gibbs_u(&state, c);
        let (g, _) = smp.complete_stats(&state, false);
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v / draws as f64;
        }
    }
    Ok(mean)
}

/// Log-size slopes per dimension with SEs.
pub fn extract_scaling_vector(fit: &LatRegFit) -> Result<Vec<(f64, f64)>, IrtError> {
    if !fit.regression {
        return Err(IrtError::NoRegression);
    }
    let row = fit.covariates.iter().position(|c| c == crate::gtheory::SIZE_COVARIATE).ok_or(IrtError::NoRegression)?;
    Ok(fit.gamma[row].iter().zip(&fit.gamma_se[row]).map(|(b, s)| (*b, *s)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttenuationRow {
    pub lambda: f64,
    pub beta: f64,
    /// OLS slope of the observed composite on size.
    pub ols: f64,
    /// OLS slope divided by λ; absent when λ = 0.
    pub latent: Option<f64>,
}

/// Monte-Carlo check that regressing a noisy composite `ȳ = λθ + e` on size
/// attenuates the latent slope to `λβ`. `θ = βx + ν` with `x, ν ~ N(0, 1)`
/// and `e ~ N(0, 1 − λ²)`.
pub fn attenuation_demo(lambda: &[f64], beta: &[f64], n: usize, seed: u64) -> Vec<AttenuationRow> {
    lambda
        .iter()
        .zip(beta)
        .enumerate()
        .map(|(r, (&l, &b))| {
            let mut rng = seeded_rng(derive_seed(seed, r as u64));
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let e_sd = (1.0 - l * l).max(0.0).sqrt();
            for _ in 0..n {
                let xi = normal::draw(&mut rng);
                let th = b * xi + normal::draw(&mut rng);
                x.push(xi);
                y.push(l * th + e_sd * normal::draw(&mut rng));
            }
            let mx = crate::numeric::mean(&x);
            let my = crate::numeric::mean(&y);
            let sxy: f64 = x.iter().zip(&y).map(|(a, c)| (a - mx) * (c - my)).sum();
            let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
            let ols = sxy / sxx;
            AttenuationRow { lambda: l, beta: b, ols, latent: (l > 0.0).then(|| ols / l) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::pearson;
    use crate::sim::{gen_irt_data, IrtGenSpec, LatRegTruth};

    fn quick(seed: u64) -> MhrmConfig {
        MhrmConfig { cycles: 600, burnin: 100, se_draws: 30, trace_every: 0, seed, ..Default::default() }
    }

    /// Marginal-ML 2PL by EM over a fixed Gauss-Hermite grid.
    fn em_2pl(rm: &ResponseMatrix) -> Vec<(f64, f64)> {
        let (nodes, weights) = gauss_hermite_normal(61);
        let (n, p) = (rm.n_models(), rm.n_items());
        let mut par: Vec<(f64, f64)> = vec![(1.0, 0.0); p];
        for _ in 0..2000 {
            let mut r = vec![vec![0.0; nodes.len()]; p];
            let mut m = vec![vec![0.0; nodes.len()]; p];
            for i in 0..n {
                let lp: Vec<f64> = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(t, w)| {
                        let mut l = w.ln();
                        for (j, (a, b)) in par.iter().enumerate() {
                            let eta = a * t - b;
                            l += log_sigmoid(if rm.get(i, j) == Some(1) { eta } else { -eta });
                        }
                        l
                    })
                    .collect();
                let z = log_sum_exp(&lp);
                for (q, l) in lp.iter().enumerate() {
                    let post = (l - z).exp();
                    for j in 0..p {
                        m[j][q] += post;
                        if rm.get(i, j) == Some(1) {
                            r[j][q] += post;
                        }
                    }
                }
            }
            let mut delta = 0.0f64;
            for j in 0..p {
                let (mut a, mut b) = par[j];
                for _ in 0..20 {
                    let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (q, t) in nodes.iter().enumerate() {
                        let pr = sigmoid(a * t - b);
                        let res = r[j][q] - m[j][q] * pr;
                        let w = m[j][q] * pr * (1.0 - pr);
                        g0 += res * t;
                        g1 -= res;
                        h00 += w * t * t;
                        h01 -= w * t;
                        h11 += w;
                    }
                    let det = h00 * h11 - h01 * h01;
                    a += (h11 * g0 - h01 * g1) / det;
                    b += (h00 * g1 - h01 * g0) / det;
                }
                delta = delta.max((a - par[j].0).abs()).max((b - par[j].1).abs());
                par[j] = (a, b);
            }
            if delta < 1e-7 {
                break;
            }
        }
        par
    }

    #[test]
    fn single_bench_matches_em_oracle() {
        let mut spec = IrtGenSpec::new(1000, vec![12], 5);
        spec.general = false;
        let s = gen_irt_data(&spec).unwrap();
        let em = em_2pl(&s.rm);
        let cfg = MhrmConfig { general: false, cycles: 2000, ..quick(3) };
        let fit = fit_mhrm(&s.rm, None, false, &cfg).unwrap();
        for (it, (a, b)) in fit.params.items.iter().zip(&em) {
            assert_eq!(it.a0, 0.0);
            assert!((it.ak - a).abs() < 0.1, "a {} vs {a}", it.ak);
            assert!((it.b - b).abs() < 0.1, "b {} vs {b}", it.b);
        }
    }

    #[test]
    fn recovers_bifactor_items() {
        let s = gen_irt_data(&IrtGenSpec::new(800, vec![8, 8], 11)).unwrap();
        let fit = fit_mhrm(&s.rm, None, false, &quick(2)).unwrap();
        let b_hat = fit.params.b();
        let b_true = s.truth.params.b();
        assert!(pearson(&b_hat, &b_true) > 0.95);
        let a_hat: Vec<f64> = fit.params.a0().into_iter().chain(fit.params.ak()).collect();
        let a_true: Vec<f64> = s.truth.params.a0().into_iter().chain(s.truth.params.ak()).collect();
        assert!(pearson(&a_hat, &a_true) > 0.7);
        assert!(fit.item_se.iter().all(|s| s.iter().all(|v| v.is_finite() && *v > 0.0)));
        assert_eq!(fit.theta.len(), 800);
        assert!((0.1..0.7).contains(&fit.acceptance));
    }

    #[test]
    fn seeded_fits_are_bit_identical() {
        let mut spec = IrtGenSpec::new(200, vec![4, 4], 1);
        spec.regression = Some(LatRegTruth::new(vec![1.0, 0.0, 0.0], 20, 0.3));
        let s = gen_irt_data(&spec).unwrap();
        let cfg = MhrmConfig { cycles: 120, burnin: 50, se_draws: 10, trace_every: 20, ..Default::default() };
        let a = fit_mhrm(&s.rm, s.md.as_ref(), true, &cfg).unwrap();
        let b = fit_mhrm(&s.rm, s.md.as_ref(), true, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.gamma, b.gamma);
        assert_eq!(a.sigma_zeta, b.sigma_zeta);
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
    }

    #[test]
    fn scaling_vector_shape_and_errors() {
        let mut spec = IrtGenSpec::new(200, vec![4, 4, 4], 8);
        spec.regression = Some(LatRegTruth::new(vec![0.0; 4], 10, 0.3));
        let s = gen_irt_data(&spec).unwrap();
        let cfg = MhrmConfig { cycles: 60, burnin: 30, se_draws: 10, trace_every: 0, ..Default::default() };
        let fit = fit_mhrm(&s.rm, s.md.as_ref(), true, &cfg).unwrap();
        assert_eq!(extract_scaling_vector(&fit).unwrap().len(), 4);
        assert_eq!(fit.gamma[0], vec![0.0; 4]);
        let plain = fit_mhrm(&s.rm, None, false, &cfg).unwrap();
        assert!(matches!(extract_scaling_vector(&plain), Err(IrtError::NoRegression)));
        assert!(matches!(fit_mhrm(&s.rm, None, true, &cfg), Err(IrtError::MetadataRequired)));
    }

    #[test]
    fn zero_variance_items_are_rejected() {
        let rm = ResponseMatrix::new(
            vec!["m0".into(), "m1".into(), "m2".into()],
            vec!["i0".into(), "i1".into()],
            vec!["b".into()],
            vec![0, 0],
            vec![1, 1, 0, 1, 1, 1],
        )
        .unwrap();
        let err = fit_mhrm(&rm, None, false, &MhrmConfig::default()).unwrap_err();
        assert!(matches!(err, IrtError::ZeroVarianceItems(ref v) if v == &["i1".to_string()]));
    }

    #[test]
    fn attenuation_scales_the_slope() {
        let rows = attenuation_demo(&[1.0, 0.5, 0.0], &[2.0, 2.0, 2.0], 10_000, 4);
        assert!((rows[0].ols - 2.0).abs() < 0.05);
        assert!((rows[1].ols - 1.0).abs() < 0.1);
        assert!((rows[1].latent.unwrap() - 2.0).abs() < 0.2);
        assert!(rows[2].ols.abs() < 0.05);
        assert_eq!(rows[2].latent, None);
    }
}
