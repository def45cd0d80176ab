//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line to
//! stderr; the test fails if any criterion fails.

use benchmetry::analysis::{
    distance_correlation, kendall_tau_b, run_cfa_campaign, run_latreg_campaign, CampaignConfig,
};
use benchmetry::cfa::{fit_dwls, modification_indices, DwlsObjective, StructureKind, StructureSpec};
use benchmetry::gtheory::{scaling_metrics_from, variance_table, VarianceComponents};
use benchmetry::irt::{attenuation_demo, extract_scaling_vector, fit_mhrm, MhrmConfig};
use benchmetry::mixed::{fit_reml, implied_tau2, ivw_aggregate, MixedSpec, RandomTerm};
use benchmetry::numeric::optim::numeric_gradient;
use benchmetry::numeric::{mean, normal, pearson, seeded_rng, variance};
use benchmetry::sim::{
    gen_cfa_data, gen_gstudy_scores, gen_irt_data, CfaGenSpec, GStudyGenSpec, IrtGenSpec, LatRegTruth,
};
use benchmetry::tetra::{tetrachoric_matrix, TetraResult};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use std::io::Write;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Slope variances per term with the size coefficient fixed by SNR = 1.12.
const SLOPES: [(&str, f64); 14] = [
    ("A", 14.06),
    ("AxC", 6.61),
    ("AxD", 0.40),
    ("B", 32.09),
    ("BxA", 4.83),
    ("BxAxC", 7.20),
    ("BxAxD", 0.90),
    ("BxC", 3.47),
    ("BxCxD", 4.93),
    ("BxD", 1.90),
    ("C", 17.75),
    ("CxAxD", 7.42),
    ("CxD", 1.38),
    ("D", 3.26),
];

const SLOPE_INTERCEPTS: [(&str, f64); 14] = [
    ("A", 4.67),
    ("AxC", 5.60),
    ("AxD", 0.51),
    ("B", 104.21),
    ("BxA", 6.15),
    ("BxAxC", 3.92),
    ("BxAxD", 0.82),
    ("BxC", 4.40),
    ("BxCxD", 0.50),
    ("BxD", 11.65),
    ("C", 5.35),
    ("CxAxD", 6.36),
    ("CxD", 1.88),
    ("D", 0.00),
];

const BASE_VARIANCES: [(&str, f64); 11] = [
    ("B", 150.0),
    ("C", 29.91),
    ("A", 14.5),
    ("D", 6.64),
    ("BxC", 12.7),
    ("AxC", 12.3),
    ("BxA", 10.21),
    ("BxD", 17.2),
    ("CxD", 2.64),
    ("AxD", 0.77),
    ("three-way", 38.9),
];

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn metric_arithmetic() -> Outcome {
    let start = Instant::now();
    let slope_total: f64 = SLOPES.iter().map(|s| s.1).sum();
    let vc = VarianceComponents::from_intercepts(&SLOPE_INTERCEPTS, 33.24)
        .with_slopes(&SLOPES)
        .with_beta((1.12 * slope_total).sqrt());
    let m = scaling_metrics_from(&vc, 1.0, 0.0).unwrap();
    let psi = |n: &str| m.psi.iter().find(|p| p.0 == n).map_or(f64::NAN, |p| p.1);
    let (b, a, c) = (psi("B"), psi("A"), psi("C"));
    let secs = start.elapsed().as_secs_f64();
    let pass = within(b, 0.30, 0.005)
        && within(a, 0.13, 0.005)
        && within(c, 0.17, 0.005)
        && within(m.cv, 0.944, 0.005)
        && within(m.r_beta, 0.53, 0.01)
        && secs < 1.0;
    outcome(pass, format!("PSI_B {b:.4} PSI_A {a:.4} PSI_C {c:.4} CV {:.4} R_beta {:.4}", m.cv, m.r_beta))
}

fn variance_share() -> Outcome {
    let start = Instant::now();
    let rows = variance_table(&VarianceComponents::from_intercepts(&BASE_VARIANCES, 52.0));
    let p_b = rows.iter().find(|r| r.term == "B").map_or(f64::NAN, |r| r.share);
    let pass = within(p_b, 0.430, 0.002) && start.elapsed() < Duration::from_secs(1);
    outcome(pass, format!("p_B {p_b:.4}"))
}

fn ivw_exactness() -> Outcome {
    let agg = ivw_aggregate(&[(2.0, 0.5), (4.0, 1.0)]).unwrap();
    let equal = ivw_aggregate(&[(1.0, 0.3), (2.0, 0.3), (6.0, 0.3)]).unwrap();
    let tau2 = implied_tau2(1.05, 0.97);
    let pass = within(agg.mean, 2.4, 1e-12)
        && within(agg.se, 1.0 / 5f64.sqrt(), 1e-12)
        && within(equal.mean, 3.0, 1e-12)
        && within(tau2, 0.0341, 1e-3);
    outcome(pass, format!("mean {} se {} equal-SE mean {} tau2 {tau2:.5}", agg.mean, agg.se, equal.mean))
}

/// Loading correlation after aligning each factor's sign with the truth.
fn loading_correlation(fit: &DMatrix<f64>, truth: &DMatrix<f64>, loadings: &[(usize, usize)]) -> f64 {
    let m = truth.ncols();
    let sign: Vec<f64> = (0..m)
        .map(|c| {
            let dot: f64 = loadings.iter().filter(|l| l.1 == c).map(|&(j, _)| fit[(j, c)] * truth[(j, c)]).sum();
            if dot < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    let est: Vec<f64> = loadings.iter().map(|&(j, c)| sign[c] * fit[(j, c)]).collect();
    let tru: Vec<f64> = loadings.iter().map(|&(j, c)| truth[(j, c)]).collect();
    pearson(&est, &tru)
}

fn cfa_recovery() -> Outcome {
    let start = Instant::now();
    let per_seed: Vec<(f64, f64, f64)> = (0..30u64)
        .into_par_iter()
        .map(|seed| {
            let truth = CfaGenSpec::structured(StructureKind::BiFact, &[10, 10, 10], 3000, 1000 + seed).unwrap();
            let rm = gen_cfa_data(&truth).unwrap();
            let tetra = tetrachoric_matrix(&rm).unwrap();
            let names = truth.bench_names.clone();
            let bi = StructureSpec::new(StructureKind::BiFact, &truth.bench_of, &names).unwrap();
            let g = StructureSpec::new(StructureKind::GFact, &truth.bench_of, &names).unwrap();
            let fb = fit_dwls(&bi, &tetra, rm.n_models()).unwrap();
            let fg = fit_dwls(&g, &tetra, rm.n_models()).unwrap();
            (loading_correlation(&fb.lambda, &truth.lambda, &bi.loadings), fb.indices.rmsea, fg.indices.rmsea)
        })
        .collect();
    let recovered = per_seed.iter().filter(|s| s.0 > 0.95).count();
    let ordered = per_seed.iter().filter(|s| s.2 > s.1).count();
    let min_r = per_seed.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let pass = recovered >= 28 && ordered >= 28 && start.elapsed() < Duration::from_secs(600);
    outcome(pass, format!("r > 0.95 in {recovered}/30 (min {min_r:.3}), RMSEA_g > RMSEA_bi in {ordered}/30"))
}

fn all_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).collect()
}

fn mi_calibration_and_power() -> Outcome {
    let names = vec!["b".to_string()];
    let null: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let truth = CfaGenSpec::structured(StructureKind::GFact, &[12], 3000, 2000 + seed).unwrap();
            let rm = gen_cfa_data(&truth).unwrap();
            let tetra = tetrachoric_matrix(&rm).unwrap();
            let spec = StructureSpec::new(StructureKind::GFact, &truth.bench_of, &names).unwrap();
            let fit = fit_dwls(&spec, &tetra, rm.n_models()).unwrap();
            let rep = modification_indices(&fit, &tetra, &all_pairs(12)).unwrap();
            mean(&rep.entries.iter().map(|e| e.mi).collect::<Vec<_>>())
        })
        .collect();
    let null_mean = mean(&null);
    let power: Vec<(bool, f64)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let truth = CfaGenSpec::structured(StructureKind::GFact, &[8], 3000, 3000 + seed)
                .unwrap()
                .with_residual_correlation(0, 1, 0.3);
            let rm = gen_cfa_data(&truth).unwrap();
            let tetra = tetrachoric_matrix(&rm).unwrap();
            let spec = StructureSpec::new(StructureKind::GFact, &truth.bench_of, &names).unwrap();
            let fit = fit_dwls(&spec, &tetra, rm.n_models()).unwrap();
            let rep = modification_indices(&fit, &tetra, &all_pairs(8)).unwrap();
            let best = rep.max().unwrap();
            let target = rep.entries.iter().find(|e| (e.a, e.b) == (0, 1)).unwrap();
            let refit = fit_dwls(&spec.clone().with_free_resid(&[(0, 1)]), &tetra, rm.n_models()).unwrap();
            ((best.a, best.b) == (0, 1), target.mi / (fit.chi2 - refit.chi2))
        })
        .collect();
    let hits = power.iter().filter(|p| p.0).count();
    let ratio_ok = power.iter().filter(|p| (0.8..=1.2).contains(&p.1)).count();
    let ratios: Vec<f64> = power.iter().map(|p| p.1).collect();
    let pass = (0.8..=1.2).contains(&null_mean) && hits >= 95 && ratio_ok >= 95;
    outcome(
        pass,
        format!(
            "null mean MI {null_mean:.3}; max at (1,2) in {hits}/100; MI/dchi2 in range {ratio_ok}/100 (median {:.3})",
            benchmetry::numeric::median(&ratios)
        ),
    )
}

fn one_way(groups: usize, per: usize, su: f64, se: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let mut y = Vec::new();
    let mut g = Vec::new();
    for k in 0..groups {
        let u = su.sqrt() * normal::draw(&mut rng);
        for _ in 0..per {
            y.push(5.0 + u + se.sqrt() * normal::draw(&mut rng));
            g.push(k);
        }
    }
    (y, g)
}

/// Balanced one-way ANOVA estimates `(σ²_u, σ²_e)`.
fn anova(y: &[f64], groups: usize, per: usize) -> (f64, f64) {
    let grand = mean(y);
    let means: Vec<f64> = (0..groups).map(|k| mean(&y[k * per..(k + 1) * per])).collect();
    let msb = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() * per as f64 / (groups - 1) as f64;
    let msw =
        (0..groups).map(|k| y[k * per..(k + 1) * per].iter().map(|v| (v - means[k]).powi(2)).sum::<f64>()).sum::<f64>()
            / (groups * (per - 1)) as f64;
    ((msb - msw) / per as f64, msw)
}

fn two_facet(seed: u64) -> (f64, f64, f64) {
    let mut rng = seeded_rng(seed);
    let ua: Vec<f64> = (0..200).map(|_| 2.0 * normal::draw(&mut rng)).collect();
    let ub: Vec<f64> = (0..50).map(|_| normal::draw(&mut rng)).collect();
    let (mut y, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..200 {
        for j in 0..50 {
            y.push(ua[i] + ub[j] + normal::draw(&mut rng));
            a.push(i);
            b.push(j);
        }
    }
    let fit = fit_reml(
        &MixedSpec::new(y).with_term(RandomTerm::intercept("A", &a)).with_term(RandomTerm::intercept("B", &b)),
    )
    .unwrap();
    (fit.term("A").unwrap().intercept.unwrap(), fit.term("B").unwrap().intercept.unwrap(), fit.residual)
}

fn reml_correctness() -> Outcome {
    let (y, g) = one_way(40, 5, 2.0, 1.0, 17);
    let (su, se) = anova(&y, 40, 5);
    let fit = fit_reml(&MixedSpec::new(y).with_term(RandomTerm::intercept("g", &g))).unwrap();
    let anova_gap = (fit.terms[0].intercept.unwrap() - su).abs().max((fit.residual - se).abs());

    // Sampling error of σ²_B from 50 levels is about 20%, so recovery is
    // judged on the mean over replicated designs.
    let reps: Vec<(f64, f64, f64)> = (0..8u64).into_par_iter().map(|r| two_facet(400 + r)).collect();
    let avg = |f: fn(&(f64, f64, f64)) -> f64| mean(&reps.iter().map(f).collect::<Vec<_>>());
    let (va, vb, ve) = (avg(|r| r.0), avg(|r| r.1), avg(|r| r.2));
    let recovered = within(va, 4.0, 0.8) && within(vb, 1.0, 0.2) && within(ve, 1.0, 0.2);

    let spec = GStudyGenSpec::new(4000, 5, [1000, 500, 50], 9)
        .intercept("A", 0.5)
        .intercept("B", 0.02)
        .intercept("C", 0.3)
        .intercept("D", 0.05)
        .intercept("BxA", 0.3)
        .slope("A", 0.1)
        .slope("BxA", 0.05);
    let spec = GStudyGenSpec { beta: 0.5, ..spec };
    let sample = gen_gstudy_scores(&spec).unwrap();
    let scores: Vec<f64> = sample.md.scores.iter().map(|s| s.value).collect();
    let (observed, implied) = (variance(&scores), spec.implied_variance());
    let decomposition = ((observed - implied) / implied).abs() < 0.05;

    let pass = anova_gap < 1e-6 && recovered && decomposition;
    outcome(
        pass,
        format!(
            "|REML - ANOVA| {anova_gap:.2e}; mean (A, B, e) = ({va:.3}, {vb:.3}, {ve:.3}); Var(y) {observed:.4} vs {implied:.4} at n={}",
            scores.len()
        ),
    )
}

fn mhrm_config(seed: u64) -> MhrmConfig {
    MhrmConfig { cycles: 1500, se_draws: 60, trace_every: 0, seed, ..Default::default() }
}

fn mhrm_recovery() -> Outcome {
    let start = Instant::now();
    let (measurement, regression) = rayon::join(
        || {
            let s = gen_irt_data(&IrtGenSpec::new(2000, vec![20, 20, 20], 21)).unwrap();
            let fit = fit_mhrm(&s.rm, None, false, &mhrm_config(1)).unwrap();
            let a_hat: Vec<f64> = fit.params.a0().into_iter().chain(fit.params.ak()).collect();
            let a_true: Vec<f64> = s.truth.params.a0().into_iter().chain(s.truth.params.ak()).collect();
            (pearson(&a_hat, &a_true), pearson(&fit.params.b(), &s.truth.params.b()))
        },
        || {
            let mut spec = IrtGenSpec::new(1500, vec![15, 15], 22);
            spec.regression = Some(LatRegTruth::new(vec![1.0, 0.0, 0.0], 60, 0.3));
            let s = gen_irt_data(&spec).unwrap();
            let fit = fit_mhrm(&s.rm, s.md.as_ref(), true, &mhrm_config(2)).unwrap();
            extract_scaling_vector(&fit).unwrap().into_iter().map(|b| b.0).collect::<Vec<f64>>()
        },
    );
    let (ra, rb) = measurement;
    let beta_ok = (0.8..=1.2).contains(&regression[0]) && regression[1..].iter().all(|b| b.abs() <= 0.15);
    let rows = attenuation_demo(&[0.9, 0.6, 0.3], &[1.0, 1.0, 1.0], 10_000, 5);
    let atten_ok = rows.iter().all(|r| within(r.ols, r.lambda * r.beta, 0.1 * r.lambda * r.beta));
    let ols: Vec<String> = rows.iter().map(|r| format!("{:.3}/{:.2}", r.ols, r.lambda * r.beta)).collect();
    let pass = ra > 0.9 && rb > 0.95 && beta_ok && atten_ok && start.elapsed() < Duration::from_secs(1200);
    outcome(pass, format!("corr(a) {ra:.3} corr(b) {rb:.3}; beta {regression:.3?}; OLS/lambda*beta {}", ols.join(" ")))
}

fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (mut s, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = if x[i] == x[j] { 0.0 } else { (x[i] - x[j]).signum() };
            let dy = if y[i] == y[j] { 0.0 } else { (y[i] - y[j]).signum() };
            s += dx * dy;
            tx += dx * dx;
            ty += dy * dy;
        }
    }
    s / (tx * ty).sqrt()
}

/// Distance correlation from doubly centred distance matrices.
fn brute_dcor(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let centred = |v: &[f64]| {
        let d = DMatrix::from_fn(n, n, |i, j| (v[i] - v[j]).abs());
        let row: Vec<f64> = (0..n).map(|i| d.row(i).sum() / n as f64).collect();
        let all = d.sum() / (n * n) as f64;
        DMatrix::from_fn(n, n, |i, j| d[(i, j)] - row[i] - row[j] + all)
    };
    let (a, b) = (centred(x), centred(y));
    let dcov = |p: &DMatrix<f64>, q: &DMatrix<f64>| p.component_mul(q).sum() / (n * n) as f64;
    (dcov(&a, &b).max(0.0) / (dcov(&a, &a) * dcov(&b, &b)).sqrt()).sqrt()
}

fn rank_statistics() -> Outcome {
    let mut rng = seeded_rng(88);
    let mut worst = 0.0f64;
    let mut agree = true;
    for _ in 0..50 {
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0..4) as f64).collect();
        let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let (k, kb) = (kendall_tau_b(&x, &y), brute_tau_b(&x, &y));
        if k.is_nan() != kb.is_nan() {
            agree = false;
        } else if !k.is_nan() {
            worst = worst.max((k - kb).abs());
        }
        worst = worst.max((distance_correlation(&x, &y) - brute_dcor(&x, &y)).abs());
    }
    let v: Vec<f64> = (0..10).map(|i| (i as f64).powi(2)).collect();
    let rev: Vec<f64> = v.iter().rev().copied().collect();
    let boundary =
        kendall_tau_b(&v, &v) == 1.0 && kendall_tau_b(&v, &rev) == -1.0 && distance_correlation(&v, &v) == 1.0;
    let pass = agree && worst < 1e-12 && boundary;
    outcome(pass, format!("max |diff| {worst:.1e}; identity/reversal exact: {boundary}"))
}

fn dwls_gradients() -> Outcome {
    let p = 9;
    let bench_of: Vec<usize> = (0..p).map(|j| j / 3).collect();
    let names: Vec<String> = (0..3).map(|b| format!("b{b}")).collect();
    let mut rng = seeded_rng(99);
    let mut s = DMatrix::identity(p, p);
    for a in 0..p {
        for b in 0..a {
            let v = rng.random_range(-0.3..0.7);
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    let tetra = TetraResult {
        avar: DMatrix::from_fn(p, p, |a, b| if a == b { 0.0 } else { 0.5 + ((a + 2 * b) % 4) as f64 * 0.4 }),
        tau: vec![0.0; p],
        n_eff_pair: DMatrix::from_element(p, p, 500),
        n_obs: 500,
        repaired: false,
        failed_pairs: Vec::new(),
        s,
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for kind in StructureKind::ALL {
        let spec = StructureSpec::new(kind, &bench_of, &names).unwrap();
        let obj = DwlsObjective::new(&spec, &tetra).unwrap();
        let nl = spec.loadings.len();
        for _ in 0..20 {
            let x: Vec<f64> = (0..spec.n_params())
                .map(|i| if i < nl { rng.random_range(-0.9..0.9) } else { rng.random_range(-0.6..0.6) })
                .collect();
            let mut g = vec![0.0; x.len()];
            obj.value_grad(&x, &mut g);
            let mut fd = vec![0.0; x.len()];
            numeric_gradient(|z| obj.value(z), &x, 1e-6, &mut fd);
            for (a, b) in g.iter().zip(&fd) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
            checked += 1;
        }
    }
    outcome(worst <= 1e-5, format!("{checked} points over 6 structures; max relative error {worst:.2e}"))
}

fn determinism() -> Outcome {
    let cfa_rm = gen_cfa_data(&CfaGenSpec::structured(StructureKind::BiFact, &[8, 8, 8], 400, 3).unwrap()).unwrap();
    let cfa_cfg = CampaignConfig { replications: 3, r_k: vec![4], seed: 7, ..Default::default() };
    let mut irt = IrtGenSpec::new(300, vec![8, 8], 4);
    irt.regression = Some(LatRegTruth::new(vec![1.0, 0.0, 0.0], 20, 0.3));
    let irt = gen_irt_data(&irt).unwrap();
    let md = irt.md.unwrap();
    let mut lr_cfg = CampaignConfig { replications: 2, r_k: vec![5], seed: 8, ..Default::default() };
    lr_cfg.mhrm.cycles = 200;
    lr_cfg.mhrm.burnin = 50;
    lr_cfg.mhrm.se_draws = 10;
    let reports = || {
        let cfa = serde_json::to_string(&run_cfa_campaign(&cfa_rm, &cfa_cfg).unwrap()).unwrap();
        let lr = serde_json::to_string(&run_latreg_campaign(&irt.rm, &md, &lr_cfg).unwrap()).unwrap();
        (cfa, lr)
    };
    let first = reports();
    let again = reports();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(reports);
    let pass = first == again && first == single;
    outcome(pass, format!("CFA and latent-regression reports identical across reruns and thread counts: {pass}"))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("scaling-metric arithmetic", metric_arithmetic),
        ("benchmark variance share", variance_share),
        ("inverse-variance weighting", ivw_exactness),
        ("CFA recovery", cfa_recovery),
        ("MI calibration and power", mi_calibration_and_power),
        ("REML correctness", reml_correctness),
        ("MH-RM recovery", mhrm_recovery),
        ("rank statistics", rank_statistics),
        ("DWLS gradients", dwls_gradients),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        // Written straight to stderr so the line survives output capture.
        let _ = writeln!(
            std::io::stderr(),
            "acceptance {:>2} {status} {name}: {} [{:.1}s]",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
