use crate::config::{RunConfig, SimKind};
use crate::error::CliError;
use crate::output::{read_json, write_csv, write_json, write_table};
use benchmetry::analysis::{
    rank_compare, run_cfa_campaign, run_latreg_campaign, scaling_plot_data, ScalingPlot, METRICS,
};
use benchmetry::data::{
    ingest_metadata, ingest_responses, write_metadata, write_responses, EcosystemMetadata, Layout, ResponseMatrix,
};
use benchmetry::gtheory::{
    gstudy_base_design, gstudy_slopes_design, scaling_metrics, variance_table, FacetDesign, GError, VarianceComponents,
    SIZE_COVARIATE,
};
use benchmetry::irt::{fit_mhrm, MhrmConfig};
use benchmetry::sim::{
    gen_cfa_data, gen_gstudy_scores, gen_irt_data, CfaGenSpec, GStudyGenSpec, IrtGenSpec, LatRegTruth, SimError,
};
use serde_json::{json, Map, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

const PERCENT_RANK_METRICS: [&str; 7] = ["rmsea", "cfi", "tli", "srmr", "aic", "bic", "loglik"];

pub fn dispatch(name: &str, cfg: &mut RunConfig) -> Result<(), CliError> {
    match name {
        "ingest" => ingest(cfg),
        "simulate" => simulate(cfg),
        "cfa" => cfa(cfg),
        "gstudy" => gstudy(cfg),
        "latreg" => latreg(cfg),
        "rank" => rank(cfg),
        "report" => report(cfg),
        other => Err(CliError::Validation(format!("unknown subcommand `{other}`"))),
    }
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::Data(d) => d.into(),
        other => CliError::Validation(other.to_string()),
    }
}

fn g_err(e: GError) -> CliError {
    match e {
        GError::Data(d) => d.into(),
        e @ (GError::SingleLevel(_) | GError::Empty) => CliError::Validation(e.to_string()),
        other => CliError::Fit(other.to_string()),
    }
}

fn layout(cfg: &RunConfig) -> Result<Layout, CliError> {
    cfg.data.layout.parse().map_err(CliError::Validation)
}

fn load_responses(cfg: &RunConfig) -> Result<ResponseMatrix, CliError> {
    let path = cfg
        .data
        .responses
        .as_ref()
        .ok_or_else(|| CliError::Validation("no response file given (--responses or data.responses)".into()))?;
    let (rm, manifest) = ingest_responses(path, layout(cfg)?)?;
    log::info!(
        "responses: {} models, {} items, {} benchmarks, {} zero-variance items",
        rm.n_models(),
        rm.n_items(),
        rm.n_benches(),
        manifest.zero_variance_items.len()
    );
    Ok(rm)
}

fn load_metadata(cfg: &RunConfig) -> Result<EcosystemMetadata, CliError> {
    let path = cfg
        .data
        .metadata
        .as_ref()
        .ok_or_else(|| CliError::MetaMissing("metadata file required (--metadata or data.metadata)".into()))?;
    if !path.exists() {
        return Err(CliError::MetaMissing(format!("metadata file {} not found", path.display())));
    }
    let md = ingest_metadata(path)?;
    log::info!("metadata: {} models, {} score rows, {} rows dropped", md.n_models(), md.scores.len(), md.dropped_rows);
    Ok(md)
}

fn plot_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out.join("plotdata");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn write_plot(dir: &Path, stem: &str, ids: &[String], plot: &ScalingPlot) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = ids
        .iter()
        .zip(&plot.points)
        .map(|(id, p)| {
            vec![
                id.clone(),
                p.x.to_string(),
                p.y.to_string(),
                p.group.clone().unwrap_or_default(),
                p.fitted.to_string(),
                p.lower.to_string(),
                p.upper.to_string(),
            ]
        })
        .collect();
    write_table(
        &dir.join(format!("{stem}.csv")),
        &["model_id", "log10_nbpars", "log10_score", "group", "fitted", "lower", "upper"],
        &rows,
    )?;
    write_json(&dir.join(format!("{stem}_line.json")), &plot.line)
}

fn ingest(cfg: &mut RunConfig) -> Result<(), CliError> {
    let mut done = false;
    if let Some(src) = &cfg.data.responses {
        let (rm, manifest) = ingest_responses(src, layout(cfg)?)?;
        let dst = cfg.out.join("responses.csv");
        write_responses(&rm, &dst, Layout::Wide)?;
        manifest.write_beside(&dst)?;
        println!(
            "responses: {} models, {} items in {} benchmarks ({} zero-variance, {} rows dropped)",
            rm.n_models(),
            rm.n_items(),
            rm.n_benches(),
            manifest.zero_variance_items.len(),
            manifest.dropped_rows
        );
        done = true;
    }
    if let Some(src) = &cfg.data.metadata {
        let md = ingest_metadata(src)?;
        let dst = cfg.out.join("metadata.csv");
        write_metadata(&md, &dst)?;
        md.manifest(src).write_beside(&dst)?;
        println!("metadata: {} models, {} scores ({} rows dropped)", md.n_models(), md.scores.len(), md.dropped_rows);
        done = true;
    }
    if !done {
        return Err(CliError::Validation("nothing to ingest (--responses and/or --metadata)".into()));
    }
    Ok(())
}

fn simulate(cfg: &mut RunConfig) -> Result<(), CliError> {
    let s = cfg.simulate.clone();
    let responses = cfg.out.join("responses.csv");
    let metadata = cfg.out.join("metadata.csv");
    let truth = cfg.out.join("truth.json");
    match s.kind {
        SimKind::Cfa => {
            let spec = CfaGenSpec::structured(s.structure, &s.benches, s.n, cfg.seed).map_err(sim_err)?;
            let rm = gen_cfa_data(&spec).map_err(sim_err)?;
            write_responses(&rm, &responses, Layout::Wide)?;
            write_json(&truth, &spec)?;
            cfg.data.responses = Some(responses);
            println!("simulated {} {} models × {} items", s.structure, rm.n_models(), rm.n_items());
        }
        SimKind::Irt => {
            let mut spec = IrtGenSpec::new(s.n, s.benches.clone(), cfg.seed);
            if s.latreg {
                let d = s.benches.len() + 1;
                let beta = if s.beta.is_empty() {
                    (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
                } else {
                    s.beta.clone()
                };
                if beta.len() != d {
                    return Err(CliError::Validation(format!("{} slopes for {d} dimensions", beta.len())));
                }
                spec.regression = Some(LatRegTruth::new(beta, s.contributors, s.contributor_sd));
            }
            let sample = gen_irt_data(&spec).map_err(sim_err)?;
            write_responses(&sample.rm, &responses, Layout::Wide)?;
            if let Some(md) = &sample.md {
                write_metadata(md, &metadata)?;
                cfg.data.metadata = Some(metadata);
            }
            write_json(&truth, &json!({ "spec": spec, "truth": sample.truth }))?;
            cfg.data.responses = Some(responses);
            println!("simulated bifactor IRT: {} models × {} items", sample.rm.n_models(), sample.rm.n_items());
        }
        SimKind::Gstudy => {
            let [n_benches] = s.benches[..] else {
                return Err(CliError::Validation("G-study simulation takes one benchmark count".into()));
            };
            let mut spec = GStudyGenSpec::new(s.n, n_benches, s.levels, cfg.seed)
                .intercept("A", 0.4)
                .intercept("B", 0.6)
                .intercept("C", 0.2)
                .intercept("D", 0.1)
                .intercept("BxA", 0.1)
                .slope("B", 0.05)
                .slope("A", 0.02);
            spec.beta = s.beta.first().copied().unwrap_or(0.5);
            spec.x_mean = 1.0;
            spec.x_sd = 0.5;
            let sample = gen_gstudy_scores(&spec).map_err(sim_err)?;
            write_metadata(&sample.md, &metadata)?;
            write_json(&truth, &spec)?;
            cfg.data.metadata = Some(metadata);
            println!("simulated G-study scores: {} models × {n_benches} benchmarks", sample.md.n_models());
        }
    }
    Ok(())
}

fn metric_map(names: &[&str], values: &[f64]) -> Map<String, Value> {
    names.iter().zip(values).map(|(n, v)| (n.to_string(), json!(v))).collect()
}

fn cfa(cfg: &mut RunConfig) -> Result<(), CliError> {
    let rm = load_responses(cfg)?;
    let camp = run_cfa_campaign(&rm, &cfg.campaign)?;
    write_csv(&cfg.out.join("fit_stats.csv"), &camp.rows)?;
    if camp.mi.is_empty() {
        write_table(
            &cfg.out.join("mi_sepc.csv"),
            &["replication", "structure", "item_a", "item_b", "bench_a", "bench_b", "mi", "epc", "sepc"],
            &[],
        )?;
    } else {
        write_csv(&cfg.out.join("mi_sepc.csv"), &camp.mi)?;
    }
    write_csv(&plot_dir(cfg)?.join("sepc_pairs.csv"), &camp.sepc)?;
    let medians: Vec<Value> = camp
        .medians
        .iter()
        .map(|m| {
            json!({
                "structure": m.structure,
                "condition": m.condition,
                "n": m.n,
                "medians": metric_map(&METRICS, &m.medians),
            })
        })
        .collect();
    let ranks: Vec<Value> = camp
        .percent_ranks
        .iter()
        .map(|r| json!({ "structure": r.structure, "ranks": metric_map(&PERCENT_RANK_METRICS, &r.ranks) }))
        .collect();
    write_json(
        &cfg.out.join("cfa_summary.json"),
        &json!({
            "replications": cfg.campaign.replications,
            "failed_replications": camp.failed_replications,
            "medians": medians,
            "percent_ranks": ranks,
            "meta_regression": camp.meta,
            "sepc": camp.sepc,
        }),
    )?;
    println!("{:<11} {:<9} {:>8} {:>8} {:>8} {:>8}", "structure", "condition", "rmsea", "cfi", "tli", "srmr");
    for m in &camp.medians {
        println!(
            "{:<11} {:<9} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            m.structure.as_str(),
            m.condition.as_str(),
            m.medians[METRICS.iter().position(|n| *n == "rmsea").unwrap_or(0)],
            m.medians[METRICS.iter().position(|n| *n == "cfi").unwrap_or(0)],
            m.medians[METRICS.iter().position(|n| *n == "tli").unwrap_or(0)],
            m.medians[METRICS.iter().position(|n| *n == "srmr").unwrap_or(0)],
        );
    }
    if camp.failed_replications > 0 {
        log::warn!("{} of {} replications failed", camp.failed_replications, cfg.campaign.replications);
    }
    Ok(())
}

/// Mean score per model over its benchmark rows, with `log10` size and the
/// architecture label.
fn manifest_points(md: &EcosystemMetadata, arch: &[String]) -> (Vec<String>, Vec<f64>, Vec<f64>, Vec<String>) {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for s in &md.scores {
        let e = acc.entry(s.model).or_insert((0.0, 0));
        e.0 += s.value;
        e.1 += 1;
    }
    let mut out = (vec![], vec![], vec![], vec![]);
    for (m, (sum, n)) in acc {
        out.0.push(md.models[m].model_id.clone());
        out.1.push(sum / n as f64);
        out.2.push(md.models[m].x);
        out.3.push(arch[m].clone());
    }
    out
}

fn gstudy(cfg: &mut RunConfig) -> Result<(), CliError> {
    let facets: BTreeSet<String> = cfg.gstudy.facets.iter().map(|f| f.trim().to_ascii_uppercase()).collect();
    let full: BTreeSet<String> = ["A", "B", "C", "D"].map(String::from).into();
    if facets != full || cfg.gstudy.facets.len() != 4 {
        return Err(CliError::Validation(format!(
            "facets {:?} unsupported; only the fully crossed A,B,C,D design is implemented",
            cfg.gstudy.facets
        )));
    }
    let md = load_metadata(cfg)?;
    if md.scores.is_empty() {
        return Err(CliError::Validation("metadata has no benchmark score rows (bench, val)".into()));
    }
    let comps = cfg.facets.compositions();
    let design = FacetDesign::from_metadata(&md, &comps).map_err(g_err)?;
    let fit =
        if cfg.gstudy.slopes { gstudy_slopes_design(&design) } else { gstudy_base_design(&design) }.map_err(g_err)?;
    let vc = VarianceComponents::from_fit(&fit);
    let table = variance_table(&vc);
    let scaling = if cfg.gstudy.slopes {
        let (mean_x, var_x) = design.x_moments();
        Some(scaling_metrics(&fit, var_x, mean_x).map_err(g_err)?)
    } else {
        None
    };
    let levels = design.n_levels();
    let fixed: Vec<Value> = fit
        .fixed_names
        .iter()
        .zip(fit.beta.iter().zip(&fit.se))
        .map(|(n, (b, se))| json!({ "name": n, "estimate": b, "se": se }))
        .collect();
    write_json(
        &cfg.out.join("varcomp.json"),
        &json!({
            "design": {
                "n_obs": design.n_obs(),
                "levels": { "A": levels[0], "B": levels[1], "C": levels[2], "D": levels[3] },
                "compositions": {
                    "A": cfg.facets.architecture,
                    "C": cfg.facets.contributor,
                    "D": cfg.facets.deployment,
                },
            },
            "slopes": cfg.gstudy.slopes,
            "terms": table,
            "fixed": fixed,
            "reml_deviance": fit.reml,
            "converged": fit.converged,
            "singular": fit.singular,
            "scaling": scaling,
        }),
    )?;
    let arch = md.facet_labels(&comps.a)?;
    let (ids, y, x, groups) = manifest_points(&md, &arch);
    match scaling_plot_data(&y, &x, Some(&groups), false) {
        Ok(plot) => write_plot(&plot_dir(cfg)?, "manifest_scaling", &ids, &plot)?,
        Err(e) => log::warn!("manifest scaling plot skipped: {e}"),
    }
    println!("{:<8} {:>10} {:>10} {:>8}", "term", "sigma2", "slope", "share");
    for r in &table {
        let slope = r.slope.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<8} {:>10.4} {:>10} {:>8.3}", r.term, r.sigma2, slope, r.share);
    }
    if !fit.converged {
        log::warn!("REML optimizer did not converge");
    }
    Ok(())
}

fn latent_plots(
    cfg: &RunConfig,
    rm: &ResponseMatrix,
    md: &EcosystemMetadata,
    dimensions: &[String],
) -> Result<(), CliError> {
    let keep: Vec<usize> = (0..rm.n_items()).filter(|&j| !rm.zero_variance()[j]).collect();
    let sub = rm.select_items(&keep)?;
    let mc = MhrmConfig { seed: cfg.seed, ..cfg.campaign.mhrm.clone() };
    let fit = fit_mhrm(&sub, None, false, &mc).map_err(|e| CliError::Fit(e.to_string()))?;
    let rows = md.align(sub.model_ids())?;
    let arch = md.facet_labels(&cfg.facets.compositions().a)?;
    let x: Vec<f64> = rows.iter().map(|&i| md.models[i].x).collect();
    let groups: Vec<String> = rows.iter().map(|&i| arch[i].clone()).collect();
    let ids = sub.model_ids().to_vec();
    let mut header = vec!["model_id"];
    header.extend(dimensions.iter().map(String::as_str));
    let theta_rows: Vec<Vec<String>> = ids
        .iter()
        .zip(&fit.theta)
        .map(|(id, th)| std::iter::once(id.clone()).chain(th.iter().map(|v| v.to_string())).collect())
        .collect();
    write_table(&cfg.out.join("theta.csv"), &header, &theta_rows)?;
    let dir = plot_dir(cfg)?;
    for (d, name) in dimensions.iter().enumerate() {
        let scores: Vec<f64> = fit.theta.iter().map(|t| t[d]).collect();
        match scaling_plot_data(&scores, &x, Some(&groups), true) {
            Ok(plot) => write_plot(&dir, &format!("latent_{name}"), &ids, &plot)?,
            Err(e) => log::warn!("latent plot for `{name}` skipped: {e}"),
        }
    }
    Ok(())
}

fn latreg(cfg: &mut RunConfig) -> Result<(), CliError> {
    let md = load_metadata(cfg)?;
    let rm = load_responses(cfg)?;
    let camp = run_latreg_campaign(&rm, &md, &cfg.campaign)?;
    let size = camp.scaling_vector();
    write_json(
        &cfg.out.join("scaling_vector.json"),
        &json!({
            "covariate": SIZE_COVARIATE,
            "replications": cfg.campaign.replications,
            "failed_replications": camp.failed_replications,
            "dimensions": size,
        }),
    )?;
    write_json(
        &cfg.out.join("latreg_summary.json"),
        &json!({
            "dimensions": camp.dimensions,
            "covariates": camp.covariates,
            "summary": camp.summary,
            "replications": camp.replications,
        }),
    )?;
    if cfg.latreg.plot {
        latent_plots(cfg, &rm, &md, &camp.dimensions)?;
    }
    println!("{:<12} {:>9} {:>9} {:>9} {:>7}", "dimension", "beta", "se", "R", "valid");
    for r in size {
        let rel = r.reliability.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        println!("{:<12} {:>9.4} {:>9.4} {:>9} {:>7}", r.dimension, r.estimate, r.se, rel, r.n_valid);
    }
    Ok(())
}

/// `model_id` plus named numeric columns.
fn read_scores(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<String>>), CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> =
        rdr.headers().map_err(|e| CliError::io(path, e))?.iter().map(|h| h.trim().to_string()).collect();
    let id = header
        .iter()
        .position(|h| h == "model_id")
        .ok_or_else(|| CliError::Validation(format!("{}: no `model_id` column", path.display())))?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        ids.push(rec.get(id).unwrap_or_default().trim().to_string());
        rows.push(rec.iter().map(|v| v.trim().to_string()).collect());
    }
    Ok((header, ids, rows))
}

fn column(path: &Path, header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>, CliError> {
    let c = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Validation(format!("{}: no column `{name}`", path.display())))?;
    rows.iter()
        .enumerate()
        .map(|(r, row)| {
            row.get(c).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| {
                CliError::Validation(format!("{}: row {}, column `{name}` is not numeric", path.display(), r + 2))
            })
        })
        .collect()
}

fn rank(cfg: &mut RunConfig) -> Result<(), CliError> {
    let rc = &cfg.rank;
    let input = rc.input.as_ref().ok_or_else(|| CliError::Validation("no score table given (--input)".into()))?;
    let (header, ids, rows) = read_scores(input)?;
    let baseline = column(input, &header, &rows, &rc.baseline)?;
    let (baseline, adjusted) = match &rc.adjusted_input {
        None => (baseline, column(input, &header, &rows, &rc.adjusted)?),
        Some(other) => {
            let (h2, ids2, rows2) = read_scores(other)?;
            let adj = column(other, &h2, &rows2, &rc.adjusted)?;
            let by_id: BTreeMap<&str, f64> = ids2.iter().map(String::as_str).zip(adj).collect();
            let mut b = Vec::new();
            let mut a = Vec::new();
            for (id, v) in ids.iter().zip(baseline) {
                if let Some(w) = by_id.get(id.as_str()) {
                    b.push(v);
                    a.push(*w);
                }
            }
            if b.len() < ids.len() {
                log::warn!("{} baseline models absent from {}", ids.len() - b.len(), other.display());
            }
            (b, a)
        }
    };
    let report = rank_compare(&baseline, &adjusted)?;
    write_json(
        &cfg.out.join("rank_report.json"),
        &json!({ "baseline": rc.baseline, "adjusted": rc.adjusted, "report": report }),
    )?;
    println!(
        "n = {}: spearman {:.3}, kendall {:.3}, dcor {:.3}, top-1% {:.2}, top-10% {:.2}, bottom-1% {:.2}",
        report.n,
        report.spearman,
        report.kendall,
        report.dcor,
        report.top1_retention,
        report.top10_retention,
        report.bottom1_retention
    );
    Ok(())
}

fn optional_json(dir: &Path, name: &str) -> Result<Option<Value>, CliError> {
    let p = dir.join(name);
    if p.exists() {
        read_json(&p).map(Some)
    } else {
        Ok(None)
    }
}

fn report(cfg: &mut RunConfig) -> Result<(), CliError> {
    let dir = cfg.out.clone();
    let mut summary = Map::new();
    if let Some(v) = optional_json(&dir, "cfa_summary.json")? {
        summary.insert(
            "fit_statistics".into(),
            json!({
                "replications": v["replications"],
                "failed_replications": v["failed_replications"],
                "medians": v["medians"],
                "percent_ranks": v["percent_ranks"],
            }),
        );
    }
    if let Some(v) = optional_json(&dir, "varcomp.json")? {
        let shares: Vec<Value> = v["terms"]
            .as_array()
            .map(|rows| {
                rows.iter()
                    .map(|r| json!({ "term": r["term"], "sigma2": r["sigma2"], "slope": r["slope"], "share": r["share"], "psi": r["psi"] }))
                    .collect()
            })
            .unwrap_or_default();
        summary.insert("variance_components".into(), json!({ "terms": shares, "scaling": v["scaling"] }));
    }
    if let Some(v) = optional_json(&dir, "scaling_vector.json")? {
        summary.insert("scaling_vector".into(), v);
    }
    if let Some(v) = optional_json(&dir, "rank_report.json")? {
        summary.insert("rank_stability".into(), v);
    }
    if summary.is_empty() {
        return Err(CliError::Validation(format!("no artifacts to report in {}", dir.display())));
    }
    let sections: Vec<String> = summary.keys().cloned().collect();
    write_json(&dir.join("summary.json"), &Value::Object(summary))?;
    println!("summary.json: {}", sections.join(", "));
    Ok(())
}
