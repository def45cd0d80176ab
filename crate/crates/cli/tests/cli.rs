use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_benchmetry"));
    c.env_remove("BENCHMETRY_OUT");
    c
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn error_codes(o: &Output) -> Vec<String> {
    String::from_utf8_lossy(&o.stderr)
        .lines()
        .filter_map(|l| serde_json::from_str::<Value>(l).ok())
        .filter_map(|v| v["code"].as_str().map(String::from))
        .collect()
}

fn simulate_cfa(out: &Path) {
    let o = run(out, &["simulate", "--kind", "cfa", "--benches", "8,8,8", "--n", "400", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

const CFA_ARGS: [&str; 7] = ["--replications", "2", "--items", "4", "--structures", "indepfact,bifact", "--seed"];

#[test]
fn simulate_then_cfa_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cfa(dir.path());
    let responses = dir.path().join("responses.csv");
    let o = bin()
        .arg("--out")
        .arg(dir.path())
        .arg("cfa")
        .arg("--responses")
        .arg(&responses)
        .args(CFA_ARGS)
        .arg("5")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = std::fs::read_to_string(dir.path().join("fit_stats.csv")).unwrap();
    // Header plus 2 replications × 2 structures × 2 conditions.
    assert_eq!(fit.lines().count(), 9);
    assert!(dir.path().join("mi_sepc.csv").exists());
    assert!(dir.path().join("plotdata/sepc_pairs.csv").exists());
    assert!(dir.path().join("resolved_config.toml").exists());

    let o = run(dir.path(), &["report"]);
    assert!(o.status.success());
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["fit_statistics"]["medians"].as_array().unwrap().len(), 4);
}

#[test]
fn latreg_without_metadata_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cfa(dir.path());
    let o = run(dir.path(), &["latreg", "--responses", dir.path().join("responses.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_codes(&o), ["E_META_MISSING"]);
}

#[test]
fn gstudy_emits_fourteen_terms_and_residual() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "--kind", "gstudy", "--benches", "4", "--n", "80"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let md = dir.path().join("metadata.csv");
    let o = run(dir.path(), &["gstudy", "--metadata", md.to_str().unwrap(), "--facets", "A,B,C,D", "--slopes"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let vc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("varcomp.json")).unwrap()).unwrap();
    let terms = vc["terms"].as_array().unwrap();
    assert_eq!(terms.len(), 15);
    assert_eq!(terms[14]["term"], "Residual");
    assert!(terms[..14].iter().all(|t| t["slope"].is_number()));
    assert!(vc["scaling"]["beta"].is_number());
    assert!(dir.path().join("plotdata/manifest_scaling.csv").exists());
}

#[test]
fn partial_facet_set_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gstudy", "--metadata", "x.csv", "--facets", "A,B"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_codes(&o), ["E_VALIDATION"]);
}

#[test]
fn resolved_config_reproduces_reports_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    simulate_cfa(dir.path());
    let responses = dir.path().join("responses.csv");
    let o = bin()
        .arg("--out")
        .arg(&first)
        .arg("cfa")
        .arg("--responses")
        .arg(&responses)
        .args(CFA_ARGS)
        .arg("11")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin()
        .arg("--config")
        .arg(first.join("resolved_config.toml"))
        .arg("--out")
        .arg(&second)
        .arg("cfa")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["cfa_summary.json", "fit_stats.csv", "mi_sepc.csv"] {
        let a = std::fs::read(first.join(name)).unwrap();
        let b = std::fs::read(second.join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "schema_version = 1\n[campaign]\nreplicates = 4\n").unwrap();
    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path()).arg("report").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_codes(&o), ["E_VALIDATION"]);
}

#[test]
fn failing_replications_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    simulate_cfa(dir.path());
    // Every replication asks for more items than a benchmark holds.
    let o = run(
        dir.path(),
        &[
            "cfa",
            "--responses",
            dir.path().join("responses.csv").to_str().unwrap(),
            "--replications",
            "2",
            "--items",
            "20",
        ],
    );
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_codes(&o), ["E_REPLICATIONS"]);
}

#[test]
fn rank_writes_report_to_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("scores.csv");
    let mut text = String::from("model_id,baseline,adjusted\n");
    for i in 0..20 {
        text.push_str(&format!("m{i},{},{}\n", i, (i as f64).powi(3)));
    }
    std::fs::write(&table, text).unwrap();
    let o =
        bin().env("BENCHMETRY_OUT", dir.path()).args(["rank", "--input", table.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rank_report.json")).unwrap()).unwrap();
    assert_eq!(r["report"]["spearman"], 1.0);
    assert_eq!(r["report"]["kendall"], 1.0);
}

#[test]
fn report_without_artifacts_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(2));
}
