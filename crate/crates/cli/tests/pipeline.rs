use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;

use memos_cli::manifest::Manifest;
use memos_cli::pipeline::{self, Comparison, Run};
use memos_cli::{Method, RunConfig};

fn small_config(seed: u64) -> RunConfig {
    let text = "n_stations = 10\nn_days = 35\nm = 10\nn = 20\nburn_in = 200\n";
    let mut c = RunConfig::parse_text(text, Path::new("test.conf")).unwrap();
    c.seed = seed;
    c
}

fn memos_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memos"))
}

#[test]
fn global_pipeline_scores_every_case() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::new(small_config(1), dir.path());
    pipeline::simulate(&run).unwrap();
    pipeline::fit(&run, Method::Global).unwrap();
    pipeline::predict(&run, Method::Global).unwrap();
    pipeline::verify(&run, None).unwrap();

    let text = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    let mut keys = BTreeSet::new();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[2] == "global" && f[3] == "crps" {
            rows += 1;
            keys.insert((f[0].to_string(), f[1].to_string()));
        }
    }
    // 35 days minus the 25-day warm-up, 10 stations
    assert_eq!(rows, 100);
    assert_eq!(keys.len(), 100);
}

#[test]
fn manifests_record_seed_and_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::new(small_config(42), dir.path());
    let report = pipeline::simulate(&run).unwrap();
    let text = fs::read_to_string(&report.manifest_path).unwrap();
    let m: Manifest = serde_json::from_str(&text).unwrap();
    assert_eq!(m.seed, 42);
    assert_eq!(m.config_hash, run.config.hash());
    assert_eq!(m.config["seed"], "42");
    assert_eq!(m.outputs.len(), 2);

    // the manifest's configuration reproduces the dataset
    let conf: String = m.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let again = RunConfig::parse_text(&conf, Path::new("manifest")).unwrap();
    assert_eq!(again.hash(), m.config_hash);
    let dir2 = tempfile::tempdir().unwrap();
    pipeline::simulate(&Run::new(again, dir2.path())).unwrap();
    assert_eq!(
        fs::read(dir.path().join("cases.csv")).unwrap(),
        fs::read(dir2.path().join("cases.csv")).unwrap()
    );
}

#[test]
fn reruns_are_byte_identical() {
    let outputs = |seed: u64| {
        let dir = tempfile::tempdir().unwrap();
        let run = Run::new(small_config(seed), dir.path());
        pipeline::run_all(&run, &[Method::Global, Method::Memos]).unwrap();
        let scores = fs::read(dir.path().join("scores.csv")).unwrap();
        let ecc = fs::read(dir.path().join("ecc_memos.csv")).unwrap();
        (scores, ecc)
    };
    let a = outputs(5);
    assert_eq!(a, outputs(5));
    assert_ne!(a.0, outputs(6).0);
}

#[test]
fn comparison_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::new(small_config(2), dir.path());
    pipeline::run_all(&run, &[Method::Local, Method::Memos]).unwrap();
    let cmp = Comparison {
        a: "memos".into(),
        b: "local".into(),
        score: "crps".into(),
        daily_mean: true,
    };
    let report = pipeline::verify(&run, Some(&cmp)).unwrap();
    assert!(report.lines.iter().any(|l| l.starts_with("DM memos vs local")));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("dm_memos_local_crps.json")).unwrap()).unwrap();
    assert_eq!(v["n"], 10);
    let p = v["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let missing = Comparison {
        a: "memos".into(),
        b: "global".into(),
        score: "crps".into(),
        daily_mean: false,
    };
    assert!(pipeline::verify(&run, Some(&missing)).is_err());
}

#[test]
fn missing_upstream_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::new(small_config(1), dir.path());
    let e = pipeline::fit(&run, Method::Global).unwrap_err().to_string();
    assert!(e.contains("cases.csv") && e.contains("memos simulate"), "{e}");
    pipeline::simulate(&run).unwrap();
    let e = pipeline::predict(&run, Method::Memos).unwrap_err().to_string();
    assert!(e.contains("fit_memos.json"), "{e}");
    let e = pipeline::ecc(&run, Method::Local).unwrap_err().to_string();
    assert!(e.contains("predictive_local.csv"), "{e}");
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "n_stations = 10\nn_days = 30\nm = 10\n").unwrap();
    let out = dir.path().join("out");

    let ok = memos_bin()
        .args(["simulate", "--seed", "9", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(ok.status.success());
    assert!(out.join("simulate.manifest.json").is_file());

    let fail = memos_bin().args(["predict", "--method", "local", "--out"]).arg(&out).output().unwrap();
    assert!(!fail.status.success());
    let err = String::from_utf8(fail.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("fit_local.json"));

    fs::write(&conf, "n_stations = 10\nwindow = 3\n").unwrap();
    let bad = memos_bin().arg("simulate").arg("--config").arg(&conf).output().unwrap();
    assert!(!bad.status.success());
    let err = String::from_utf8(bad.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("line 2"), "{err}");
}
