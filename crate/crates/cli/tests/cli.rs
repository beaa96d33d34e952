use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikestage"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const STAGES: &str = r#"synth.stages="W*2 N1*2 N2*2 N3*2 REM*2""#;

fn synth(dir: &Path, subjects: usize) {
    let o = run(dir, &["synth", "--out", "data", "--set", STAGES, "--set", &format!("synth.subjects={subjects}")]);
    assert!(o.status.success(), "{}", stderr(&o));
}

/// Small, fast model and training settings plus the synthetic manifest.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{
  "data.manifest": "data/manifest.json",
  "model": {"depth": 1, "dim": 8, "mlp_dim": 8, "heads": 2, "attention_scale": 2.0, "dropout": 0.0},
  "train.epochs": 2,
  "train.batch_size": 8,
  "train.learning_rate": 0.003
}"#,
    )
    .unwrap();
    path
}

fn only_run_dir(out: &Path, prefix: &str) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

#[test]
fn synth_writes_records_annotations_and_manifest() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), 4);
    let data = t.path().join("data");
    let names: Vec<String> = fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 4);
    assert_eq!(names.iter().filter(|n| n.ends_with(".annotations.txt")).count(), 4);
    assert_eq!(names.iter().filter(|n| *n == "manifest.json").count(), 1);

    let first: Vec<(String, Vec<u8>)> = {
        let mut v: Vec<_> = names.iter().map(|n| (n.clone(), fs::read(data.join(n)).unwrap())).collect();
        v.sort();
        v
    };
    synth(t.path(), 4);
    for (n, bytes) in first {
        assert_eq!(fs::read(data.join(&n)).unwrap(), bytes, "{n} changed on rerun");
    }
}

#[test]
fn synth_without_spec_names_the_key() {
    let t = tempfile::tempdir().unwrap();
    let o = run(t.path(), &["synth", "--out", "data"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("synth.stages"), "{}", stderr(&o));
}

#[test]
fn encode_writes_one_file_per_scored_epoch() {
    let t = tempfile::tempdir().unwrap();
    let o = run(
        t.path(),
        &["synth", "--out", "data", "--set", r#"synth.stages="W*4 N1*4 N2*4 N3*4 REM*4""#, "--set", "synth.subjects=2"],
    );
    assert!(o.status.success());
    let cfg = small_config(t.path());
    let o = run(t.path(), &["encode", "--config", cfg.to_str().unwrap(), "--out", "runs", "--ablation-threshold", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("encoded 40 epochs"), "{}", stdout(&o));
    let run_dir = only_run_dir(&t.path().join("runs"), "encode-");
    assert!(run_dir.join("resolved_config.json").is_file());
    let feats: Vec<PathBuf> = fs::read_dir(run_dir.join("features")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(feats.iter().filter(|p| p.extension().unwrap() == "f32").count(), 40);
    let sidecar = feats.iter().find(|p| p.to_string_lossy().ends_with(".meta.json")).unwrap();
    let meta: Value = serde_json::from_str(&fs::read_to_string(sidecar).unwrap()).unwrap();
    assert_eq!(meta["params"]["arm"]["arm"], "threshold");
    assert_eq!(meta["params"]["arm"]["cutoff"], 0.5);
}

#[test]
fn corrupted_record_fails_and_names_file() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), 2);
    fs::write(t.path().join("data/subj01.csv"), "C4-A1\n1.0\nnot-a-number\n").unwrap();
    let cfg = small_config(t.path());
    let o = run(t.path(), &["encode", "--config", cfg.to_str().unwrap(), "--out", "runs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("subj01.csv"), "{}", stderr(&o));
}

#[test]
fn cv_reports_each_fold_and_pooled() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), 4);
    let cfg = small_config(t.path());
    let o = run(t.path(), &["cv", "--config", cfg.to_str().unwrap(), "--folds", "2", "--out", "runs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("fold 0") && out.contains("fold 1") && out.contains("pooled"));
    let dir = only_run_dir(&t.path().join("runs"), "cv-");
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 2);
    let total: u64 = report["pooled_confusion"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()))
        .sum();
    assert_eq!(total, 40);
    for s in ["subj00", "subj01", "subj02", "subj03"] {
        let csv = fs::read_to_string(dir.join("hypnograms").join(format!("{s}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 11);
        assert!(dir.join("hypnograms").join(format!("{s}.svg")).is_file());
    }
    let resolved: Value = serde_json::from_str(&fs::read_to_string(dir.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["folds.k"], 2);
    assert_eq!(resolved["model.depth"], 1);

    let o = run(t.path(), &["report", dir.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("Overall Accuracy") && text.lines().any(|l| l.starts_with("Pre")));
}

#[test]
fn ablate_prints_two_matrices_and_deltas() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), 4);
    let cfg = small_config(t.path());
    let o = run(t.path(), &["ablate", "--config", cfg.to_str().unwrap(), "--folds", "2", "--out", "runs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.matches("true\\pred").count(), 2);
    assert!(out.contains("dF1"));
    let dir = only_run_dir(&t.path().join("runs"), "ablate-");
    let hg: Value = serde_json::from_str(&fs::read_to_string(dir.join("half_gaussian/report.json")).unwrap()).unwrap();
    let th: Value = serde_json::from_str(&fs::read_to_string(dir.join("threshold/report.json")).unwrap()).unwrap();
    assert_eq!(hg["encoder"]["arm"]["arm"], "half_gaussian");
    assert_eq!(th["encoder"]["arm"]["arm"], "threshold");
    assert_eq!(hg["plan"], th["plan"]);
}

fn dry_run_resolved(dir: &Path, args: &[&str]) -> Value {
    let mut full = vec!["cv", "--dry-run"];
    full.extend_from_slice(args);
    let o = run(dir, &full);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let json_end = out.rfind('}').unwrap();
    serde_json::from_str(&out[..=json_end]).unwrap()
}

#[test]
fn precedence_is_flag_then_file_then_default() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), 2);
    let cfg = t.path().join("c.json");
    fs::write(&cfg, r#"{"data.manifest": "data/manifest.json", "seed": 5, "encoder.sigma": 0.7}"#).unwrap();
    let c = cfg.to_str().unwrap();

    let r = dry_run_resolved(t.path(), &["--config", c]);
    assert_eq!(r["seed"], 5);
    assert_eq!(r["encoder.sigma"], 0.7);
    assert_eq!(r["model.depth"], 8);
    assert_eq!(r["train.learning_rate"], 1e-4);

    let r = dry_run_resolved(t.path(), &["--config", c, "--seed", "9", "--sigma", "0.3"]);
    assert_eq!(r["seed"], 9);
    assert_eq!(r["encoder.sigma"], 0.3);
    assert_eq!(r["encoder.window_size"], 125);
}

#[test]
fn dry_run_writes_nothing() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), 2);
    let cfg = small_config(t.path());
    for cmd in ["encode", "train", "cv", "ablate"] {
        let o = run(t.path(), &[cmd, "--config", cfg.to_str().unwrap(), "--out", "runs", "--dry-run"]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    assert!(!t.path().join("runs").exists());
    let o = run(t.path(), &["synth", "--out", "fresh", "--set", STAGES, "--dry-run"]);
    assert!(o.status.success());
    assert!(!t.path().join("fresh").exists());
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), 2);
    let cfg = small_config(t.path());
    let c = cfg.to_str().unwrap();
    assert_eq!(run(t.path(), &["cv", "--set", "model.dpeth=2"]).status.code(), Some(1));
    assert_eq!(run(t.path(), &["cv", "--config", c, "--accum-width", "7", "--dry-run"]).status.code(), Some(1));
    assert_eq!(run(t.path(), &["frobnicate"]).status.code(), Some(1));
    let o = run(t.path(), &["train", "--config", c, "--out", "runs", "--set", "train.learning_rate=1e300"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = run(t.path(), &["train", "--config", c, "--out", "runs"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = only_run_dir(&t.path().join("runs"), "train-");
    assert!(dir.join("model.bin").is_file() && dir.join("loss_trace.csv").is_file());
}
