use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clx_core::recover::read_pdus;
use tempfile::TempDir;

fn clx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clx")).args(args).output().expect("clx runs")
}

fn ok(args: &[&str]) {
    let out = clx(args);
    assert!(out.status.success(), "clx {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn gen(dir: &Path, name: &str, pdus: usize, seed: u64) -> (String, String) {
    let (bin, ann) = (p(dir, &format!("{name}.bin")), p(dir, &format!("{name}.ann")));
    ok(&["gen", "--pdus", &pdus.to_string(), "--seed", &seed.to_string(), "--out", &bin, "--ann", &ann]);
    (bin, ann)
}

const TINY: &str = r#"{"pretrain_epochs": 1, "finetune_epochs": 2, "channels": 4, "out_dim": 4, "hidden": 4, "batch": 16, "finetune_batch": 32}"#;

fn tiny_models(dir: &Path) -> String {
    let (bin, ann) = gen(dir, "train", 40, 1);
    let cfg = dir.join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let models = p(dir, "models");
    ok(&["train-all", "--in", &bin, "--ann", &ann, "--config", cfg.to_str().unwrap(), "--out", &models]);
    models
}

#[test]
fn gen_is_reproducible_and_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let (a, ann) = gen(dir.path(), "a", 30, 9);
    let (b, _) = gen(dir.path(), "b", 30, 9);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(fs::read_to_string(&ann).unwrap().lines().count() > 60);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(format!("{a}.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "gen");
    assert_eq!(manifest["config"]["n_pdus"], 30);
}

#[test]
fn clean_stream_decodes_every_pdu() {
    let dir = TempDir::new().unwrap();
    let (bin, _) = gen(dir.path(), "s", 50, 2);
    let report = p(dir.path(), "r.json");
    ok(&["fsm-decode", "--in", &bin, "--out", &report, "--no-timing"]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["ip_found"], 50);
    assert_eq!(r["pdus"].as_array().unwrap().len(), 50);
    assert!(r.get("elapsed_s").is_none());
}

#[test]
fn corrupt_and_truncate_keep_annotations_consistent() {
    let dir = TempDir::new().unwrap();
    let (bin, ann) = gen(dir.path(), "s", 20, 3);
    let c = p(dir.path(), "c.bin");
    ok(&["corrupt", "--in", &bin, "--ann", &ann, "--gamma1", "0.05", "--gamma2", "0.05", "--seed", "4", "--out", &c]);
    assert_eq!(fs::read(&c).unwrap().len(), fs::read(&bin).unwrap().len());
    assert_eq!(fs::read(&ann).unwrap(), fs::read(dir.path().join("c.ann")).unwrap());
    let t = p(dir.path(), "t.bin");
    ok(&["truncate", "--in", &bin, "--ann", &ann, "--offset", "5", "--out", &t]);
    assert_eq!(fs::read(&t).unwrap(), fs::read(&bin).unwrap()[5..]);
}

#[test]
fn dataset_files_are_balanced() {
    let dir = TempDir::new().unwrap();
    let (bin, ann) = gen(dir.path(), "s", 60, 5);
    let out = p(dir.path(), "ds");
    ok(&["build-dataset", "--in", &bin, "--ann", &ann, "--out", &out]);
    for layer in ["bb", "gse", "ip"] {
        let text = fs::read_to_string(Path::new(&out).join(format!("{layer}_train.jsonl"))).unwrap();
        let ones = text.lines().filter(|l| l.contains("\"label\":1")).count();
        assert_eq!(ones * 2, text.lines().count(), "{layer}");
    }
}

#[test]
fn pretrain_then_finetune_single_layer() {
    let dir = TempDir::new().unwrap();
    let (bin, ann) = gen(dir.path(), "s", 60, 6);
    let ds = p(dir.path(), "ds");
    ok(&["build-dataset", "--in", &bin, "--ann", &ann, "--out", &ds]);
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let (enc, clf, log) = (p(dir.path(), "enc.clxt"), p(dir.path(), "ip.clxt"), p(dir.path(), "loss.jsonl"));
    let cfg = cfg.to_str().unwrap();
    ok(&["pretrain", "--dataset", &ds, "--layer", "ip", "--config", cfg, "--log", &log, "--out", &enc]);
    assert!(fs::read_to_string(&log).unwrap().contains("pretrain"));
    ok(&["finetune", "--dataset", &ds, "--layer", "ip", "--encoder", &enc, "--config", cfg, "--out", &clf]);
    assert!(dir.path().join("protocols.json").exists());
    let out = clx(&["finetune", "--dataset", &ds, "--layer", "bb", "--encoder", &enc, "--config", cfg, "--out", &clf]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn trained_models_drive_scan_extract_sweep_and_throughput() {
    let dir = TempDir::new().unwrap();
    let models = tiny_models(dir.path());
    for f in ["bb.clxt", "gse.clxt", "ip.clxt", "protocols.json"] {
        assert!(Path::new(&models).join(f).exists(), "{f}");
    }
    let (bin, ann) = gen(dir.path(), "eval", 5, 77);
    let (det, pdus) = (p(dir.path(), "det.jsonl"), p(dir.path(), "pdus.bin"));
    let scan_cfg = p(dir.path(), "scan.json");
    ok(&["calibrate", "--models", &models, "--in", &bin, "--ann", &ann, "--degrees", "0", "--grid", "0.5,0.9", "--out", &scan_cfg]);
    let chosen: serde_json::Value = serde_json::from_str(&fs::read_to_string(&scan_cfg).unwrap()).unwrap();
    assert_eq!(chosen["layer_thresholds"].as_object().unwrap().len(), 3);
    ok(&["scan", "--models", &models, "--in", &bin, "--scan-config", &scan_cfg, "--out", &det]);
    ok(&["extract", "--models", &models, "--in", &bin, "--out", &pdus]);
    assert!(read_pdus(&fs::read(&pdus).unwrap()).is_ok());

    let sweep_cfg = dir.path().join("sweep.json");
    fs::write(&sweep_cfg, r#"{"degrees": [0.02], "ratios": [[1.0, 1.0]], "rounds": 1, "traffic": {"n_pdus": 5}}"#).unwrap();
    let csv = p(dir.path(), "sweep.csv");
    ok(&["sweep", "--config", sweep_cfg.to_str().unwrap(), "--models", &models, "--out", &csv, "--no-timing"]);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.lines().next().unwrap().contains("f1"));
    assert!(text.contains("fsm") && text.contains("cl"));

    let tp = p(dir.path(), "tp.json");
    ok(&["throughput", "--models", &models, "--in", &bin, "--out", &tp]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&tp).unwrap()).unwrap();
    assert!(r.is_object());
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(clx(&["gen"]).status.code(), Some(2));
    assert_eq!(clx(&["frobnicate"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let missing: PathBuf = dir.path().join("nope.bin");
    let out = clx(&["fsm-decode", "--in", missing.to_str().unwrap(), "--out", &p(dir.path(), "r.json")]);
    assert_eq!(out.status.code(), Some(1));
    let out = clx(&["corrupt", "--in", missing.to_str().unwrap(), "--gamma1", "0.9", "--gamma2", "0.9", "--seed", "1", "--out", &p(dir.path(), "c")]);
    assert_eq!(out.status.code(), Some(1));
}
