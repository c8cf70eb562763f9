use std::path::{Path, PathBuf};

use clap::Parser;
use gaitdis_cli::config::{known_protocols, synthetic_benchmark, Paths};
use gaitdis_cli::{run, Cli, RunConfig};
use gaitdis_core::evalkit::{AlphaRow, EvalReport, ProtocolSpec};
use serde_json::Value;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Tiny synthetic setup rooted in `dir`: short clips, two training steps.
fn write_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig {
        paths: Paths {
            dataset: "data".into(),
            archive: "data/archive".into(),
            checkpoints: "ckpt".into(),
            reports: "reports".into(),
        },
        deterministic: true,
        ..RunConfig::default()
    };
    cfg.synth.n_frames = 20;
    cfg.train.clip_len = 4;
    cfg.train.clips_per_batch = 4;
    cfg.train.max_iterations = 2;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn gaitdis(config: &Path, args: &[&str]) {
    let mut all: Vec<String> = vec!["gaitdis".into(), "--config".into(), config.display().to_string()];
    all.extend(args.iter().map(|s| s.to_string()));
    run(Cli::parse_from(&all), &all).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn shipped_protocol_files_match_the_builtins() {
    for p in known_protocols() {
        let shipped = ProtocolSpec::from_file(&repo_root().join(format!("protocols/{}.json", p.name))).unwrap();
        assert_eq!(shipped, p, "{}", p.name);
    }
}

#[test]
fn shipped_benchmark_config_matches_the_preset() {
    let mut shipped = RunConfig::from_file(&repo_root().join("configs/synthetic.json")).unwrap();
    let preset = synthetic_benchmark();
    assert!(shipped.paths.reports.ends_with("configs/../reports"));
    shipped.paths = preset.paths.clone();
    assert_eq!(shipped, preset);
}

#[test]
fn synth_train_eval_sweep_extract_and_decode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let reports = tmp.path().join("reports");

    gaitdis(&cfg, &["synth"]);
    assert!(tmp.path().join("data/archive").is_dir());
    gaitdis(&cfg, &["train"]);
    assert!(tmp.path().join("ckpt/model.ckpt").is_file());
    let log = std::fs::read_to_string(reports.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "header plus one row per iteration");

    gaitdis(&cfg, &["eval"]);
    let metrics = read_json(&reports.join("metrics.json"));
    assert!(metrics["metrics"]["rank1"].is_number());
    assert_eq!(metrics["n_gallery"], 8);
    let run_record = read_json(&reports.join("run.json"));
    assert_eq!(run_record["command"], "eval");
    assert_eq!(run_record["config_hash"].as_str().unwrap().len(), 64);
    let scores = std::fs::read_to_string(reports.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 9);

    // Sweep endpoints reproduce plain evaluations at the same weights.
    gaitdis(&cfg, &["sweep", "--alphas", "0,1", "--durations", "0.5,1"]);
    let sweep = read_json(&reports.join("sweep.json"));
    let rows: Vec<AlphaRow> = serde_json::from_value(sweep["alpha"].clone()).unwrap();
    for (row, alpha) in rows.iter().zip(["0", "1"]) {
        gaitdis(&cfg, &["eval", "--alpha", alpha]);
        let report: EvalReport = serde_json::from_value(read_json(&reports.join("metrics.json"))).unwrap();
        assert_eq!(report.metrics, row.metrics, "alpha {alpha}");
    }
    assert_eq!(sweep["duration"].as_array().unwrap().len(), 2);
    assert_eq!(sweep["duration"][0]["min_frames"], 10);

    gaitdis(&cfg, &["extract"]);
    assert!(reports.join("signatures.bin").is_file());

    gaitdis(&cfg, &["decode-viz", "--clip-a", "001-c0-00", "--clip-b", "002-c0-00", "--frames", "3"]);
    let grid = image::open(reports.join("decode_viz/features.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (3 * 32 + 2 * 2, 5 * 64 + 4 * 2));
    let cross = image::open(reports.join("decode_viz/cross.png")).unwrap();
    assert_eq!((cross.width(), cross.height()), (3 * 32 + 2 * 2, 3 * 64 + 2 * 2));
}

#[test]
fn eval_without_a_checkpoint_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    gaitdis(&cfg, &["synth"]);
    let all: Vec<String> = ["gaitdis", "--config", cfg.to_str().unwrap(), "eval"].map(String::from).to_vec();
    assert!(run(Cli::parse_from(&all), &all).is_err());
    let err = read_json(&tmp.path().join("reports/error.json"));
    assert_eq!(err["kind"], "runtime");
    assert!(err["message"].as_str().unwrap().contains("checkpoint"), "{err}");
}
