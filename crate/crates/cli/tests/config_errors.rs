//! Separate binary: sets the report-directory variable for the process.

use clap::Parser;
use gaitdis_cli::report::REPORT_DIR_ENV;
use gaitdis_cli::{run, Cli};

#[test]
fn invalid_config_writes_every_violation_to_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{ "alpha": 1.5, "train": { "lr": -1.0, "clips_per_batch": 3 } }"#).unwrap();
    std::env::set_var(REPORT_DIR_ENV, tmp.path().join("out"));
    let args: Vec<String> = ["gaitdis", "--config", cfg.to_str().unwrap(), "eval"].map(String::from).to_vec();
    assert!(run(Cli::parse_from(&args), &args).is_err());
    let text = std::fs::read_to_string(tmp.path().join("out/error.json")).unwrap();
    let err: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(err["kind"], "config");
    assert_eq!(err["command"], "eval");
    let v: Vec<&str> = err["violations"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
    assert!(v.iter().any(|s| s.starts_with("alpha")), "{v:?}");
    assert!(v.iter().any(|s| s.starts_with("train.lr")), "{v:?}");
    assert!(v.iter().any(|s| s.starts_with("train.clips_per_batch")), "{v:?}");
}
