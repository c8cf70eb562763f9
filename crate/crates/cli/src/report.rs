use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{ConfigInvalid, RunConfig};

pub const REPORT_DIR_ENV: &str = "GAITDIS_REPORT_DIR";

/// `GAITDIS_REPORT_DIR` when set and non-empty, else the configured path.
pub fn report_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os(REPORT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.paths.reports.clone(),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Written by every command; together with the binary it reproduces the run.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub args: &'a [String],
    pub code_version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub deterministic: bool,
    pub config: &'a RunConfig,
}

pub fn write_run_record(dir: &Path, command: &str, args: &[String], cfg: &RunConfig) -> Result<()> {
    let record = RunRecord {
        command,
        args,
        code_version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        deterministic: cfg.deterministic,
        config: cfg,
    };
    write_json(&dir.join("run.json"), &record)
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: &'static str,
    pub message: String,
    /// Source chain, outermost first.
    pub causes: Vec<String>,
    /// Every violated config field, for configuration errors.
    pub violations: Vec<String>,
}

impl ErrorRecord {
    pub fn from_error(command: &str, err: &anyhow::Error) -> Self {
        let violations = err
            .downcast_ref::<ConfigInvalid>()
            .map(|c| c.violations.clone())
            .unwrap_or_default();
        Self {
            command: command.to_string(),
            kind: if violations.is_empty() { "runtime" } else { "config" },
            message: err.to_string(),
            causes: err.chain().skip(1).map(|e| e.to_string()).collect(),
            violations,
        }
    }
}

pub fn write_error_record(dir: &Path, command: &str, err: &anyhow::Error) -> Result<()> {
    write_json(&dir.join("error.json"), &ErrorRecord::from_error(command, err))
}
