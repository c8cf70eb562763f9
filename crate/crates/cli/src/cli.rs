use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::commands::{self, alpha_for};
use crate::config::{Overrides, RunConfig};
use crate::report::{report_dir, write_error_record, write_json, write_run_record};

#[derive(Debug, Parser)]
#[command(name = "gaitdis", version, about = "Disentangled gait recognition pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON). Relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fusion weight of the dynamic channel, in [0, 1].
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Built-in protocol name or protocol JSON file.
    #[arg(long, global = true)]
    pub protocol: Option<String>,
    /// Training iterations.
    #[arg(long, global = true)]
    pub iters: Option<u64>,
    /// Single-threaded numeric paths for bit-exact reruns.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Adds the extra 512-channel conv block to the encoder.
    #[arg(long, global = true)]
    pub large_model: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a manifest of frame/mask directories into the clip archive.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Generate the synthetic dataset and its archive.
    Synth {
        /// Also write PNG frames, masks and a manifest.
        #[arg(long)]
        media: bool,
    },
    /// Train on the protocol's training split.
    Train,
    /// Export a signature per archived clip.
    Extract {
        /// Output file; defaults to `signatures.bin` in the report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the fused score on the protocol's test split.
    Eval,
    /// Sweep fusion weights and probe durations.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        alphas: Vec<f64>,
        /// Probe-length fractions; empty disables the duration sweep.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1")]
        durations: Vec<f64>,
    },
    /// Decode feature slices of two clips into PNG grids.
    DecodeViz {
        #[arg(long)]
        clip_a: String,
        #[arg(long)]
        clip_b: String,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        /// Output directory; defaults to `decode_viz/` in the report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Synth { .. } => "synth",
            Command::Train => "train",
            Command::Extract { .. } => "extract",
            Command::Eval => "eval",
            Command::Sweep { .. } => "sweep",
            Command::DecodeViz { .. } => "decode-viz",
        }
    }
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            alpha: self.alpha,
            protocol: self.protocol.clone(),
            iters: self.iters,
            deterministic: self.deterministic,
            large_model: self.large_model,
        }
    }

    pub fn load_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&self.overrides());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn force_single_thread() {
    // Fails only if the pool already exists, which is fine when a previous
    // in-process run built it single-threaded.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
}

/// Runs one command. `args` is recorded verbatim in `run.json`. On failure
/// an `error.json` is written to the report directory (when one can be
/// determined) and the error is returned.
pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    let name = cli.command.name();
    let cfg = match cli.global.load_config() {
        Ok(cfg) => cfg,
        Err(e) => {
            let fallback = report_dir(&RunConfig::default());
            let _ = write_error_record(&fallback, name, &e);
            return Err(e);
        }
    };
    let dir = report_dir(&cfg);
    let result = execute(&cli, &cfg, &dir, args);
    if let Err(e) = &result {
        let _ = write_error_record(&dir, name, e);
    }
    result
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: &Cli, cfg: &RunConfig, dir: &Path, args: &[String]) -> Result<()> {
    if cfg.deterministic {
        force_single_thread();
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating report directory {}", dir.display()))?;
    write_run_record(dir, cli.command.name(), args, cfg)?;
    match &cli.command {
        Command::Ingest { manifest } => {
            let report = commands::cmd_ingest(cfg, manifest)?;
            write_json(&dir.join("ingest_report.json"), &report)?;
            print(&report)
        }
        Command::Synth { media } => print(&commands::cmd_synth(cfg, *media)?),
        Command::Train => {
            let summary = commands::cmd_train(cfg, dir)?;
            write_json(&dir.join("train_summary.json"), &summary)?;
            print(&summary)
        }
        Command::Extract { out } => {
            let out = out.clone().unwrap_or_else(|| dir.join("signatures.bin"));
            let n = commands::cmd_extract(cfg, &out)?;
            print(&serde_json::json!({ "signatures": n, "out": out }))
        }
        Command::Eval => {
            let protocol = cfg.resolve_protocol()?;
            let alpha = alpha_for(cfg, &protocol, cli.global.alpha.is_some());
            print(&commands::cmd_eval(cfg, alpha, dir)?)
        }
        Command::Sweep { alphas, durations } => {
            let protocol = cfg.resolve_protocol()?;
            let alpha = alpha_for(cfg, &protocol, cli.global.alpha.is_some());
            print(&commands::cmd_sweep(cfg, alphas, durations, alpha, dir)?)
        }
        Command::DecodeViz { clip_a, clip_b, frames, out } => {
            let out = out.clone().unwrap_or_else(|| dir.join("decode_viz"));
            print(&commands::cmd_decode_viz(cfg, clip_a, clip_b, *frames, &out)?)
        }
    }
}
