use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaitdis_core::engine::TrainConfig;
use gaitdis_core::evalkit::{builtin_protocols, synthetic_protocol, ProtocolSpec};
use gaitdis_core::synthgait::DatasetOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Synthetic dataset root or ingested media root.
    pub dataset: PathBuf,
    pub archive: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data".into(),
            archive: "data/archive".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

impl Paths {
    /// Every path resolved against `base` (relative paths only).
    pub fn rebased(&self, base: &Path) -> Self {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Self {
            dataset: r(&self.dataset),
            archive: r(&self.archive),
            checkpoints: r(&self.checkpoints),
            reports: r(&self.reports),
        }
    }

    pub fn checkpoint_file(&self) -> PathBuf {
        self.checkpoints.join("model.ckpt")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub n_subjects: usize,
    pub conditions: usize,
    pub clips_per_condition: usize,
    pub n_frames: usize,
    pub views: Vec<f64>,
    pub speed: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = DatasetOptions::default();
        Self {
            n_subjects: 24,
            conditions: 2,
            clips_per_condition: 1,
            n_frames: d.n_frames,
            views: d.views,
            speed: d.speed,
        }
    }
}

impl SynthSettings {
    pub fn options(&self) -> DatasetOptions {
        DatasetOptions {
            n_frames: self.n_frames,
            views: self.views.clone(),
            speed: self.speed,
        }
    }
}

/// Everything a run depends on. `seed` drives both data generation and
/// training; `train.seed` is overwritten with it on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub train: TrainConfig,
    /// Built-in protocol name or a path to a protocol JSON file.
    pub protocol: String,
    pub alpha: f64,
    pub seed: u64,
    pub deterministic: bool,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            train: TrainConfig::default(),
            protocol: "synthetic".into(),
            alpha: 0.5,
            seed: 0,
            deterministic: false,
            synth: SynthSettings::default(),
        }
    }
}

/// Desk-scale settings for the synthetic benchmark: a short schedule with
/// a higher learning rate and no weight decay, short training windows and
/// three clips per condition. Shipped as `configs/synthetic.json`.
pub fn synthetic_benchmark() -> RunConfig {
    RunConfig {
        train: TrainConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            clip_len: 8,
            clips_per_batch: 8,
            max_iterations: 600,
            ..TrainConfig::default()
        },
        synth: SynthSettings { clips_per_condition: 3, ..SynthSettings::default() },
        ..RunConfig::default()
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub protocol: Option<String>,
    pub iters: Option<u64>,
    pub deterministic: bool,
    pub large_model: bool,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths = cfg.paths.rebased(base);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
        if let Some(p) = &o.protocol {
            self.protocol = p.clone();
        }
        if let Some(i) = o.iters {
            self.train.max_iterations = i;
        }
        self.deterministic |= o.deterministic;
        self.train.large_model |= o.large_model;
        self.train.seed = self.seed;
    }

    /// Every violated field, as `field: reason`.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let p = &self.paths;
        let named = [
            ("paths.dataset", &p.dataset),
            ("paths.archive", &p.archive),
            ("paths.checkpoints", &p.checkpoints),
            ("paths.reports", &p.reports),
        ];
        for (i, (na, a)) in named.iter().enumerate() {
            for (nb, b) in &named[i + 1..] {
                if a == b {
                    v.push(format!("{nb}: must differ from {na}"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            v.push("alpha: must lie in [0, 1]".into());
        }
        v.extend(self.train.violations().into_iter().map(|e| format!("train.{e}")));
        let s = &self.synth;
        if s.n_subjects == 0 || s.conditions == 0 || s.clips_per_condition == 0 {
            v.push("synth: subject, condition and clip counts must be at least 1".into());
        }
        if s.views.is_empty() {
            v.push("synth.views: at least one view is required".into());
        }
        if self.protocol.trim().is_empty() {
            v.push("protocol: must name a built-in protocol or a file".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigInvalid { violations })
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn resolve_protocol(&self) -> Result<ProtocolSpec> {
        resolve_protocol(&self.protocol)
    }
}

#[derive(Debug)]
pub struct ConfigInvalid {
    pub violations: Vec<String>,
}

impl std::fmt::Display for ConfigInvalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.violations.join("; "))
    }
}

impl std::error::Error for ConfigInvalid {}

/// Every protocol known by name.
pub fn known_protocols() -> Vec<ProtocolSpec> {
    let mut all = vec![synthetic_protocol()];
    all.extend(builtin_protocols());
    all
}

/// A built-in protocol by name, else a protocol file at that path.
pub fn resolve_protocol(name_or_path: &str) -> Result<ProtocolSpec> {
    if let Some(p) = known_protocols().into_iter().find(|p| p.name == name_or_path) {
        return Ok(p);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        let p = ProtocolSpec::from_file(path)?;
        p.validate()?;
        return Ok(p);
    }
    bail!("unknown protocol {name_or_path:?}: not a built-in name and no such file")
}
