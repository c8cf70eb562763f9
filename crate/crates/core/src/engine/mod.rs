//! Batch composition, training, signature extraction and fused matching.

mod adam;
mod batch;
mod signature;
mod train;

pub use adam::{Adam, AdamConfig};
pub use batch::{compose_batch, BatchClip, BatchPairing, SubjectIndex};
pub use signature::{
    cosine, export_signatures, extract_signature, extract_signatures, import_signatures, match_score, raw_cosines,
    GaitSignature, MinMax, ScoreNormalizer, SignatureRecord, SIGNATURE_KIND,
};
pub use train::{loss_and_grads, train, train_step, LossReport, StepBatch, Trainer, TrainLogRow};

use serde::{Deserialize, Serialize};

use crate::losses::{IdLossKind, LossError, LossWeights};
use crate::nets::NetError;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite {component} loss at iteration {iteration}")]
    NonFiniteLoss { component: &'static str, iteration: u64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("undefined cosine: {0}")]
    UndefinedCosine(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
}

/// Optimization and batching hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum_beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Coupled L2 penalty added to the gradient.
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub clip_len: usize,
    pub clips_per_batch: usize,
    pub weights: LossWeights,
    pub id_loss: IdLossKind,
    pub large_model: bool,
    pub seed: u64,
    pub max_iterations: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            momentum_beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-3,
            lr_decay_factor: 0.9,
            lr_decay_every: 500,
            clip_len: 20,
            clips_per_batch: 16,
            weights: LossWeights::default(),
            id_loss: IdLossKind::IncAvg,
            large_model: false,
            seed: 0,
            max_iterations: 10_000,
        }
    }
}

impl TrainConfig {
    /// Every violated field, as `field: reason`.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                v.push(msg.to_string());
            }
        };
        check(self.lr.is_finite() && self.lr > 0.0, "lr: must be positive");
        check((0.0..1.0).contains(&self.momentum_beta1), "momentum_beta1: must lie in [0, 1)");
        check((0.0..1.0).contains(&self.beta2), "beta2: must lie in [0, 1)");
        check(self.adam_eps.is_finite() && self.adam_eps > 0.0, "adam_eps: must be positive");
        check(self.weight_decay.is_finite() && self.weight_decay >= 0.0, "weight_decay: must be non-negative");
        check(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0, "lr_decay_factor: must be positive");
        check(self.lr_decay_every >= 1, "lr_decay_every: must be at least 1");
        check(self.clip_len >= 1, "clip_len: must be at least 1");
        check(
            self.clips_per_batch >= 2 && self.clips_per_batch % 2 == 0,
            "clips_per_batch: must be even and at least 2",
        );
        for name in self.weights.violations() {
            v.push(format!("weights.{name}: must be finite and non-negative"));
        }
        v
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(EngineError::Config(v.join("; ")))
        }
    }

    /// Step-decayed learning rate at `iteration` (0-based).
    pub fn lr_at(&self, iteration: u64) -> f64 {
        self.lr * self.lr_decay_factor.powi((iteration / self.lr_decay_every) as i32)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.momentum_beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}
