//! Disentangled gait representation learning on fixed-size person crops:
//! clip storage, a synthetic walker generator, hand-written networks and
//! losses, training, signature matching and biometric evaluation.

pub mod clip_store;
pub mod container;
pub mod engine;
pub mod evalkit;
pub mod losses;
pub mod nets;
pub mod synthgait;

pub use clip_store::{Clip, ClipError, FrameTensor};
pub use engine::{EngineError, GaitSignature, SignatureRecord, TrainConfig, Trainer};
pub use evalkit::{Channel, EvalError, EvalReport, LabeledSignature, ProtocolSpec, ScoreMatrix};
pub use losses::{IdLossKind, LossComponents, LossError, LossWeights};
pub use nets::{ArchConfig, DisentangledFeatures, GaitNet, NetError, Tensor};
pub use synthgait::{make_dataset, DatasetOptions, LabeledClip, SynthDataset, SynthError};
