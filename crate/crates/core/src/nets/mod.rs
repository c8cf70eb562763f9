//! Encoder, decoder, LSTM aggregator and linear classifiers.
//!
//! Everything is generic over [`Real`] so the same code trains in `f32` and
//! runs finite-difference checks in `f64`.

pub mod decoder;
pub mod encoder;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod lstm;
pub mod model;
pub mod real;
pub mod tensor;

pub use model::{ArchConfig, GaitNet, Slot};
pub use real::Real;
pub use tensor::{Param, Tensor};

pub const FRAME_H: usize = 64;
pub const FRAME_W: usize = 32;
pub const FRAME_C: usize = 3;
pub const FRAME_LEN: usize = FRAME_H * FRAME_W * FRAME_C;

pub const APPEARANCE_DIM: usize = 128;
pub const CANONICAL_DIM: usize = 128;
pub const POSE_DIM: usize = 64;
/// Width of the encoder output, split as `[f_a | f_c | f_p]`.
pub const FEATURE_DIM: usize = APPEARANCE_DIM + CANONICAL_DIM + POSE_DIM;

pub const LSTM_HIDDEN: usize = 256;
pub const LSTM_LAYERS: usize = 3;

/// Column ranges of each feature inside a 320-wide encoder row.
pub const APPEARANCE: std::ops::Range<usize> = 0..APPEARANCE_DIM;
pub const CANONICAL: std::ops::Range<usize> = APPEARANCE_DIM..APPEARANCE_DIM + CANONICAL_DIM;
pub const POSE: std::ops::Range<usize> = APPEARANCE_DIM + CANONICAL_DIM..FEATURE_DIM;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("non-finite activation in {stage} layer {layer}")]
    NumericFault { stage: &'static str, layer: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
}

/// Per-frame split of the encoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct DisentangledFeatures<T> {
    pub f_a: Vec<T>,
    pub f_c: Vec<T>,
    pub f_p: Vec<T>,
}

impl<T: Real> DisentangledFeatures<T> {
    pub fn from_row(row: &[T]) -> Self {
        assert_eq!(row.len(), FEATURE_DIM);
        Self {
            f_a: row[APPEARANCE].to_vec(),
            f_c: row[CANONICAL].to_vec(),
            f_p: row[POSE].to_vec(),
        }
    }

    pub fn to_row(&self) -> Vec<T> {
        [self.f_a.as_slice(), &self.f_c, &self.f_p].concat()
    }
}

/// Converts HWC frames to one NCHW batch tensor.
pub fn frames_to_tensor<T: Real>(frames: &[&[f32]]) -> Tensor<T> {
    let plane = FRAME_H * FRAME_W;
    let mut data = vec![T::zero(); frames.len() * FRAME_LEN];
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(f.len(), FRAME_LEN, "frame length");
        let dst = &mut data[i * FRAME_LEN..(i + 1) * FRAME_LEN];
        for p in 0..plane {
            for c in 0..FRAME_C {
                dst[c * plane + p] = T::lit(f[p * FRAME_C + c] as f64);
            }
        }
    }
    Tensor::from_vec([frames.len(), FRAME_C, FRAME_H, FRAME_W], data)
}

/// Converts item `i` of an NCHW frame tensor back to HWC `f32`.
pub fn tensor_item_to_frame<T: Real>(t: &Tensor<T>, i: usize) -> Vec<f32> {
    let plane = FRAME_H * FRAME_W;
    let src = t.item(i);
    let mut out = vec![0.0f32; FRAME_LEN];
    for p in 0..plane {
        for c in 0..FRAME_C {
            out[p * FRAME_C + c] = src[c * plane + p].as_f64() as f32;
        }
    }
    out
}
