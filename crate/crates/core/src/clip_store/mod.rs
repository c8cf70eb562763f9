//! Frame preprocessing, manifest ingestion and the on-disk clip archive.

mod archive;
mod ingest;
mod preprocess;

pub use archive::{load_archive, persist_archive, ArchiveIndexEntry, CLIP_KIND};
pub use ingest::{ingest, ingest_manifest_file, EntryError, IngestReport, Manifest, ManifestEntry};
pub use preprocess::{box_from_mask, preprocess_frame, BBox, RawFrame};

use crate::nets::{FRAME_C, FRAME_H, FRAME_LEN, FRAME_W};

#[derive(Debug, thiserror::Error)]
pub enum ClipError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("duplicate source_id {0:?} in manifest")]
    DuplicateSource(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("archive error: {0}")]
    Archive(String),
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One preprocessed frame: 64(H)×32(W)×3 values in `[0, 1]`, stored HWC.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTensor {
    data: Vec<f32>,
}

impl FrameTensor {
    pub const HEIGHT: usize = FRAME_H;
    pub const WIDTH: usize = FRAME_W;
    pub const CHANNELS: usize = FRAME_C;

    pub fn new(data: Vec<f32>) -> Result<Self, ClipError> {
        if data.len() != FRAME_LEN {
            return Err(ClipError::InvalidFrame(format!(
                "expected {FRAME_LEN} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ClipError::InvalidFrame(format!("value {v} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; FRAME_LEN],
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * FRAME_W + x) * FRAME_C + c]
    }
}

/// An ordered sequence of frames of one subject under one condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<FrameTensor>,
    pub subject_id: String,
    pub condition_id: String,
    pub view_deg: f64,
    pub source_id: String,
    /// Session/video number used by protocols that select by video index.
    pub video_index: Option<u32>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The clip restricted to its first `n` frames (at least one).
    pub fn prefix(&self, n: usize) -> Clip {
        let n = n.max(1).min(self.frames.len());
        Clip {
            frames: self.frames[..n].to_vec(),
            subject_id: self.subject_id.clone(),
            condition_id: self.condition_id.clone(),
            view_deg: self.view_deg,
            source_id: self.source_id.clone(),
            video_index: self.video_index,
        }
    }
}
