use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::clip_store::Clip;
use crate::container::Container;
use crate::nets::{frames_to_tensor, GaitNet, CANONICAL_DIM, LSTM_HIDDEN};

pub const SIGNATURE_KIND: &str = "gaitdis-signatures";

/// Frames encoded per forward pass during extraction.
const EXTRACT_CHUNK: usize = 32;

/// Per-clip matching descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitSignature {
    /// Mean canonical feature.
    pub f_sta: Vec<f32>,
    /// Mean LSTM output over the whole clip.
    pub f_dyn: Vec<f32>,
    pub n_frames_used: usize,
}

/// Mean of f32 rows, accumulated in f64.
fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f32]>, width: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; width];
    let mut n = 0usize;
    for r in rows {
        acc.iter_mut().zip(r).for_each(|(a, &v)| *a += v as f64);
        n += 1;
    }
    acc.iter().map(|a| (a / n as f64) as f32).collect()
}

/// Evaluation-mode signature of a whole clip.
pub fn extract_signature(clip: &Clip, net: &GaitNet<f32>) -> Result<GaitSignature, EngineError> {
    if clip.is_empty() {
        return Err(EngineError::InvalidInput(format!("clip {:?} has no frames", clip.source_id)));
    }
    let mut f_c = Vec::with_capacity(clip.len());
    let mut f_p = Vec::with_capacity(clip.len());
    for chunk in clip.frames.chunks(EXTRACT_CHUNK) {
        let refs: Vec<&[f32]> = chunk.iter().map(|f| f.data()).collect();
        for f in net.encode(&frames_to_tensor::<f32>(&refs))? {
            f_c.push(f.f_c);
            f_p.push(f.f_p);
        }
    }
    let h = net.lstm_outputs(&f_p)?;
    Ok(GaitSignature {
        f_sta: mean_rows(f_c.iter().map(Vec::as_slice), CANONICAL_DIM),
        f_dyn: mean_rows(h.iter().map(Vec::as_slice), LSTM_HIDDEN),
        n_frames_used: clip.len(),
    })
}

/// Signatures of many clips, in input order. Clips are processed in
/// parallel; each result depends only on its clip.
pub fn extract_signatures(clips: &[&Clip], net: &GaitNet<f32>) -> Result<Vec<GaitSignature>, EngineError> {
    clips.par_iter().map(|c| extract_signature(c, net)).collect()
}

/// Cosine similarity; a zero-norm operand is an error.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, EngineError> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 || !(na.is_finite() && nb.is_finite()) {
        return Err(EngineError::UndefinedCosine(format!(
            "feature norms {} and {}",
            na.sqrt(),
            nb.sqrt()
        )));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Affine rescaling of a score population onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            log::warn!("min-max population is constant ({min}); all scores map to 0.5");
        }
        Self { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        self.min == self.max
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.5
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }
}

/// Per-channel min-max fitted on a full gallery×probe matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalizer {
    pub sta: MinMax,
    pub dyn_: MinMax,
}

impl ScoreNormalizer {
    pub fn fit(raw_sta: &[f64], raw_dyn: &[f64]) -> Self {
        Self {
            sta: MinMax::fit(raw_sta),
            dyn_: MinMax::fit(raw_dyn),
        }
    }
}

/// Raw static and dynamic cosine matrices, row-major gallery×probe.
pub fn raw_cosines(
    gallery: &[GaitSignature],
    probe: &[GaitSignature],
) -> Result<(Vec<f64>, Vec<f64>), EngineError> {
    let rows: Result<Vec<(Vec<f64>, Vec<f64>)>, EngineError> = gallery
        .par_iter()
        .map(|g| {
            let mut s = Vec::with_capacity(probe.len());
            let mut d = Vec::with_capacity(probe.len());
            for p in probe {
                s.push(cosine(&g.f_sta, &p.f_sta)?);
                d.push(cosine(&g.f_dyn, &p.f_dyn)?);
            }
            Ok((s, d))
        })
        .collect();
    let (s, d): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows?.into_iter().unzip();
    Ok((s.concat(), d.concat()))
}

/// Fused similarity `(1-α)·mm(cos_sta) + α·mm(cos_dyn)`.
pub fn match_score(
    gallery: &GaitSignature,
    probe: &GaitSignature,
    alpha: f64,
    normalizer: &ScoreNormalizer,
) -> Result<f64, EngineError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EngineError::InvalidInput(format!("alpha {alpha} outside [0, 1]")));
    }
    let s = normalizer.sta.apply(cosine(&gallery.f_sta, &probe.f_sta)?);
    let d = normalizer.dyn_.apply(cosine(&gallery.f_dyn, &probe.f_dyn)?);
    Ok((1.0 - alpha) * s + alpha * d)
}

/// Labels stored alongside an exported signature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureRecord {
    pub source_id: String,
    pub subject_id: String,
    pub condition_id: String,
    pub view_deg: f64,
    pub video_index: Option<u32>,
    pub n_frames: usize,
}

impl SignatureRecord {
    pub fn of(clip: &Clip) -> Self {
        Self {
            source_id: clip.source_id.clone(),
            subject_id: clip.subject_id.clone(),
            condition_id: clip.condition_id.clone(),
            view_deg: clip.view_deg,
            video_index: clip.video_index,
            n_frames: clip.len(),
        }
    }
}

/// Writes `(record, signature)` pairs into one container file; row `i`
/// of the `f_sta` and `f_dyn` arrays belongs to record `i`.
pub fn export_signatures(path: &Path, items: &[(SignatureRecord, GaitSignature)]) -> Result<(), EngineError> {
    let records: Vec<&SignatureRecord> = items.iter().map(|(r, _)| r).collect();
    let mut c = Container::new(SIGNATURE_KIND, serde_json::json!({ "records": records }));
    let n = items.len();
    c.push("f_sta", vec![n, CANONICAL_DIM], items.iter().flat_map(|(_, s)| s.f_sta.iter().copied()).collect());
    c.push("f_dyn", vec![n, LSTM_HIDDEN], items.iter().flat_map(|(_, s)| s.f_dyn.iter().copied()).collect());
    c.write_file(path)?;
    Ok(())
}

pub fn import_signatures(path: &Path) -> Result<Vec<(SignatureRecord, GaitSignature)>, EngineError> {
    let c = Container::read_file(path)?;
    c.expect_kind(SIGNATURE_KIND)?;
    let records: Vec<SignatureRecord> = serde_json::from_value(c.meta["records"].clone())
        .map_err(|e| EngineError::InvalidInput(format!("signature records: {e}")))?;
    let sta = c.get("f_sta")?;
    let dy = c.get("f_dyn")?;
    if sta.shape != [records.len(), CANONICAL_DIM] || dy.shape != [records.len(), LSTM_HIDDEN] {
        return Err(EngineError::InvalidInput("signature arrays do not match the record count".into()));
    }
    Ok(records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let sig = GaitSignature {
                f_sta: sta.data[i * CANONICAL_DIM..(i + 1) * CANONICAL_DIM].to_vec(),
                f_dyn: dy.data[i * LSTM_HIDDEN..(i + 1) * LSTM_HIDDEN].to_vec(),
                n_frames_used: r.n_frames,
            };
            (r, sig)
        })
        .collect())
}
