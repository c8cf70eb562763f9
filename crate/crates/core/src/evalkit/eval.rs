use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{rank1, tar_at_far, Channel, ScoreMatrix};
use super::protocol::{Metric, ProtocolSpec};
use super::EvalError;
use crate::clip_store::Clip;
use crate::engine::{extract_signatures, raw_cosines, GaitSignature, ScoreNormalizer, SignatureRecord};
use crate::nets::GaitNet;

/// A signature with the labels of the clip it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSignature {
    pub record: SignatureRecord,
    pub signature: GaitSignature,
}

impl LabeledSignature {
    pub fn extract(clips: &[&Clip], net: &GaitNet<f32>) -> Result<Vec<Self>, EvalError> {
        let sigs = extract_signatures(clips, net)?;
        Ok(clips
            .iter()
            .zip(sigs)
            .map(|(c, signature)| Self { record: SignatureRecord::of(c), signature })
            .collect())
    }
}

/// A signature left out of a score matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub source_id: String,
    pub side: String,
    pub reason: String,
}

fn unusable(sig: &GaitSignature) -> Option<String> {
    for (name, v) in [("f_sta", &sig.f_sta), ("f_dyn", &sig.f_dyn)] {
        let n2: f64 = v.iter().map(|&x| x as f64 * x as f64).sum();
        if !n2.is_finite() {
            return Some(format!("{name} is not finite"));
        }
        if n2 == 0.0 {
            return Some(format!("{name} has zero norm"));
        }
    }
    None
}

/// Raw per-channel cosines of one gallery×probe pairing plus the min-max
/// normalizer fitted on them.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrices {
    pub raw_static: ScoreMatrix,
    pub raw_dynamic: ScoreMatrix,
    pub normalizer: ScoreNormalizer,
    pub excluded: Vec<Exclusion>,
}

impl ScoreMatrices {
    /// Zero-norm or non-finite signatures are dropped and listed in
    /// `excluded`; an empty side after exclusion is an error.
    pub fn build(gallery: &[LabeledSignature], probe: &[LabeledSignature]) -> Result<Self, EvalError> {
        if gallery.is_empty() || probe.is_empty() {
            return Err(EvalError::InvalidInput("score matrix needs a non-empty gallery and probe".into()));
        }
        let mut excluded = Vec::new();
        let mut keep = |side: &str, xs: &[LabeledSignature]| -> Vec<usize> {
            let mut ok = Vec::with_capacity(xs.len());
            for (i, x) in xs.iter().enumerate() {
                match unusable(&x.signature) {
                    Some(reason) => {
                        log::warn!("excluding {side} clip {:?}: {reason}", x.record.source_id);
                        excluded.push(Exclusion {
                            source_id: x.record.source_id.clone(),
                            side: side.to_string(),
                            reason,
                        });
                    }
                    None => ok.push(i),
                }
            }
            ok
        };
        let gi = keep("gallery", gallery);
        let pi = keep("probe", probe);
        if gi.is_empty() || pi.is_empty() {
            return Err(EvalError::InvalidInput(format!(
                "every {} signature was excluded",
                if gi.is_empty() { "gallery" } else { "probe" }
            )));
        }
        let gs: Vec<GaitSignature> = gi.iter().map(|&i| gallery[i].signature.clone()).collect();
        let ps: Vec<GaitSignature> = pi.iter().map(|&i| probe[i].signature.clone()).collect();
        let (s, d) = raw_cosines(&gs, &ps)?;
        let gl: Vec<String> = gi.iter().map(|&i| gallery[i].record.subject_id.clone()).collect();
        let pl: Vec<String> = pi.iter().map(|&i| probe[i].record.subject_id.clone()).collect();
        let normalizer = ScoreNormalizer::fit(&s, &d);
        Ok(Self {
            raw_static: ScoreMatrix::new(s, gl.clone(), pl.clone(), Channel::Static)?,
            raw_dynamic: ScoreMatrix::new(d, gl, pl, Channel::Dynamic)?,
            normalizer,
            excluded,
        })
    }

    /// Normalized scores of one channel; `alpha` only matters for `Fused`.
    pub fn channel(&self, channel: Channel, alpha: f64) -> Result<ScoreMatrix, EvalError> {
        match channel {
            Channel::Static => Ok(self.raw_static.map(|x| self.normalizer.sta.apply(x))),
            Channel::Dynamic => Ok(self.raw_dynamic.map(|x| self.normalizer.dyn_.apply(x))),
            Channel::Fused => self.fused(alpha),
        }
    }

    /// `(1-α)·mm(cos_sta) + α·mm(cos_dyn)` entrywise.
    pub fn fused(&self, alpha: f64) -> Result<ScoreMatrix, EvalError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(EvalError::InvalidInput(format!("alpha {alpha} outside [0, 1]")));
        }
        let n = &self.normalizer;
        let scores = self
            .raw_static
            .scores
            .iter()
            .zip(&self.raw_dynamic.scores)
            .map(|(&s, &d)| (1.0 - alpha) * n.sta.apply(s) + alpha * n.dyn_.apply(d))
            .collect();
        ScoreMatrix::new(
            scores,
            self.raw_static.gallery_labels.clone(),
            self.raw_static.probe_labels.clone(),
            Channel::Fused,
        )
    }
}

/// Fused score matrix with min-max fitted on this gallery×probe pairing.
pub fn build_score_matrix(
    gallery: &[LabeledSignature],
    probe: &[LabeledSignature],
    alpha: f64,
) -> Result<(ScoreMatrix, Vec<Exclusion>), EvalError> {
    let m = ScoreMatrices::build(gallery, probe)?;
    Ok((m.fused(alpha)?, m.excluded))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TarPoint {
    pub far: f64,
    pub tar: f64,
}

/// Requested metrics; cross-view protocols report means over view pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub rank1: Option<f64>,
    pub rank1_ties: Option<usize>,
    pub tar_at_far: Vec<TarPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub channel: Channel,
    pub alpha: f64,
    pub n_gallery: usize,
    pub n_probe: usize,
    /// Number of (gallery view, probe view) pairs averaged.
    pub n_view_pairs: usize,
    pub metrics: MetricValues,
    pub excluded: Vec<Exclusion>,
}

fn view_key(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

/// One score-matrix set per view pair for cross-view protocols, else one.
fn build_cells(
    protocol: &ProtocolSpec,
    gallery: &[LabeledSignature],
    probe: &[LabeledSignature],
) -> Result<Vec<ScoreMatrices>, EvalError> {
    if !protocol.cross_view {
        return Ok(vec![ScoreMatrices::build(gallery, probe)?]);
    }
    let group = |xs: &[LabeledSignature]| {
        let mut m: BTreeMap<i64, Vec<LabeledSignature>> = BTreeMap::new();
        for x in xs {
            m.entry(view_key(x.record.view_deg)).or_default().push(x.clone());
        }
        m
    };
    let (gv, pv) = (group(gallery), group(probe));
    let mut cells = Vec::new();
    for (pk, ps) in &pv {
        for (gk, gs) in &gv {
            if gk != pk {
                cells.push(ScoreMatrices::build(gs, ps)?);
            }
        }
    }
    if cells.is_empty() {
        return Err(EvalError::Protocol(format!(
            "{}: no cross-view pair with distinct gallery and probe views",
            protocol.name
        )));
    }
    Ok(cells)
}

fn cell_metrics(
    protocol: &ProtocolSpec,
    cells: &[ScoreMatrices],
    channel: Channel,
    alpha: f64,
) -> Result<MetricValues, EvalError> {
    let want_rank1 = protocol.metrics.contains(&Metric::Rank1);
    let want_tar = protocol.metrics.contains(&Metric::TarAtFar);
    let mut r1 = 0.0;
    let mut ties = 0usize;
    let mut tar = vec![0.0; protocol.far_points.len()];
    for c in cells {
        let m = c.channel(channel, alpha)?;
        if want_rank1 {
            let r = rank1(&m)?;
            r1 += r.accuracy;
            ties += r.ties;
        }
        if want_tar {
            for (acc, t) in tar.iter_mut().zip(tar_at_far(&m, &protocol.far_points)?) {
                *acc += t;
            }
        }
    }
    let n = cells.len() as f64;
    Ok(MetricValues {
        rank1: want_rank1.then_some(r1 / n),
        rank1_ties: want_rank1.then_some(ties),
        tar_at_far: if want_tar {
            protocol
                .far_points
                .iter()
                .zip(tar)
                .map(|(&far, t)| TarPoint { far, tar: t / n })
                .collect()
        } else {
            Vec::new()
        },
    })
}

fn collect_excluded(cells: &[ScoreMatrices]) -> Vec<Exclusion> {
    let mut out: Vec<Exclusion> = Vec::new();
    for e in cells.iter().flat_map(|c| &c.excluded) {
        if !out.contains(e) {
            out.push(e.clone());
        }
    }
    out
}

/// Scores `probe` against `gallery` under `protocol`'s metric set.
pub fn evaluate(
    protocol: &ProtocolSpec,
    gallery: &[LabeledSignature],
    probe: &[LabeledSignature],
    channel: Channel,
    alpha: f64,
) -> Result<EvalReport, EvalError> {
    protocol.validate()?;
    let cells = build_cells(protocol, gallery, probe)?;
    Ok(EvalReport {
        protocol: protocol.name.clone(),
        channel,
        alpha,
        n_gallery: gallery.len(),
        n_probe: probe.len(),
        n_view_pairs: cells.len(),
        metrics: cell_metrics(protocol, &cells, channel, alpha)?,
        excluded: collect_excluded(&cells),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub metrics: MetricValues,
}

/// Fused metrics for each `alpha`, reusing one set of raw cosines.
pub fn alpha_sweep(
    protocol: &ProtocolSpec,
    gallery: &[LabeledSignature],
    probe: &[LabeledSignature],
    alphas: &[f64],
) -> Result<Vec<AlphaRow>, EvalError> {
    protocol.validate()?;
    let cells = build_cells(protocol, gallery, probe)?;
    alphas
        .iter()
        .map(|&alpha| {
            Ok(AlphaRow {
                alpha,
                metrics: cell_metrics(protocol, &cells, Channel::Fused, alpha)?,
            })
        })
        .collect()
}

/// Frames kept when truncating a `len`-frame clip to `fraction`: the
/// floor, clamped to at least one frame.
pub fn prefix_len(len: usize, fraction: f64) -> usize {
    (((fraction * len as f64) + 1e-9).floor() as usize).clamp(1, len.max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationRow {
    pub fraction: f64,
    pub min_frames: usize,
    pub mean_frames: f64,
    pub metrics: MetricValues,
}

/// Full-length gallery against probes cut to the leading `fraction` of
/// their frames, one row per fraction.
pub fn duration_sweep(
    protocol: &ProtocolSpec,
    net: &GaitNet<f32>,
    gallery: &[&Clip],
    probe: &[&Clip],
    fractions: &[f64],
    alpha: f64,
) -> Result<Vec<DurationRow>, EvalError> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(EvalError::InvalidInput(format!("duration fraction {f} outside (0, 1]")));
    }
    if probe.is_empty() {
        return Err(EvalError::InvalidInput("empty probe set".into()));
    }
    let g = LabeledSignature::extract(gallery, net)?;
    fractions
        .iter()
        .map(|&fraction| {
            let cut: Vec<Clip> = probe.iter().map(|c| c.prefix(prefix_len(c.len(), fraction))).collect();
            let refs: Vec<&Clip> = cut.iter().collect();
            let p = LabeledSignature::extract(&refs, net)?;
            let report = evaluate(protocol, &g, &p, Channel::Fused, alpha)?;
            Ok(DurationRow {
                fraction,
                min_frames: cut.iter().map(Clip::len).min().unwrap_or(0),
                mean_frames: cut.iter().map(|c| c.len() as f64).sum::<f64>() / cut.len() as f64,
                metrics: report.metrics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(subject: &str, sta: Vec<f32>, dy: Vec<f32>) -> LabeledSignature {
        LabeledSignature {
            record: SignatureRecord {
                source_id: format!("{subject}-{}", sta.len()),
                subject_id: subject.into(),
                condition_id: "c0".into(),
                view_deg: 90.0,
                video_index: None,
                n_frames: 1,
            },
            signature: GaitSignature { f_sta: sta, f_dyn: dy, n_frames_used: 1 },
        }
    }

    #[test]
    fn prefix_len_clamps_to_one_frame() {
        assert_eq!(prefix_len(40, 1.0), 40);
        assert_eq!(prefix_len(40, 0.1), 4);
        assert_eq!(prefix_len(5, 0.01), 1);
        assert_eq!(prefix_len(30, 0.1), 3);
    }

    #[test]
    fn one_by_one_matrix_is_half() {
        let a = sig("a", vec![1.0, 2.0], vec![3.0, 1.0]);
        let (m, ex) = build_score_matrix(std::slice::from_ref(&a), std::slice::from_ref(&a), 0.5).unwrap();
        assert_eq!(m.scores, vec![0.5]);
        assert!(ex.is_empty());
    }

    #[test]
    fn zero_norm_signature_is_excluded_and_reported() {
        let a = sig("a", vec![1.0, 0.0], vec![1.0, 0.0]);
        let z = sig("b", vec![0.0, 0.0], vec![1.0, 1.0]);
        let (m, ex) = build_score_matrix(&[a.clone(), z], &[a], 0.5).unwrap();
        assert_eq!(m.n_gallery(), 1);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].side, "gallery");
        assert!(ex[0].reason.contains("f_sta"));
    }
}
