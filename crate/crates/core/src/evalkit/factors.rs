//! Linear read-out of ground-truth factors from per-frame features.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::probes::{r_squared, LinearProbe};
use super::EvalError;
use crate::nets::{frames_to_tensor, DisentangledFeatures, GaitNet};
use crate::synthgait::LabeledClip;

/// Frames encoded per forward pass.
const CHUNK: usize = 32;

/// Held-out probe scores. Circular targets (phase, hue) are regressed as
/// `(sin, cos)` pairs and scored by pooled R².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorProbeReport {
    pub phase_r2_from_pose: f64,
    pub phase_r2_from_appearance: f64,
    pub hue_r2_from_appearance: f64,
    pub hue_r2_from_pose: f64,
    pub subject_acc_from_canonical: f64,
    pub subject_acc_from_appearance: f64,
    pub fit_frames: usize,
    pub test_frames: usize,
}

struct Rows {
    f_a: Vec<Vec<f64>>,
    f_c: Vec<Vec<f64>>,
    f_p: Vec<Vec<f64>>,
    phase: Vec<Vec<f64>>,
    hue: Vec<Vec<f64>>,
    subject: Vec<String>,
}

fn circle(angle: f64) -> Vec<f64> {
    vec![angle.sin(), angle.cos()]
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn encode_rows(net: &GaitNet<f32>, clips: &[&LabeledClip]) -> Result<Rows, EvalError> {
    let mut rows = Rows { f_a: vec![], f_c: vec![], f_p: vec![], phase: vec![], hue: vec![], subject: vec![] };
    for lc in clips {
        let mut feats: Vec<DisentangledFeatures<f32>> = Vec::with_capacity(lc.clip.len());
        for chunk in lc.clip.frames.chunks(CHUNK) {
            let refs: Vec<&[f32]> = chunk.iter().map(|f| f.data()).collect();
            feats.extend(net.encode(&frames_to_tensor::<f32>(&refs)).map_err(|e| EvalError::Probe(e.to_string()))?);
        }
        for (f, &phi) in feats.iter().zip(&lc.per_frame_phase) {
            rows.f_a.push(widen(&f.f_a));
            rows.f_c.push(widen(&f.f_c));
            rows.f_p.push(widen(&f.f_p));
            rows.phase.push(circle(phi));
            rows.hue.push(circle(TAU * lc.factors.appearance.hue));
            rows.subject.push(lc.clip.subject_id.clone());
        }
    }
    Ok(rows)
}

fn regress(fx: &[Vec<f64>], fy: &[Vec<f64>], tx: &[Vec<f64>], ty: &[Vec<f64>], ridge: f64) -> Result<f64, EvalError> {
    let probe = LinearProbe::fit(fx, fy, ridge)?;
    r_squared(&probe.predict(tx)?, ty)
}

fn classify(fx: &[Vec<f64>], fl: &[String], tx: &[Vec<f64>], tl: &[String], ridge: f64) -> Result<f64, EvalError> {
    let (probe, classes) = LinearProbe::fit_classifier(fx, fl, ridge)?;
    probe.accuracy(&classes, tx, tl)
}

/// Fits every probe on `fit` frames and scores it on `test` frames. With
/// `fit` and `test` drawn from disjoint conditions, the subject probes
/// measure condition-invariant identity and the hue probes generalize to
/// unseen colors.
pub fn factor_probes(
    net: &GaitNet<f32>,
    fit: &[&LabeledClip],
    test: &[&LabeledClip],
    ridge: f64,
) -> Result<FactorProbeReport, EvalError> {
    if fit.is_empty() || test.is_empty() {
        return Err(EvalError::InvalidInput("factor probes need fit and test clips".into()));
    }
    let f = encode_rows(net, fit)?;
    let t = encode_rows(net, test)?;
    Ok(FactorProbeReport {
        phase_r2_from_pose: regress(&f.f_p, &f.phase, &t.f_p, &t.phase, ridge)?,
        phase_r2_from_appearance: regress(&f.f_a, &f.phase, &t.f_a, &t.phase, ridge)?,
        hue_r2_from_appearance: regress(&f.f_a, &f.hue, &t.f_a, &t.hue, ridge)?,
        hue_r2_from_pose: regress(&f.f_p, &f.hue, &t.f_p, &t.hue, ridge)?,
        subject_acc_from_canonical: classify(&f.f_c, &f.subject, &t.f_c, &t.subject, ridge)?,
        subject_acc_from_appearance: classify(&f.f_a, &f.subject, &t.f_a, &t.subject, ridge)?,
        fit_frames: f.subject.len(),
        test_frames: t.subject.len(),
    })
}
