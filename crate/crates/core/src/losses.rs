//! Training objectives with closed-form gradients.
//!
//! Each loss has a value function matching its definition and, where the
//! trainer needs it, a gradient variant. Feature widths are generic so the
//! losses can be checked on tiny hand-built instances.

use serde::{Deserialize, Serialize};

use crate::nets::layers::Linear;
use crate::nets::real::{log_softmax, softmax, Real};
use crate::nets::{APPEARANCE_DIM, CANONICAL_DIM, POSE_DIM};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("shape error: {0}")]
    Shape(String),
}

/// Widths of the `[f_a | f_c | f_p]` blocks of a feature row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureSplit {
    pub appearance: usize,
    pub canonical: usize,
    pub pose: usize,
}

impl FeatureSplit {
    pub const MODEL: Self = Self {
        appearance: APPEARANCE_DIM,
        canonical: CANONICAL_DIM,
        pose: POSE_DIM,
    };

    pub fn width(&self) -> usize {
        self.appearance + self.canonical + self.pose
    }

    fn pose_start(&self) -> usize {
        self.appearance + self.canonical
    }
}

/// Which frame supplies which feature in the cross reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossReconConvention {
    /// Appearance and canonical from the source frame, pose from the target.
    SourceStaticTargetPose,
    /// Appearance from the target, canonical and pose from the source.
    TargetAppearanceSourcePose,
}

/// The convention used by training and evaluation.
pub const CROSS_RECON_CONVENTION: CrossReconConvention = CrossReconConvention::SourceStaticTargetPose;

/// Decoder input that should reconstruct the target frame.
pub fn cross_recon_row<T: Real>(conv: CrossReconConvention, split: FeatureSplit, source: &[T], target: &[T]) -> Vec<T> {
    let ps = split.pose_start();
    match conv {
        CrossReconConvention::SourceStaticTargetPose => [&source[..ps], &target[ps..]].concat(),
        CrossReconConvention::TargetAppearanceSourcePose => {
            [&target[..split.appearance], &source[split.appearance..]].concat()
        }
    }
}

/// Routes the gradient of a [`cross_recon_row`] back to its two rows.
pub fn cross_recon_row_backward<T: Real>(
    conv: CrossReconConvention,
    split: FeatureSplit,
    d_row: &[T],
    d_source: &mut [T],
    d_target: &mut [T],
) {
    let cut = match conv {
        CrossReconConvention::SourceStaticTargetPose => split.pose_start(),
        CrossReconConvention::TargetAppearanceSourcePose => split.appearance,
    };
    let (first, second) = match conv {
        CrossReconConvention::SourceStaticTargetPose => (d_source, d_target),
        CrossReconConvention::TargetAppearanceSourcePose => (d_target, d_source),
    };
    first[..cut].iter_mut().zip(&d_row[..cut]).for_each(|(g, &d)| *g += d);
    second[cut..].iter_mut().zip(&d_row[cut..]).for_each(|(g, &d)| *g += d);
}

pub fn mse<T: Real>(pred: &[T], target: &[T]) -> T {
    assert_eq!(pred.len(), target.len());
    pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum::<T>() / T::lit(pred.len() as f64)
}

/// Gradient of `scale * mse(pred, target)` w.r.t. `pred`.
pub fn mse_grad<T: Real>(pred: &[T], target: &[T], scale: T) -> Vec<T> {
    let k = scale * T::lit(2.0 / pred.len() as f64);
    pred.iter().zip(target).map(|(&p, &t)| k * (p - t)).collect()
}

/// Symmetric cross reconstruction loss for two frames of one clip: the
/// mean of the t1→t2 and t2→t1 reconstruction errors.
#[allow(clippy::too_many_arguments)]
pub fn cross_recon_loss<T: Real>(
    clip_t1: &str,
    clip_t2: &str,
    feats_t1: &[T],
    feats_t2: &[T],
    x_t1: &[T],
    x_t2: &[T],
    split: FeatureSplit,
    decoder: &mut dyn FnMut(&[T]) -> Vec<T>,
) -> Result<T, LossError> {
    if clip_t1 != clip_t2 {
        return Err(LossError::Pairing(format!(
            "cross reconstruction frames come from different clips ({clip_t1} vs {clip_t2})"
        )));
    }
    if feats_t1.len() != split.width() || feats_t2.len() != split.width() {
        return Err(LossError::Shape(format!("feature rows must have width {}", split.width())));
    }
    let conv = CROSS_RECON_CONVENTION;
    let fwd = decoder(&cross_recon_row(conv, split, feats_t1, feats_t2));
    let bwd = decoder(&cross_recon_row(conv, split, feats_t2, feats_t1));
    if fwd.len() != x_t2.len() || bwd.len() != x_t1.len() {
        return Err(LossError::Shape("decoder output does not match frame size".into()));
    }
    Ok(T::lit(0.5) * (mse(&fwd, x_t2) + mse(&bwd, x_t1)))
}

fn check_seq<T>(name: &str, seq: &[Vec<T>]) -> Result<usize, LossError> {
    let first = seq
        .first()
        .ok_or_else(|| LossError::InvalidInput(format!("{name} is empty")))?;
    if seq.iter().any(|v| v.len() != first.len()) {
        return Err(LossError::Shape(format!("{name} has ragged rows")));
    }
    Ok(first.len())
}

pub fn mean_vec<T: Real>(seq: &[Vec<T>]) -> Vec<T> {
    let mut m = vec![T::zero(); seq[0].len()];
    for v in seq {
        m.iter_mut().zip(v).for_each(|(a, &b)| *a += b);
    }
    let n = T::lit(seq.len() as f64);
    m.iter_mut().for_each(|a| *a /= n);
    m
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Squared distance between the time-averaged pose features of two clips.
pub fn pose_sim_loss<T: Real>(seq1: &[Vec<T>], seq2: &[Vec<T>]) -> Result<T, LossError> {
    Ok(pose_sim_grad(seq1, seq2)?.0)
}

/// Value and per-frame gradients of [`pose_sim_loss`].
pub fn pose_sim_grad<T: Real>(
    seq1: &[Vec<T>],
    seq2: &[Vec<T>],
) -> Result<(T, Vec<Vec<T>>, Vec<Vec<T>>), LossError> {
    let d1 = check_seq("first pose sequence", seq1)?;
    let d2 = check_seq("second pose sequence", seq2)?;
    if d1 != d2 {
        return Err(LossError::Shape(format!("pose widths differ ({d1} vs {d2})")));
    }
    let (m1, m2) = (mean_vec(seq1), mean_vec(seq2));
    let value = sq_dist(&m1, &m2);
    let diff: Vec<T> = m1.iter().zip(&m2).map(|(&a, &b)| T::lit(2.0) * (a - b)).collect();
    let g1: Vec<T> = diff.iter().map(|&d| d / T::lit(seq1.len() as f64)).collect();
    let g2: Vec<T> = diff.iter().map(|&d| -d / T::lit(seq2.len() as f64)).collect();
    Ok((value, vec![g1; seq1.len()], vec![g2; seq2.len()]))
}

/// Term (a) of the canonical consistency loss:
/// `(1/n²) Σ_{i≠j} ‖f_i − f_j‖²`, with gradients.
pub fn cano_within_grad<T: Real>(fc: &[Vec<T>]) -> (T, Vec<Vec<T>>) {
    let n = fc.len();
    let nt = T::lit(n as f64);
    let s = {
        let mut s = vec![T::zero(); fc[0].len()];
        for f in fc {
            s.iter_mut().zip(f).for_each(|(a, &b)| *a += b);
        }
        s
    };
    let mut value = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            value += sq_dist(&fc[i], &fc[j]);
        }
    }
    let value = T::lit(2.0) * value / (nt * nt);
    let k = T::lit(4.0) / (nt * nt);
    let grads = fc
        .iter()
        .map(|f| f.iter().zip(&s).map(|(&x, &sv)| k * (nt * x - sv)).collect())
        .collect();
    (value, grads)
}

/// Term (b): `(1/n1) Σ_{i<m} ‖f_i^{c1} − f_i^{c2}‖²` over the common length
/// `m = min(n1, n2)`. The flag reports whether truncation happened.
pub fn cano_cross_grad<T: Real>(fc1: &[Vec<T>], fc2: &[Vec<T>]) -> (T, Vec<Vec<T>>, Vec<Vec<T>>, bool) {
    let n1 = T::lit(fc1.len() as f64);
    let m = fc1.len().min(fc2.len());
    let width = fc1[0].len();
    let mut g1 = vec![vec![T::zero(); width]; fc1.len()];
    let mut g2 = vec![vec![T::zero(); width]; fc2.len()];
    let mut value = T::zero();
    for i in 0..m {
        value += sq_dist(&fc1[i], &fc2[i]);
        for k in 0..width {
            let d = T::lit(2.0) * (fc1[i][k] - fc2[i][k]) / n1;
            g1[i][k] = d;
            g2[i][k] = -d;
        }
    }
    (value / n1, g1, g2, fc2.len() < fc1.len())
}

/// Negative log-likelihood of `subject` from a probability vector.
pub fn nll_from_probs<T: Real>(probs: &[T], subject: usize) -> Result<T, LossError> {
    let p = *probs
        .get(subject)
        .ok_or_else(|| LossError::Shape(format!("subject {subject} outside {} classes", probs.len())))?;
    Ok(-p.ln())
}

/// NLL of `subject` under `softmax(logits)` and its logit gradient.
pub fn nll_logits_grad<T: Real>(logits: &[T], subject: usize) -> (T, Vec<T>) {
    let lsm = log_softmax(logits);
    let mut g: Vec<T> = lsm.iter().map(|l| l.exp()).collect();
    g[subject] -= T::one();
    (-lsm[subject], g)
}

/// Mean NLL of `subject` over `inputs` under a linear softmax classifier;
/// accumulates the classifier gradient (scaled by `scale`) and returns the
/// per-input gradients of `scale * loss`.
pub fn linear_nll_grad<T: Real>(cls: &mut Linear<T>, inputs: &[Vec<T>], subject: usize, scale: T) -> (T, Vec<Vec<T>>) {
    let n = inputs.len();
    let flat: Vec<T> = inputs.concat();
    let logits = cls.forward(&flat, n);
    let k = cls.outputs;
    let mut value = T::zero();
    let mut dlogits = Vec::with_capacity(n * k);
    let per = scale / T::lit(n as f64);
    for row in logits.chunks(k) {
        let (l, g) = nll_logits_grad(row, subject);
        value += l;
        dlogits.extend(g.into_iter().map(|x| x * per));
    }
    let dx = cls.backward(&flat, &dlogits, n);
    (value / T::lit(n as f64), dx.chunks(cls.inputs).map(<[T]>::to_vec).collect())
}

/// Breakdown of one canonical consistency evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanoCons<T> {
    pub value: T,
    pub within: T,
    pub cross: T,
    pub identity: T,
    /// Second condition had fewer frames; term (b) used the common prefix.
    pub truncated: bool,
}

/// Canonical consistency loss. `classifier` maps a canonical feature to
/// subject probabilities.
pub fn cano_cons_loss<T: Real>(
    fc1: &[Vec<T>],
    fc2: &[Vec<T>],
    subject: usize,
    classifier: &dyn Fn(&[T]) -> Vec<T>,
) -> Result<CanoCons<T>, LossError> {
    let d1 = check_seq("first canonical sequence", fc1)?;
    let d2 = check_seq("second canonical sequence", fc2)?;
    if d1 != d2 {
        return Err(LossError::Shape(format!("canonical widths differ ({d1} vs {d2})")));
    }
    let (within, _) = cano_within_grad(fc1);
    let (cross, _, _, truncated) = cano_cross_grad(fc1, fc2);
    let mut identity = T::zero();
    for f in fc1 {
        identity += nll_from_probs(&classifier(f), subject)?;
    }
    identity /= T::lit(fc1.len() as f64);
    Ok(CanoCons {
        value: within + cross + identity,
        within,
        cross,
        identity,
        truncated,
    })
}

/// Running mean of the LSTM outputs up to step `t` (1-based).
pub fn dyn_gait<T: Real>(h: &[Vec<T>], t: usize) -> Result<Vec<T>, LossError> {
    check_seq("LSTM output sequence", h)?;
    if t == 0 || t > h.len() {
        return Err(LossError::InvalidInput(format!("step {t} outside 1..={}", h.len())));
    }
    Ok(mean_vec(&h[..t]))
}

/// Running means for every step.
pub fn running_means<T: Real>(h: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut acc = vec![T::zero(); h[0].len()];
    h.iter()
        .enumerate()
        .map(|(t, v)| {
            acc.iter_mut().zip(v).for_each(|(a, &b)| *a += b);
            let n = T::lit((t + 1) as f64);
            acc.iter().map(|&a| a / n).collect()
        })
        .collect()
}

/// Identity-loss variant applied to the LSTM outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdLossKind {
    /// Classify the last output.
    Single,
    /// Classify the mean of all outputs.
    Avg,
    /// Weighted sum over steps of the running-mean loss, weights `t²`.
    IncAvg,
}

/// Normalized per-step weights of the incremental loss.
pub fn inc_avg_weights(n: usize) -> Vec<f64> {
    let total: f64 = (1..=n).map(|t| (t * t) as f64).sum();
    (1..=n).map(|t| (t * t) as f64 / total).collect()
}

pub fn id_single_loss<T: Real>(h: &[Vec<T>], subject: usize, classifier: &dyn Fn(&[T]) -> Vec<T>) -> Result<T, LossError> {
    check_seq("LSTM output sequence", h)?;
    nll_from_probs(&classifier(&h[h.len() - 1]), subject)
}

pub fn id_avg_loss<T: Real>(h: &[Vec<T>], subject: usize, classifier: &dyn Fn(&[T]) -> Vec<T>) -> Result<T, LossError> {
    let f = dyn_gait(h, h.len())?;
    nll_from_probs(&classifier(&f), subject)
}

pub fn id_inc_avg_loss<T: Real>(h: &[Vec<T>], subject: usize, classifier: &dyn Fn(&[T]) -> Vec<T>) -> Result<T, LossError> {
    check_seq("LSTM output sequence", h)?;
    let w = inc_avg_weights(h.len());
    let mut total = T::zero();
    for (f, &wt) in running_means(h).iter().zip(&w) {
        total += T::lit(wt) * nll_from_probs(&classifier(f), subject)?;
    }
    Ok(total)
}

/// Identity loss of one clip under a linear classifier, with the classifier
/// gradient accumulated (scaled by `scale`) and `d(scale * loss)/dh` returned.
pub fn id_loss_linear_grad<T: Real>(
    kind: IdLossKind,
    h: &[Vec<T>],
    subject: usize,
    cls: &mut Linear<T>,
    scale: T,
) -> (T, Vec<Vec<T>>) {
    let n = h.len();
    let width = h[0].len();
    // Classified features g_t and their weights ω_t.
    let (feats, weights): (Vec<Vec<T>>, Vec<T>) = match kind {
        IdLossKind::Single => (vec![h[n - 1].clone()], vec![T::one()]),
        IdLossKind::Avg => (vec![mean_vec(h)], vec![T::one()]),
        IdLossKind::IncAvg => (running_means(h), inc_avg_weights(n).into_iter().map(T::lit).collect()),
    };
    let m = feats.len();
    let flat = feats.concat();
    let logits = cls.forward(&flat, m);
    let k = cls.outputs;
    let mut value = T::zero();
    let mut dlogits = Vec::with_capacity(m * k);
    for (row, &w) in logits.chunks(k).zip(&weights) {
        let (l, g) = nll_logits_grad(row, subject);
        value += w * l;
        dlogits.extend(g.into_iter().map(|x| x * w * scale));
    }
    let dfeat = cls.backward(&flat, &dlogits, m);
    let mut dh = vec![vec![T::zero(); width]; n];
    match kind {
        IdLossKind::Single => dh[n - 1].copy_from_slice(&dfeat),
        IdLossKind::Avg => {
            let inv = T::one() / T::lit(n as f64);
            for row in dh.iter_mut() {
                row.iter_mut().zip(&dfeat).for_each(|(a, &b)| *a = b * inv);
            }
        }
        IdLossKind::IncAvg => {
            // dL/dh_s = Σ_{t≥s} (1/t) dL/dg_t, accumulated from the end.
            let mut acc = vec![T::zero(); width];
            for s in (0..n).rev() {
                let inv = T::one() / T::lit((s + 1) as f64);
                acc.iter_mut()
                    .zip(&dfeat[s * width..(s + 1) * width])
                    .for_each(|(a, &b)| *a += b * inv);
                dh[s].copy_from_slice(&acc);
            }
        }
    }
    (value, dh)
}

/// Convenience: probabilities of a linear classifier on one input.
pub fn linear_probs<T: Real>(cls: &Linear<T>, x: &[T]) -> Vec<T> {
    softmax(&cls.forward(x, 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_d: f64,
    pub lambda_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_d: 1.0,
            lambda_s: 1.0,
        }
    }
}

impl LossWeights {
    /// Names of fields that are negative or non-finite.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        for (name, x) in [("lambda_r", self.lambda_r), ("lambda_d", self.lambda_d), ("lambda_s", self.lambda_s)] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(name);
            }
        }
        v
    }
}

/// The four loss components of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub identity: f64,
    pub cross_recon: f64,
    pub pose_sim: f64,
    pub cano_cons: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("identity", self.identity),
            ("cross_recon", self.cross_recon),
            ("pose_sim", self.pose_sim),
            ("cano_cons", self.cano_cons),
        ]
    }
}

/// `L_id + λr·L_xrecon + λd·L_pose + λs·L_cano`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    c.identity + w.lambda_r * c.cross_recon + w.lambda_d * c.pose_sim + w.lambda_s * c.cano_cons
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inc_avg_weights_for_two_steps() {
        let w = inc_avg_weights(2);
        assert!((w[0] - 0.2).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cross_recon_rejects_frames_from_different_clips() {
        let f = vec![0.0f64; 3];
        let mut dec = |_: &[f64]| vec![0.0];
        let split = FeatureSplit { appearance: 1, canonical: 1, pose: 1 };
        let err = cross_recon_loss("a", "b", &f, &f, &[0.0], &[0.0], split, &mut dec).unwrap_err();
        assert!(matches!(err, LossError::Pairing(_)));
    }

    #[test]
    fn cross_row_takes_pose_from_target() {
        let split = FeatureSplit { appearance: 1, canonical: 1, pose: 2 };
        let row = cross_recon_row(CrossReconConvention::SourceStaticTargetPose, split, &[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(row, vec![1.0, 2.0, 7.0, 8.0]);
        let row = cross_recon_row(CrossReconConvention::TargetAppearanceSourcePose, split, &[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(row, vec![5.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_sequences_are_rejected() {
        let e: Vec<Vec<f64>> = vec![];
        assert!(pose_sim_loss(&e, &[vec![1.0]]).is_err());
        assert!(dyn_gait(&e, 1).is_err());
        let uni = |_: &[f64]| vec![0.5, 0.5];
        assert!(id_inc_avg_loss(&e, 0, &uni).is_err());
        assert!(cano_cons_loss(&e, &e, 0, &uni).is_err());
    }

    #[test]
    fn cano_truncation_is_reported() {
        let a = vec![vec![1.0f64], vec![2.0], vec![3.0]];
        let b = vec![vec![1.0f64]];
        let uni = |_: &[f64]| vec![1.0];
        let r = cano_cons_loss(&a, &b, 0, &uni).unwrap();
        assert!(r.truncated);
        assert_eq!(r.cross, 0.0);
    }
}
