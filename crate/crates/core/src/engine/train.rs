use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{compose_batch, Adam, BatchPairing, EngineError, SubjectIndex, TrainConfig};
use crate::clip_store::Clip;
use crate::losses::{
    cano_cross_grad, cano_within_grad, cross_recon_row, cross_recon_row_backward, id_loss_linear_grad,
    linear_nll_grad, mse, mse_grad, pose_sim_grad, total_loss, FeatureSplit, LossComponents, CROSS_RECON_CONVENTION,
};
use crate::nets::{frames_to_tensor, ArchConfig, GaitNet, Real, Tensor, CANONICAL, FEATURE_DIM, LSTM_HIDDEN, POSE};

/// Frames and labels of one batch, independent of where they came from.
#[derive(Clone, Debug)]
pub struct StepBatch<'a> {
    pub clip_len: usize,
    /// `clips × clip_len` HWC frames.
    pub frames: Vec<Vec<&'a [f32]>>,
    pub subjects: Vec<usize>,
    /// Frames `(x^t1, x^t2)` per clip for cross reconstruction; encoded
    /// after the windows.
    pub recon_frames: Vec<(&'a [f32], &'a [f32])>,
    pub pairs: Vec<(usize, usize)>,
}

impl<'a> StepBatch<'a> {
    pub fn from_pairing(clips: &'a [Clip], pairing: &BatchPairing) -> Self {
        let l = pairing.clip_len;
        Self {
            clip_len: l,
            frames: pairing
                .clips
                .iter()
                .map(|b| clips[b.clip].frames[b.start..b.start + l].iter().map(|f| f.data()).collect())
                .collect(),
            subjects: pairing.clips.iter().map(|b| b.subject).collect(),
            recon_frames: pairing
                .clips
                .iter()
                .map(|b| (clips[b.clip].frames[b.t1].data(), clips[b.clip].frames[b.t2].data()))
                .collect(),
            pairs: pairing.pairs.clone(),
        }
    }

    fn validate(&self) -> Result<(), EngineError> {
        let n = self.frames.len();
        if n == 0 || self.clip_len == 0 || self.pairs.is_empty() {
            return Err(EngineError::InvalidInput("batch needs clips, frames and at least one pair".into()));
        }
        if self.frames.iter().any(|f| f.len() != self.clip_len)
            || self.subjects.len() != n
            || self.recon_frames.len() != n
            || self.pairs.iter().any(|&(a, b)| a >= n || b >= n || a == b)
        {
            return Err(EngineError::InvalidInput("inconsistent batch layout".into()));
        }
        if self.pairs.iter().any(|&(a, b)| self.subjects[a] != self.subjects[b]) {
            return Err(EngineError::InvalidInput("paired clips must share a subject".into()));
        }
        Ok(())
    }
}

/// Loss components of one step plus the schedule position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub iteration: u64,
    pub lr: f64,
    pub components: LossComponents,
    pub total: f64,
}

/// One row of the CSV training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub lr: f64,
    pub identity: f64,
    pub cross_recon: f64,
    pub pose_sim: f64,
    pub cano_cons: f64,
    pub total: f64,
}

impl From<&LossReport> for TrainLogRow {
    fn from(r: &LossReport) -> Self {
        Self {
            iteration: r.iteration,
            lr: r.lr,
            identity: r.components.identity,
            cross_recon: r.components.cross_recon,
            pose_sim: r.components.pose_sim,
            cano_cons: r.components.cano_cons,
            total: r.total,
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

/// Forward pass of the full objective with gradients accumulated into
/// every parameter. Each component is averaged over the batch (pairs for
/// the pose and canonical terms) before weighting.
pub fn loss_and_grads<T: Real>(
    net: &mut GaitNet<T>,
    batch: &StepBatch<'_>,
    cfg: &TrainConfig,
    update_running: bool,
) -> Result<LossComponents, EngineError> {
    batch.validate()?;
    let b = batch.frames.len();
    let l = batch.clip_len;
    let w = &cfg.weights;
    let mut flat: Vec<&[f32]> = batch.frames.iter().flatten().copied().collect();
    flat.extend(batch.recon_frames.iter().flat_map(|&(x1, x2)| [x1, x2]));
    let x = frames_to_tensor::<T>(&flat);
    let (feats, enc_cache) = net.encoder.forward_train(&x, update_running)?;
    let mut dfeats = vec![T::zero(); feats.len()];
    let at = |bi: usize, t: usize| (bi * l + t) * FEATURE_DIM;
    // Offset of recon frame `j` (0 for t1, 1 for t2) of clip `bi`.
    let rat = |bi: usize, j: usize| (b * l + 2 * bi + j) * FEATURE_DIM;
    let mut comps = LossComponents::default();

    // Identity loss on the LSTM outputs over pose features (time-major batch).
    let xs: Vec<Vec<T>> = (0..l)
        .map(|t| (0..b).flat_map(|bi| feats[at(bi, t) + POSE.start..at(bi, t) + POSE.end].iter().copied()).collect())
        .collect();
    let (h, lstm_cache) = net.lstm.forward(&xs, b);
    let inv_b = T::one() / T::lit(b as f64);
    let mut dh_top = vec![vec![T::zero(); b * LSTM_HIDDEN]; l];
    for bi in 0..b {
        let seq: Vec<Vec<T>> = h.iter().map(|ht| ht[bi * LSTM_HIDDEN..(bi + 1) * LSTM_HIDDEN].to_vec()).collect();
        let (v, dh) = id_loss_linear_grad(cfg.id_loss, &seq, batch.subjects[bi], &mut net.cls_dg, inv_b);
        comps.identity += v.as_f64() / b as f64;
        for (t, d) in dh.iter().enumerate() {
            dh_top[t][bi * LSTM_HIDDEN..(bi + 1) * LSTM_HIDDEN].copy_from_slice(d);
        }
    }
    let dxs = net.lstm.backward(&lstm_cache, &dh_top);
    for (t, dx) in dxs.iter().enumerate() {
        for bi in 0..b {
            let o = at(bi, t);
            add_into(&mut dfeats[o + POSE.start..o + POSE.end], &dx[bi * POSE.len()..(bi + 1) * POSE.len()]);
        }
    }

    // Cross reconstruction in both directions for every clip.
    let split = FeatureSplit::MODEL;
    let conv = CROSS_RECON_CONVENTION;
    let mut z = Vec::with_capacity(2 * b * FEATURE_DIM);
    let mut targets: Vec<&[f32]> = Vec::with_capacity(2 * b);
    for (bi, &(x1, x2)) in batch.recon_frames.iter().enumerate() {
        let (r1, r2) = (&feats[rat(bi, 0)..rat(bi, 0) + FEATURE_DIM], &feats[rat(bi, 1)..rat(bi, 1) + FEATURE_DIM]);
        z.extend(cross_recon_row(conv, split, r1, r2));
        targets.push(x2);
        z.extend(cross_recon_row(conv, split, r2, r1));
        targets.push(x1);
    }
    let target = frames_to_tensor::<T>(&targets);
    let (y, dec_cache) = net.decoder.forward_train(&z, 2 * b, update_running)?;
    let mut dy = Tensor::zeros(y.shape());
    let scale = T::lit(w.lambda_r * 0.5) * inv_b;
    for i in 0..2 * b {
        comps.cross_recon += 0.5 * mse(y.item(i), target.item(i)).as_f64() / b as f64;
        dy.item_mut(i).copy_from_slice(&mse_grad(y.item(i), target.item(i), scale));
    }
    let dz = net.decoder.backward(&dec_cache, &dy);
    for bi in 0..b {
        for (k, (src, tgt)) in [(0, 1), (1, 0)].into_iter().enumerate() {
            let row = &dz[(2 * bi + k) * FEATURE_DIM..(2 * bi + k + 1) * FEATURE_DIM];
            let mut ds = vec![T::zero(); FEATURE_DIM];
            let mut dt = vec![T::zero(); FEATURE_DIM];
            cross_recon_row_backward(conv, split, row, &mut ds, &mut dt);
            add_into(&mut dfeats[rat(bi, src)..rat(bi, src) + FEATURE_DIM], &ds);
            add_into(&mut dfeats[rat(bi, tgt)..rat(bi, tgt) + FEATURE_DIM], &dt);
        }
    }

    // Pose similarity and canonical consistency over the pairs.
    let block = |bi: usize, r: std::ops::Range<usize>| -> Vec<Vec<T>> {
        (0..l).map(|t| feats[at(bi, t) + r.start..at(bi, t) + r.end].to_vec()).collect()
    };
    let np = batch.pairs.len();
    let pose_scale = T::lit(w.lambda_d / np as f64);
    let cano_scale = T::lit(w.lambda_s / (2 * np) as f64);
    for &(pa, pb) in &batch.pairs {
        let (v, ga, gb) = pose_sim_grad(&block(pa, POSE), &block(pb, POSE))?;
        comps.pose_sim += v.as_f64() / np as f64;
        for t in 0..l {
            for (bi, g) in [(pa, &ga[t]), (pb, &gb[t])] {
                let o = at(bi, t) + POSE.start;
                dfeats[o..o + POSE.len()].iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * pose_scale);
            }
        }
        for (c1, c2) in [(pa, pb), (pb, pa)] {
            let (f1, f2) = (block(c1, CANONICAL), block(c2, CANONICAL));
            let (within, gw) = cano_within_grad(&f1);
            let (cross, g1, g2, _) = cano_cross_grad(&f1, &f2);
            let (nll, gn) = linear_nll_grad(&mut net.cls_sg, &f1, batch.subjects[c1], cano_scale);
            comps.cano_cons += (within + cross + nll).as_f64() / (2 * np) as f64;
            for t in 0..l {
                let o1 = at(c1, t) + CANONICAL.start;
                for k in 0..CANONICAL.len() {
                    dfeats[o1 + k] += (gw[t][k] + g1[t][k]) * cano_scale + gn[t][k];
                }
                let o2 = at(c2, t) + CANONICAL.start;
                dfeats[o2..o2 + CANONICAL.len()]
                    .iter_mut()
                    .zip(&g2[t])
                    .for_each(|(d, &gv)| *d += gv * cano_scale);
            }
        }
    }
    net.encoder.backward(&enc_cache, &dfeats, false);
    Ok(comps)
}

fn check_finite(c: &LossComponents, iteration: u64) -> Result<(), EngineError> {
    match c.named().into_iter().find(|(_, v)| !v.is_finite()) {
        Some((component, _)) => Err(EngineError::NonFiniteLoss { component, iteration }),
        None => Ok(()),
    }
}

/// One Adam update on the combined objective. Parameters are left
/// untouched when any loss component is non-finite.
pub fn train_step<T: Real>(
    net: &mut GaitNet<T>,
    adam: &mut Adam<T>,
    batch: &StepBatch<'_>,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<LossReport, EngineError> {
    net.zero_grad();
    let components = loss_and_grads(net, batch, cfg, true)?;
    check_finite(&components, iteration)?;
    let lr = cfg.lr_at(iteration);
    adam.update(&mut net.params_mut(), lr, &cfg.adam());
    Ok(LossReport {
        iteration,
        lr,
        components,
        total: total_loss(&components, &cfg.weights),
    })
}

/// Training state over a fixed clip collection.
pub struct Trainer {
    pub net: GaitNet<f32>,
    pub adam: Adam<f32>,
    pub config: TrainConfig,
    pub subjects: SubjectIndex,
    pub iteration: u64,
    rng: ChaCha8Rng,
}

/// Stream offset so batch sampling and weight init use unrelated streams.
const BATCH_STREAM: u64 = 0x6261_7463_6865_7321;

impl Trainer {
    pub fn new(clips: &[Clip], config: TrainConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let subjects = SubjectIndex::from_clips(clips);
        if subjects.is_empty() {
            return Err(EngineError::Config("training set is empty".into()));
        }
        let arch = ArchConfig { large_model: config.large_model, n_subjects: subjects.len() };
        Ok(Self {
            net: GaitNet::init(arch, config.seed)?,
            adam: Adam::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ BATCH_STREAM),
            config,
            subjects,
            iteration: 0,
        })
    }

    pub fn step(&mut self, clips: &[Clip]) -> Result<LossReport, EngineError> {
        let pairing = compose_batch(clips, &self.subjects, &self.config, &mut self.rng)?;
        let batch = StepBatch::from_pairing(clips, &pairing);
        let report = train_step(&mut self.net, &mut self.adam, &batch, &self.config, self.iteration)?;
        self.iteration += 1;
        Ok(report)
    }
}

/// Runs `config.max_iterations` steps, reporting each one.
pub fn train(
    clips: &[Clip],
    config: &TrainConfig,
    on_step: &mut dyn FnMut(&LossReport),
) -> Result<Trainer, EngineError> {
    let mut trainer = Trainer::new(clips, config.clone())?;
    while trainer.iteration < config.max_iterations {
        let r = trainer.step(clips)?;
        on_step(&r);
    }
    Ok(trainer)
}
