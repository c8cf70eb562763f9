use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{EngineError, TrainConfig};
use crate::clip_store::Clip;

/// Maps subject ids to classifier indices (sorted id order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubjectIndex {
    ids: Vec<String>,
}

impl SubjectIndex {
    pub fn from_clips(clips: &[Clip]) -> Self {
        let mut ids: Vec<String> = clips.iter().map(|c| c.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, subject: &str) -> Option<usize> {
        self.ids.binary_search_by(|s| s.as_str().cmp(subject)).ok()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// One clip of a batch: a `clip_len` window starting at `start`, plus two
/// distinct frames anywhere in the clip used for cross reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchClip {
    pub clip: usize,
    pub subject: usize,
    pub start: usize,
    pub t1: usize,
    pub t2: usize,
}

/// A training batch: clips plus same-subject, cross-condition pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPairing {
    pub clip_len: usize,
    pub clips: Vec<BatchClip>,
    /// Indices into `clips`; both sides share a subject and differ in condition.
    pub pairs: Vec<(usize, usize)>,
}

/// Samples `clips_per_batch / 2` subjects, each contributing one clip from
/// each of two distinct conditions. Clips shorter than `clip_len` are
/// ignored.
pub fn compose_batch<R: Rng + ?Sized>(
    clips: &[Clip],
    index: &SubjectIndex,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<BatchPairing, EngineError> {
    config.validate()?;
    // subject -> condition -> eligible clip indices, all in sorted order.
    let mut by_subject: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    let mut short = 0usize;
    for (i, c) in clips.iter().enumerate() {
        if c.len() < config.clip_len {
            short += 1;
            continue;
        }
        by_subject
            .entry(c.subject_id.as_str())
            .or_default()
            .entry(c.condition_id.as_str())
            .or_default()
            .push(i);
    }
    let eligible: Vec<(&str, Vec<&Vec<usize>>)> = by_subject
        .iter()
        .filter(|(_, conds)| conds.len() >= 2)
        .map(|(s, conds)| (*s, conds.values().collect()))
        .collect();
    if eligible.is_empty() {
        return Err(EngineError::Config(format!(
            "no subject has clips of at least {} frames in two or more conditions \
             ({} of {} clips too short, {} subjects with a usable condition)",
            config.clip_len,
            short,
            clips.len(),
            by_subject.len()
        )));
    }
    let n_pairs = config.clips_per_batch / 2;
    let mut chosen = Vec::with_capacity(n_pairs);
    if eligible.len() >= n_pairs {
        chosen.extend(sample(rng, eligible.len(), n_pairs).into_iter());
    } else {
        while chosen.len() < n_pairs {
            let mut order: Vec<usize> = (0..eligible.len()).collect();
            order.shuffle(rng);
            chosen.extend(order.into_iter().take(n_pairs - chosen.len()));
        }
    }
    let mut batch = BatchPairing {
        clip_len: config.clip_len,
        clips: Vec::with_capacity(config.clips_per_batch),
        pairs: Vec::with_capacity(n_pairs),
    };
    for s in chosen {
        let (subject_id, conds) = &eligible[s];
        let subject = index
            .index_of(subject_id)
            .ok_or_else(|| EngineError::Config(format!("subject {subject_id:?} missing from the subject index")))?;
        let picked = sample(rng, conds.len(), 2);
        let first = batch.clips.len();
        for ci in picked.iter() {
            let candidates = conds[ci];
            let clip = candidates[rng.random_range(0..candidates.len())];
            let start = rng.random_range(0..=clips[clip].len() - config.clip_len);
            let n = clips[clip].len();
            let t1 = rng.random_range(0..n);
            let t2 = if n > 1 { (t1 + rng.random_range(1..n)) % n } else { t1 };
            batch.clips.push(BatchClip { clip, subject, start, t1, t2 });
        }
        batch.pairs.push((first, first + 1));
    }
    Ok(batch)
}
