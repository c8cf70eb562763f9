use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaitdis_core::clip_store::{ingest_manifest_file, load_archive, persist_archive, Clip, IngestReport};
use gaitdis_core::engine::{export_signatures, train, LossReport, SignatureRecord, TrainLogRow};
use gaitdis_core::evalkit::{
    alpha_sweep, duration_sweep, evaluate, AlphaRow, Channel, DurationRow, EvalReport, LabeledSignature, ProtocolSpec,
    MetricValues, ScoreMatrices, ScoreMatrix,
};
use gaitdis_core::nets::GaitNet;
use gaitdis_core::synthgait::{make_dataset, write_dataset};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::write_json;
use crate::viz::{decode_viz, DecodeViz};

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub clips: usize,
    pub subjects: usize,
    pub out_dir: PathBuf,
}

/// Generates the configured synthetic dataset under `paths.dataset`
/// (archive at `paths.archive`, ground truth in `factors.json`).
pub fn cmd_synth(cfg: &RunConfig, with_media: bool) -> Result<SynthSummary> {
    let s = &cfg.synth;
    let ds = make_dataset(s.n_subjects, s.conditions, s.clips_per_condition, cfg.seed, &s.options())?;
    write_dataset(&ds, &cfg.paths.dataset, with_media)?;
    let clips: Vec<Clip> = ds.clips.iter().map(|c| c.clip.clone()).collect();
    if cfg.paths.archive != cfg.paths.dataset.join("archive") {
        persist_archive(&clips, &cfg.paths.archive)?;
    }
    Ok(SynthSummary {
        clips: clips.len(),
        subjects: ds.subjects.len(),
        out_dir: cfg.paths.dataset.clone(),
    })
}

/// Ingests a manifest into `paths.archive`; per-entry failures are
/// reported, not fatal.
pub fn cmd_ingest(cfg: &RunConfig, manifest: &Path) -> Result<IngestReport> {
    let (clips, report) = ingest_manifest_file(manifest)?;
    persist_archive(&clips, &cfg.paths.archive)?;
    Ok(report)
}

pub fn load_clips(cfg: &RunConfig) -> Result<Vec<Clip>> {
    load_archive(&cfg.paths.archive).with_context(|| format!("loading archive {}", cfg.paths.archive.display()))
}

pub fn load_net(cfg: &RunConfig) -> Result<GaitNet<f32>> {
    let path = cfg.paths.checkpoint_file();
    let (net, _) = GaitNet::<f32>::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(net)
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub train_clips: usize,
    pub train_subjects: usize,
    pub first_total: f64,
    pub last_total: f64,
    pub checkpoint: PathBuf,
}

/// Trains on the protocol's training split, writing the checkpoint and a
/// per-iteration `train_log.csv` into `report_dir`.
pub fn cmd_train(cfg: &RunConfig, report_dir: &Path) -> Result<TrainSummary> {
    let protocol = cfg.resolve_protocol()?;
    let clips = load_clips(cfg)?;
    let split = protocol.split(&clips)?;
    let train_clips: Vec<Clip> = split.train.iter().map(|c| (*c).clone()).collect();
    if train_clips.is_empty() {
        bail!("protocol {} selects no training clips from the archive", protocol.name);
    }
    std::fs::create_dir_all(report_dir)?;
    let mut log = csv::Writer::from_path(report_dir.join("train_log.csv"))?;
    let mut rows: Vec<LossReport> = Vec::new();
    let mut log_err = None;
    let trainer = train(&train_clips, &cfg.train, &mut |r| {
        if log_err.is_none() {
            if let Err(e) = log.serialize(TrainLogRow::from(r)) {
                log_err = Some(e);
            }
        }
        if r.iteration % 50 == 0 {
            log::info!("iter {} total {:.4}", r.iteration, r.total);
        }
        rows.push(r.clone());
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    log.flush()?;
    let checkpoint = cfg.paths.checkpoint_file();
    std::fs::create_dir_all(&cfg.paths.checkpoints)?;
    trainer.net.save(&checkpoint, trainer.iteration)?;
    Ok(TrainSummary {
        iterations: trainer.iteration,
        train_clips: train_clips.len(),
        train_subjects: trainer.subjects.len(),
        first_total: rows.first().map_or(f64::NAN, |r| r.total),
        last_total: rows.last().map_or(f64::NAN, |r| r.total),
        checkpoint,
    })
}

/// Exports one signature per archived clip to `out`.
pub fn cmd_extract(cfg: &RunConfig, out: &Path) -> Result<usize> {
    let clips = load_clips(cfg)?;
    let net = load_net(cfg)?;
    let refs: Vec<&Clip> = clips.iter().collect();
    let sigs = LabeledSignature::extract(&refs, &net)?;
    let items: Vec<(SignatureRecord, _)> = sigs.into_iter().map(|s| (s.record, s.signature)).collect();
    export_signatures(out, &items)?;
    Ok(items.len())
}

/// Gallery and probe signatures of the protocol's test split.
pub fn test_signatures(
    protocol: &ProtocolSpec,
    clips: &[Clip],
    net: &GaitNet<f32>,
) -> Result<(Vec<LabeledSignature>, Vec<LabeledSignature>)> {
    let split = protocol.split(clips)?;
    Ok((
        LabeledSignature::extract(&split.gallery, net)?,
        LabeledSignature::extract(&split.probe, net)?,
    ))
}

pub fn alpha_for(cfg: &RunConfig, protocol: &ProtocolSpec, explicit: bool) -> f64 {
    match (explicit, protocol.alpha) {
        (false, Some(a)) => a,
        _ => cfg.alpha,
    }
}

fn write_score_csv(path: &Path, m: &ScoreMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["gallery_subject".to_string()];
    header.extend(m.probe_labels.iter().cloned());
    w.write_record(&header)?;
    for (gi, label) in m.gallery_labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..m.n_probe()).map(|pi| format!("{:.9}", m.get(gi, pi))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates the fused channel at `alpha`; writes `metrics.json` and, for
/// single-cell protocols, `scores.csv` (gallery rows, probe columns).
pub fn cmd_eval(cfg: &RunConfig, alpha: f64, report_dir: &Path) -> Result<EvalReport> {
    let protocol = cfg.resolve_protocol()?;
    let clips = load_clips(cfg)?;
    let net = load_net(cfg)?;
    let (g, p) = test_signatures(&protocol, &clips, &net)?;
    let report = evaluate(&protocol, &g, &p, Channel::Fused, alpha)?;
    write_json(&report_dir.join("metrics.json"), &report)?;
    if !protocol.cross_view {
        let m = ScoreMatrices::build(&g, &p)?.fused(alpha)?;
        write_score_csv(&report_dir.join("scores.csv"), &m)?;
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct SweepOutcome {
    pub alpha: Vec<AlphaRow>,
    pub duration: Vec<DurationRow>,
}

/// Alpha sweep (and a probe-duration sweep at `alpha` when `fractions` is
/// non-empty); writes `alpha_sweep.csv`, `duration_sweep.csv` and
/// `sweep.json`.
pub fn cmd_sweep(cfg: &RunConfig, alphas: &[f64], fractions: &[f64], alpha: f64, report_dir: &Path) -> Result<SweepOutcome> {
    let protocol = cfg.resolve_protocol()?;
    let clips = load_clips(cfg)?;
    let net = load_net(cfg)?;
    let (g, p) = test_signatures(&protocol, &clips, &net)?;
    let alpha_rows = alpha_sweep(&protocol, &g, &p, alphas)?;
    std::fs::create_dir_all(report_dir)?;
    let far_header: Vec<String> = protocol.far_points.iter().map(|f| format!("tar_at_far_{f}")).collect();

    let mut w = csv::Writer::from_path(report_dir.join("alpha_sweep.csv"))?;
    let mut header = vec!["alpha".to_string(), "rank1".to_string()];
    header.extend(far_header.iter().cloned());
    w.write_record(&header)?;
    for r in &alpha_rows {
        let mut row = vec![r.alpha.to_string(), opt(r.metrics.rank1)];
        row.extend(tar_cells(&r.metrics, &protocol));
        w.write_record(&row)?;
    }
    w.flush()?;

    let duration = if fractions.is_empty() {
        Vec::new()
    } else {
        let split = protocol.split(&clips)?;
        duration_sweep(&protocol, &net, &split.gallery, &split.probe, fractions, alpha)?
    };
    let mut w = csv::Writer::from_path(report_dir.join("duration_sweep.csv"))?;
    let mut header = ["fraction", "min_frames", "mean_frames", "rank1"].map(String::from).to_vec();
    header.extend(far_header);
    w.write_record(&header)?;
    for r in &duration {
        let mut row = vec![r.fraction.to_string(), r.min_frames.to_string(), r.mean_frames.to_string(), opt(r.metrics.rank1)];
        row.extend(tar_cells(&r.metrics, &protocol));
        w.write_record(&row)?;
    }
    w.flush()?;
    let out = SweepOutcome { alpha: alpha_rows, duration };
    write_json(&report_dir.join("sweep.json"), &out)?;
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn tar_cells(m: &MetricValues, protocol: &ProtocolSpec) -> Vec<String> {
    protocol
        .far_points
        .iter()
        .map(|f| m.tar_at_far.iter().find(|t| t.far == *f).map(|t| t.tar.to_string()).unwrap_or_default())
        .collect()
}

/// Decodes feature slices of two archived clips into PNG grids.
pub fn cmd_decode_viz(cfg: &RunConfig, clip_a: &str, clip_b: &str, max_frames: usize, out_dir: &Path) -> Result<DecodeViz> {
    let clips = load_clips(cfg)?;
    let net = load_net(cfg)?;
    let find = |id: &str| -> Result<&Clip> {
        clips.iter().find(|c| c.source_id == id).with_context(|| format!("clip {id:?} not in the archive"))
    };
    let viz = decode_viz(&net, find(clip_a)?, find(clip_b)?, max_frames, out_dir)?;
    write_json(&out_dir.join("decode_viz.json"), &viz)?;
    Ok(viz)
}
