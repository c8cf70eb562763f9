//! Synthetic walking figures with known identity, appearance and gait
//! factors.
//!
//! Identity (body proportions) is fixed per subject, cadence and amplitude
//! are fixed per subject, appearance (colors, texture) is redrawn per
//! condition and the gait phase offset is redrawn per clip.

mod render;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use render::frame_phase;

use crate::clip_store::{persist_archive, Clip, ClipError, FrameTensor, Manifest, ManifestEntry};
use crate::nets::{FRAME_H, FRAME_W};

/// Minimum frames per generated clip (the training crop length).
pub const MIN_FRAMES: usize = 20;
/// Identity cells per factor axis.
pub const GRID_LEVELS: usize = 5;
/// Maximum per-axis jitter inside an identity cell, in normalized units.
pub const CELL_JITTER: f64 = 0.025;
/// Declared minimum normalized identity distance between subjects.
pub const MIN_IDENTITY_SEPARATION: f64 = 0.15;

pub const LIMB_RATIO_RANGE: (f64, f64) = (0.9, 1.5);
pub const TORSO_WIDTH_RANGE: (f64, f64) = (3.0, 7.0);
pub const HEIGHT_RATIO_RANGE: (f64, f64) = (0.60, 0.92);
pub const CADENCE_RANGE: (f64, f64) = (1.0 / 16.0, 1.0 / 10.0);
pub const AMPLITUDE_RANGE: (f64, f64) = (0.35, 0.6);
pub const BRIGHTNESS_RANGE: (f64, f64) = (0.55, 1.0);
pub const N_TEXTURES: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid factor spec: {0}")]
    InvalidSpec(String),
    #[error("requested {requested} subjects but the identity grid separates at most {capacity}")]
    Capacity { requested: usize, capacity: usize },
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityFactors {
    /// Leg length relative to a nominal figure.
    pub limb_length_ratio: f64,
    /// Torso width in output pixels.
    pub torso_width: f64,
    /// Figure height as a fraction of frame height.
    pub height_ratio: f64,
}

impl IdentityFactors {
    /// Position in the unit cube spanned by the factor ranges.
    pub fn normalized(&self) -> [f64; 3] {
        let n = |v: f64, (lo, hi): (f64, f64)| (v - lo) / (hi - lo);
        [
            n(self.limb_length_ratio, LIMB_RATIO_RANGE),
            n(self.torso_width, TORSO_WIDTH_RANGE),
            n(self.height_ratio, HEIGHT_RATIO_RANGE),
        ]
    }

    fn from_normalized(u: [f64; 3]) -> Self {
        let d = |t: f64, (lo, hi): (f64, f64)| lo + t * (hi - lo);
        Self {
            limb_length_ratio: d(u[0], LIMB_RATIO_RANGE),
            torso_width: d(u[1], TORSO_WIDTH_RANGE),
            height_ratio: d(u[2], HEIGHT_RATIO_RANGE),
        }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        let (a, b) = (self.normalized(), other.normalized());
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceFactors {
    /// Clothing hue in `[0, 1)`.
    pub hue: f64,
    /// 0 solid, 1 stripes, 2 checker.
    pub texture_id: u8,
    pub brightness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitFactors {
    pub phase_offset: f64,
    /// Gait cycles per frame.
    pub cadence: f64,
    /// Hip swing amplitude in radians.
    pub amplitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub identity: IdentityFactors,
    pub appearance: AppearanceFactors,
    pub gait: GaitFactors,
    /// 90 is a side view, 0 is walking toward the camera.
    pub view_deg: f64,
    /// Approach speed; scales apparent growth in frontal views.
    pub speed: f64,
    pub n_frames: usize,
}

impl FactorSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let mut bad = Vec::new();
        let id = &self.identity;
        if !(id.limb_length_ratio > 0.0) {
            bad.push("limb_length_ratio must be > 0");
        }
        if !(id.torso_width > 0.0) {
            bad.push("torso_width must be > 0");
        }
        if !(id.height_ratio > 0.0 && id.height_ratio <= 1.0) {
            bad.push("height_ratio must be in (0, 1]");
        }
        if !(self.gait.cadence > 0.0) {
            bad.push("cadence must be > 0");
        }
        if !(self.gait.amplitude >= 0.0) {
            bad.push("amplitude must be >= 0");
        }
        if !self.gait.phase_offset.is_finite() || !self.view_deg.is_finite() || !(self.speed >= 0.0) {
            bad.push("phase_offset, view_deg and speed must be finite (speed >= 0)");
        }
        if !(0.0..=1.0).contains(&self.appearance.brightness) || self.appearance.texture_id >= N_TEXTURES {
            bad.push("brightness must be in [0, 1] and texture_id < 3");
        }
        if self.n_frames < MIN_FRAMES {
            bad.push("n_frames must be >= 20");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(bad.join("; ")))
        }
    }
}

/// A rendered clip together with its generating factors.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub clip: Clip,
    pub factors: FactorSpec,
    /// Gait phase of every frame, in `[0, 2π)`.
    pub per_frame_phase: Vec<f64>,
    /// Per-frame person coverage (64×32), the soft mask of the figure.
    pub coverage: Vec<Vec<f32>>,
}

/// Renders a clip. The seed sets a small horizontal placement offset; all
/// other variation comes from `spec`.
pub fn generate(spec: &FactorSpec, seed: u64) -> Result<LabeledClip, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_shift = rng.random_range(-1.0..=1.0);
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut coverage = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let (f, c) = render::render_frame(spec, t, x_shift);
        frames.push(FrameTensor::new(f)?);
        coverage.push(c);
    }
    Ok(LabeledClip {
        clip: Clip {
            frames,
            subject_id: String::new(),
            condition_id: String::new(),
            view_deg: spec.view_deg,
            source_id: String::new(),
            video_index: None,
        },
        factors: *spec,
        per_frame_phase: (0..spec.n_frames).map(|t| frame_phase(spec, t)).collect(),
        coverage,
    })
}

/// Knobs of [`make_dataset`] beyond the counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub n_frames: usize,
    /// Views cycled over the clips of each condition.
    pub views: Vec<f64>,
    pub speed: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            n_frames: 40,
            views: vec![90.0],
            speed: 1.0,
        }
    }
}

pub fn subject_label(s: usize) -> String {
    format!("{:03}", s + 1)
}

pub fn condition_label(c: usize) -> String {
    format!("c{c}")
}

/// Identity cells ordered by greedy farthest-point traversal from a seeded
/// start, so any prefix of subjects is spread over the grid.
fn identity_cells(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<[usize; 3]>, SynthError> {
    let capacity = GRID_LEVELS.pow(3);
    if n > capacity {
        return Err(SynthError::Capacity { requested: n, capacity });
    }
    let mut cells: Vec<[usize; 3]> = (0..capacity)
        .map(|i| [i / (GRID_LEVELS * GRID_LEVELS), (i / GRID_LEVELS) % GRID_LEVELS, i % GRID_LEVELS])
        .collect();
    cells.shuffle(rng);
    let d2 = |a: &[usize; 3], b: &[usize; 3]| -> usize { a.iter().zip(b).map(|(x, y)| x.abs_diff(*y).pow(2)).sum() };
    let mut chosen = vec![cells.swap_remove(0)];
    let mut nearest: Vec<usize> = cells.iter().map(|c| d2(c, &chosen[0])).collect();
    while chosen.len() < n {
        // First maximum in shuffled order breaks ties reproducibly.
        let (best, _) = nearest
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let c = cells.swap_remove(best);
        nearest.swap_remove(best);
        for (k, other) in cells.iter().enumerate() {
            nearest[k] = nearest[k].min(d2(other, &c));
        }
        chosen.push(c);
    }
    Ok(chosen)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

/// Per-subject ground truth written to `factors.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectFactors {
    pub subject: String,
    pub identity: IdentityFactors,
    pub cadence: f64,
    pub amplitude: f64,
    pub conditions: Vec<(String, AppearanceFactors)>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub clips: Vec<LabeledClip>,
    pub subjects: Vec<SubjectFactors>,
    pub manifest: Manifest,
}

/// Generates `n_subjects × conditions × clips_per_condition` clips. Clip
/// `k` (in subject, condition, clip order) is rendered with seed `seed ^ k`.
pub fn make_dataset(
    n_subjects: usize,
    conditions_per_subject: usize,
    clips_per_condition: usize,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<SynthDataset, SynthError> {
    if n_subjects == 0 || conditions_per_subject == 0 || clips_per_condition == 0 {
        return Err(SynthError::InvalidSpec("all counts must be >= 1".into()));
    }
    if opts.views.is_empty() {
        return Err(SynthError::InvalidSpec("at least one view is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = identity_cells(n_subjects, &mut rng)?;
    let mut subjects = Vec::with_capacity(n_subjects);
    let mut specs = Vec::new();
    for (s, cell) in cells.iter().enumerate() {
        let u = [0, 1, 2].map(|a| {
            (cell[a] as f64 + 0.5) / GRID_LEVELS as f64 + rng.random_range(-CELL_JITTER..=CELL_JITTER)
        });
        let identity = IdentityFactors::from_normalized(u);
        let cadence = uniform(&mut rng, CADENCE_RANGE);
        let amplitude = uniform(&mut rng, AMPLITUDE_RANGE);
        let mut conditions = Vec::new();
        for c in 0..conditions_per_subject {
            let appearance = AppearanceFactors {
                hue: rng.random_range(0.0..1.0),
                texture_id: rng.random_range(0..N_TEXTURES),
                brightness: uniform(&mut rng, BRIGHTNESS_RANGE),
            };
            conditions.push((condition_label(c), appearance));
            for k in 0..clips_per_condition {
                let index = specs.len() as u64;
                let mut clip_rng = ChaCha8Rng::seed_from_u64(seed ^ index);
                let spec = FactorSpec {
                    identity,
                    appearance,
                    gait: GaitFactors {
                        phase_offset: clip_rng.random_range(0.0..std::f64::consts::TAU),
                        cadence,
                        amplitude,
                    },
                    view_deg: opts.views[k % opts.views.len()],
                    speed: opts.speed,
                    n_frames: opts.n_frames,
                };
                specs.push((s, c, k, spec, seed ^ index));
            }
        }
        subjects.push(SubjectFactors {
            subject: subject_label(s),
            identity,
            cadence,
            amplitude,
            conditions,
        });
    }
    let clips: Vec<LabeledClip> = specs
        .par_iter()
        .map(|&(s, c, k, spec, clip_seed)| {
            let mut lc = generate(&spec, clip_seed)?;
            lc.clip.subject_id = subject_label(s);
            lc.clip.condition_id = condition_label(c);
            lc.clip.source_id = format!("{}-{}-{:02}", subject_label(s), condition_label(c), k);
            lc.clip.video_index = Some((c * clips_per_condition + k + 1) as u32);
            Ok(lc)
        })
        .collect::<Result<_, SynthError>>()?;
    let manifest = Manifest {
        entries: clips
            .iter()
            .map(|lc| {
                let id = &lc.clip.source_id;
                ManifestEntry {
                    source_id: id.clone(),
                    frames_dir: PathBuf::from(format!("media/{id}/frames")),
                    masks_dir: PathBuf::from(format!("media/{id}/masks")),
                    subject: lc.clip.subject_id.clone(),
                    condition: lc.clip.condition_id.clone(),
                    view: lc.clip.view_deg,
                    video: lc.clip.video_index,
                    boxes: Some(PathBuf::from(format!("media/{id}/boxes.json"))),
                }
            })
            .collect(),
        base_dir: PathBuf::new(),
    };
    Ok(SynthDataset {
        clips,
        subjects,
        manifest,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `archive/`, `factors.json`, and, when `with_media` is set, PNG
/// frames + masks under `media/` with `manifest.json` referencing them.
pub fn write_dataset(ds: &SynthDataset, out_dir: &Path, with_media: bool) -> Result<(), SynthError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let clips: Vec<Clip> = ds.clips.iter().map(|c| c.clip.clone()).collect();
    persist_archive(&clips, &out_dir.join("archive"))?;
    let factors_path = out_dir.join("factors.json");
    let per_clip: Vec<serde_json::Value> = ds
        .clips
        .iter()
        .map(|c| {
            serde_json::json!({
                "source_id": c.clip.source_id,
                "subject": c.clip.subject_id,
                "condition": c.clip.condition_id,
                "factors": c.factors,
                "per_frame_phase": c.per_frame_phase,
            })
        })
        .collect();
    let factors = serde_json::json!({ "subjects": ds.subjects, "clips": per_clip });
    fs::write(&factors_path, serde_json::to_string_pretty(&factors).expect("serializes"))
        .map_err(io_err(&factors_path))?;
    if with_media {
        ds.clips.par_iter().try_for_each(|lc| write_media(lc, out_dir))?;
        ds.manifest.write_file(&out_dir.join("manifest.json"))?;
    }
    Ok(())
}

/// Media whose ingestion reproduces the frames up to 8-bit quantization:
/// unpremultiplied colors, coverage as the mask and a box spanning the frame.
fn write_media(lc: &LabeledClip, out_dir: &Path) -> Result<(), SynthError> {
    let base = out_dir.join("media").join(&lc.clip.source_id);
    let (fdir, mdir) = (base.join("frames"), base.join("masks"));
    fs::create_dir_all(&fdir).map_err(io_err(&fdir))?;
    fs::create_dir_all(&mdir).map_err(io_err(&mdir))?;
    let mut boxes = Vec::new();
    for (t, (frame, cov)) in lc.clip.frames.iter().zip(&lc.coverage).enumerate() {
        let mut rgb = image::RgbImage::new(FRAME_W as u32, FRAME_H as u32);
        let mut mask = image::GrayImage::new(FRAME_W as u32, FRAME_H as u32);
        for y in 0..FRAME_H {
            for x in 0..FRAME_W {
                let c = cov[y * FRAME_W + x];
                let px: [u8; 3] = std::array::from_fn(|k| {
                    let v = if c > 0.0 { frame.get(y, x, k) / c } else { 0.0 };
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8
                });
                rgb.put_pixel(x as u32, y as u32, image::Rgb(px));
                mask.put_pixel(x as u32, y as u32, image::Luma([(c * 255.0).round() as u8]));
            }
        }
        let name = format!("{t:05}.png");
        let fp = fdir.join(&name);
        rgb.save(&fp)
            .map_err(|e| SynthError::Io { path: fp.display().to_string(), source: std::io::Error::other(e) })?;
        let mp = mdir.join(&name);
        mask.save(&mp)
            .map_err(|e| SynthError::Io { path: mp.display().to_string(), source: std::io::Error::other(e) })?;
        boxes.push([FRAME_W as f64 / 2.0, FRAME_H as f64 / 2.0, FRAME_H as f64]);
    }
    let bp = base.join("boxes.json");
    fs::write(&bp, serde_json::to_string(&boxes).expect("serializes")).map_err(io_err(&bp))?;
    Ok(())
}
