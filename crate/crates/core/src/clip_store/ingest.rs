use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use super::preprocess::{box_from_mask, preprocess_frame, BBox, RawFrame};
use super::{Clip, ClipError, FrameTensor};

/// Accepts a JSON string or number as a label.
fn label<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Label {
        S(String),
        N(serde_json::Number),
    }
    Ok(match Label::deserialize(d)? {
        Label::S(s) => s,
        Label::N(n) => n.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub frames_dir: PathBuf,
    pub masks_dir: PathBuf,
    #[serde(deserialize_with = "label")]
    pub subject: String,
    #[serde(deserialize_with = "label")]
    pub condition: String,
    pub view: f64,
    /// Optional video/session number for protocols that select on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<u32>,
    /// Optional JSON file of per-frame `[center_x, center_y, height]` boxes.
    /// Without it the box is the tight extent of the mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<PathBuf>,
}

/// A list of entries; relative paths resolve against `base_dir`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn from_file(path: &Path) -> Result<Self, ClipError> {
        let text = fs::read_to_string(path).map_err(|source| ClipError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| ClipError::Ingestion(format!("manifest {}: {e}", path.display())))?;
        Ok(Self {
            entries,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), ClipError> {
        let text = serde_json::to_string_pretty(&self.entries).expect("manifest serializes");
        fs::write(path, text).map_err(|source| ClipError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntryError {
    pub source_id: String,
    pub message: String,
}

/// Outcome of ingestion: failed entries are reported, not fatal.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub ingested: usize,
    pub errors: Vec<EntryError>,
    /// Frames whose mask had no pixel ≥ 0.5; kept as all-zero frames.
    pub empty_mask_frames: usize,
}

const IMAGE_EXTS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let rd = fs::read_dir(dir).map_err(|e| format!("cannot read {}: {e}", dir.display()))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ingest_entry(manifest: &Manifest, e: &ManifestEntry) -> Result<(Clip, usize), String> {
    let frames = image_files(&manifest.resolve(&e.frames_dir))?;
    if frames.is_empty() {
        return Err(format!("no frame images in {}", e.frames_dir.display()));
    }
    let masks: BTreeMap<String, PathBuf> = image_files(&manifest.resolve(&e.masks_dir))?
        .into_iter()
        .map(|p| (stem(&p), p))
        .collect();
    let boxes: Option<Vec<[f64; 3]>> = match &e.boxes {
        Some(p) => {
            let p = manifest.resolve(p);
            let text = fs::read_to_string(&p).map_err(|err| format!("cannot read {}: {err}", p.display()))?;
            let b: Vec<[f64; 3]> = serde_json::from_str(&text).map_err(|err| format!("boxes {}: {err}", p.display()))?;
            if b.len() != frames.len() {
                return Err(format!("{} boxes for {} frames", b.len(), frames.len()));
            }
            Some(b)
        }
        None => None,
    };
    let mut out = Vec::with_capacity(frames.len());
    let mut empty = 0;
    for (i, fp) in frames.iter().enumerate() {
        let mp = masks
            .get(&stem(fp))
            .ok_or_else(|| format!("no mask for frame {}", fp.display()))?;
        let rgb = image::open(fp).map_err(|err| format!("{}: {err}", fp.display()))?.to_rgb8();
        let mask = image::open(mp).map_err(|err| format!("{}: {err}", mp.display()))?.to_luma32f();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        if (mask.width() as usize, mask.height() as usize) != (w, h) {
            return Err(format!("mask {} does not match frame size {w}x{h}", mp.display()));
        }
        let mask = mask.into_raw();
        let bbox = match &boxes {
            Some(b) => Some(BBox {
                center_x: b[i][0],
                center_y: b[i][1],
                height: b[i][2],
            }),
            None => box_from_mask(w, h, &mask),
        };
        let frame = match bbox {
            Some(bbox) => preprocess_frame(&RawFrame {
                width: w,
                height: h,
                rgb: rgb.into_raw(),
                mask,
                bbox,
            })
            .map_err(|err| format!("{}: {err}", fp.display()))?,
            None => {
                empty += 1;
                FrameTensor::zeros()
            }
        };
        out.push(frame);
    }
    Ok((
        Clip {
            frames: out,
            subject_id: e.subject.clone(),
            condition_id: e.condition.clone(),
            view_deg: e.view,
            source_id: e.source_id.clone(),
            video_index: e.video,
        },
        empty,
    ))
}

/// Builds one clip per manifest entry, in manifest order. Entries run in
/// parallel; the result is identical to sequential processing.
pub fn ingest(manifest: &Manifest) -> Result<(Vec<Clip>, IngestReport), ClipError> {
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.source_id.as_str()) {
            return Err(ClipError::DuplicateSource(e.source_id.clone()));
        }
    }
    let results: Vec<Result<(Clip, usize), String>> =
        manifest.entries.par_iter().map(|e| ingest_entry(manifest, e)).collect();
    let mut clips = Vec::new();
    let mut report = IngestReport::default();
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok((clip, empty)) => {
                report.empty_mask_frames += empty;
                clips.push(clip);
            }
            Err(message) => report.errors.push(EntryError {
                source_id: e.source_id.clone(),
                message,
            }),
        }
    }
    report.ingested = clips.len();
    Ok((clips, report))
}

pub fn ingest_manifest_file(path: &Path) -> Result<(Vec<Clip>, IngestReport), ClipError> {
    ingest(&Manifest::from_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_gives_no_clips() {
        let (clips, report) = ingest(&Manifest::default()).unwrap();
        assert!(clips.is_empty());
        assert_eq!(report.ingested, 0);
    }

    #[test]
    fn numeric_labels_are_accepted() {
        let e: ManifestEntry = serde_json::from_str(
            r#"{"source_id":"a","frames_dir":"f","masks_dir":"m","subject":7,"condition":"nm","view":90}"#,
        )
        .unwrap();
        assert_eq!(e.subject, "7");
        assert_eq!(e.video, None);
    }

    #[test]
    fn duplicate_source_is_hard_error() {
        let e: ManifestEntry = serde_json::from_str(
            r#"{"source_id":"a","frames_dir":"f","masks_dir":"m","subject":"1","condition":"nm","view":0}"#,
        )
        .unwrap();
        let m = Manifest {
            entries: vec![e.clone(), e],
            base_dir: PathBuf::new(),
        };
        assert!(matches!(ingest(&m), Err(ClipError::DuplicateSource(_))));
    }

    #[test]
    fn missing_media_is_reported_per_entry() {
        let e: ManifestEntry = serde_json::from_str(
            r#"{"source_id":"a","frames_dir":"/nonexistent/f","masks_dir":"/nonexistent/m","subject":"1","condition":"nm","view":0}"#,
        )
        .unwrap();
        let (clips, report) = ingest(&Manifest {
            entries: vec![e],
            base_dir: PathBuf::new(),
        })
        .unwrap();
        assert!(clips.is_empty());
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].source_id, "a");
    }
}
