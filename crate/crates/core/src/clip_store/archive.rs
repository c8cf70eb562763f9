use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Clip, ClipError, FrameTensor};
use crate::container::Container;
use crate::nets::{FRAME_C, FRAME_H, FRAME_LEN, FRAME_W};

pub const CLIP_KIND: &str = "gaitdis-clip";

/// One row of `index.json`, in archive order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveIndexEntry {
    pub source_id: String,
    pub file: String,
    pub subject: String,
    pub condition: String,
    pub view: f64,
    #[serde(default)]
    pub video: Option<u32>,
    pub n_frames: usize,
}

fn file_name(source_id: &str) -> String {
    let safe: String = source_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.clip")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ClipError + '_ {
    move |source| ClipError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `<source_id>.clip` per clip plus `index.json` into `dir`.
pub fn persist_archive(clips: &[Clip], dir: &Path) -> Result<(), ClipError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut names = HashSet::new();
    let mut index = Vec::with_capacity(clips.len());
    for clip in clips {
        let file = file_name(&clip.source_id);
        if !names.insert(file.clone()) {
            return Err(ClipError::Archive(format!(
                "source_id {:?} collides with another clip's file name {file}",
                clip.source_id
            )));
        }
        let mut c = Container::new(
            CLIP_KIND,
            serde_json::json!({
                "source_id": clip.source_id,
                "subject": clip.subject_id,
                "condition": clip.condition_id,
                "view": clip.view_deg,
                "video": clip.video_index,
            }),
        );
        let data: Vec<f32> = clip.frames.iter().flat_map(|f| f.data().iter().copied()).collect();
        c.push("frames", vec![clip.frames.len(), FRAME_H, FRAME_W, FRAME_C], data);
        c.write_file(&dir.join(&file))?;
        index.push(ArchiveIndexEntry {
            source_id: clip.source_id.clone(),
            file,
            subject: clip.subject_id.clone(),
            condition: clip.condition_id.clone(),
            view: clip.view_deg,
            video: clip.video_index,
            n_frames: clip.frames.len(),
        });
    }
    let index_path = dir.join("index.json");
    fs::write(&index_path, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(io_err(&index_path))
}

fn clip_from_container(c: &Container) -> Result<Clip, ClipError> {
    c.expect_kind(CLIP_KIND)?;
    let m = &c.meta;
    let text = |k: &str| {
        m[k].as_str()
            .map(str::to_string)
            .ok_or_else(|| ClipError::Archive(format!("clip header missing {k}")))
    };
    let frames = c.get("frames")?;
    if frames.shape.len() != 4 || frames.shape[1..] != [FRAME_H, FRAME_W, FRAME_C] || frames.shape[0] == 0 {
        return Err(ClipError::Archive(format!("bad frame array shape {:?}", frames.shape)));
    }
    let frames = frames
        .data
        .chunks(FRAME_LEN)
        .map(|f| FrameTensor::new(f.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Clip {
        frames,
        subject_id: text("subject")?,
        condition_id: text("condition")?,
        view_deg: m["view"]
            .as_f64()
            .ok_or_else(|| ClipError::Archive("clip header missing view".into()))?,
        source_id: text("source_id")?,
        video_index: m["video"].as_u64().map(|v| v as u32),
    })
}

/// Loads every clip listed in `index.json`, in index order. Any corrupt
/// file fails the whole load.
pub fn load_archive(dir: &Path) -> Result<Vec<Clip>, ClipError> {
    let index_path = dir.join("index.json");
    let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    let index: Vec<ArchiveIndexEntry> =
        serde_json::from_str(&text).map_err(|e| ClipError::Archive(format!("index.json: {e}")))?;
    index
        .iter()
        .map(|e| {
            let clip = clip_from_container(&Container::read_file(&dir.join(&e.file))?)?;
            if clip.source_id != e.source_id || clip.frames.len() != e.n_frames {
                return Err(ClipError::Archive(format!("{} does not match index.json", e.file)));
            }
            Ok(clip)
        })
        .collect()
}
