use std::path::Path;

use anyhow::{bail, Context, Result};
use gaitdis_core::clip_store::Clip;
use gaitdis_core::nets::{
    frames_to_tensor, tensor_item_to_frame, GaitNet, APPEARANCE, CANONICAL, FEATURE_DIM, FRAME_C, FRAME_H, FRAME_W,
    POSE,
};
use image::{Rgb, RgbImage};
use serde::Serialize;

/// Pixels between grid cells.
pub const SEPARATOR: u32 = 2;
const SEPARATOR_COLOR: Rgb<u8> = Rgb([255, 255, 255]);

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major grid of HWC frames, `SEPARATOR` pixels apart.
pub fn grid_image(cells: &[Vec<Vec<f32>>]) -> Result<RgbImage> {
    let rows = cells.len() as u32;
    let cols = cells.first().map_or(0, Vec::len) as u32;
    if rows == 0 || cols == 0 || cells.iter().any(|r| r.len() as u32 != cols) {
        bail!("grid must be non-empty and rectangular");
    }
    let (cw, ch) = (FRAME_W as u32, FRAME_H as u32);
    let mut img = RgbImage::from_pixel(
        cols * cw + (cols - 1) * SEPARATOR,
        rows * ch + (rows - 1) * SEPARATOR,
        SEPARATOR_COLOR,
    );
    for (r, row) in cells.iter().enumerate() {
        for (c, frame) in row.iter().enumerate() {
            let (x0, y0) = (c as u32 * (cw + SEPARATOR), r as u32 * (ch + SEPARATOR));
            for y in 0..ch {
                for x in 0..cw {
                    let i = ((y * cw + x) as usize) * FRAME_C;
                    img.put_pixel(x0 + x, y0 + y, Rgb([to_u8(frame[i]), to_u8(frame[i + 1]), to_u8(frame[i + 2])]));
                }
            }
        }
    }
    Ok(img)
}

pub fn save_grid(path: &Path, cells: &[Vec<Vec<f32>>]) -> Result<()> {
    grid_image(cells)?.save(path).with_context(|| format!("writing {}", path.display()))
}

fn decode_rows(net: &GaitNet<f32>, rows: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let flat: Vec<f32> = rows.concat();
    let out = net.decode(&flat)?;
    Ok((0..rows.len()).map(|i| tensor_item_to_frame(&out, i)).collect())
}

fn keep(row: &[f32], range: std::ops::Range<usize>) -> Vec<f32> {
    let mut out = vec![0.0; FEATURE_DIM];
    out[range.clone()].copy_from_slice(&row[range]);
    out
}

#[derive(Debug, Serialize)]
pub struct DecodeViz {
    pub frames_a: usize,
    pub frames_b: usize,
    /// Per-pixel MSE of the full-feature decode of clip a against its input.
    pub recon_mse: f64,
    pub files: Vec<String>,
}

/// Writes `features.png` (rows: input, full decode, appearance only,
/// canonical only, pose only; one column per frame of `a`), `cross.png`
/// (cell (i, j) decodes appearance and canonical features of frame i of
/// `a` with the pose feature of frame j of `b`) and `zero.png` (the decode
/// of an all-zero feature).
pub fn decode_viz(net: &GaitNet<f32>, a: &Clip, b: &Clip, max_frames: usize, out_dir: &Path) -> Result<DecodeViz> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let take = |c: &Clip| -> Vec<Vec<f32>> { c.frames.iter().take(max_frames.max(1)).map(|f| f.data().to_vec()).collect() };
    let (fa, fb) = (take(a), take(b));
    if fa.is_empty() || fb.is_empty() {
        bail!("decode-viz needs non-empty clips");
    }
    let encode = |frames: &[Vec<f32>]| -> Result<Vec<Vec<f32>>> {
        let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
        Ok(net.encode(&frames_to_tensor::<f32>(&refs))?.iter().map(|f| f.to_row()).collect())
    };
    let (za, zb) = (encode(&fa)?, encode(&fb)?);

    let full = decode_rows(net, &za)?;
    let recon_mse = full
        .iter()
        .zip(&fa)
        .flat_map(|(p, x)| p.iter().zip(x).map(|(u, v)| ((u - v) as f64).powi(2)))
        .sum::<f64>()
        / (fa.len() * fa[0].len()) as f64;
    let only = |range: std::ops::Range<usize>| -> Result<Vec<Vec<f32>>> {
        decode_rows(net, &za.iter().map(|r| keep(r, range.clone())).collect::<Vec<_>>())
    };
    let features = vec![fa.clone(), full, only(APPEARANCE)?, only(CANONICAL)?, only(POSE)?];
    save_grid(&out_dir.join("features.png"), &features)?;

    let mut cross = Vec::with_capacity(za.len());
    for ra in &za {
        let rows: Vec<Vec<f32>> = zb
            .iter()
            .map(|rb| {
                let mut z = ra.clone();
                z[POSE].copy_from_slice(&rb[POSE]);
                z
            })
            .collect();
        cross.push(decode_rows(net, &rows)?);
    }
    save_grid(&out_dir.join("cross.png"), &cross)?;

    let zero = decode_rows(net, &[vec![0.0; FEATURE_DIM]])?;
    save_grid(&out_dir.join("zero.png"), &[zero])?;

    Ok(DecodeViz {
        frames_a: fa.len(),
        frames_b: fb.len(),
        recon_mse,
        files: ["features.png", "cross.png", "zero.png"].map(String::from).to_vec(),
    })
}
