use super::{ClipError, FrameTensor};
use crate::nets::{FRAME_C, FRAME_H, FRAME_LEN, FRAME_W};

/// Person box in continuous pixel coordinates (pixel `i` spans `[i, i+1)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub center_x: f64,
    pub center_y: f64,
    pub height: f64,
}

/// A raw RGB frame with its soft segmentation mask.
#[derive(Clone, Debug)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB bytes, `height × width × 3`.
    pub rgb: Vec<u8>,
    /// Row-major person probability, `height × width`.
    pub mask: Vec<f32>,
    pub bbox: BBox,
}

/// Tight box around mask pixels with probability ≥ 0.5, or `None` when no
/// pixel qualifies.
pub fn box_from_mask(width: usize, height: usize, mask: &[f32]) -> Option<BBox> {
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] >= 0.5 {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| BBox {
        center_x: (x0 + x1 + 1) as f64 / 2.0,
        center_y: (y0 + y1 + 1) as f64 / 2.0,
        height: (y1 + 1 - y0) as f64,
    })
}

/// Crops a 1:2 (width:height) window centered on the box, multiplies the
/// normalized RGB by the soft mask and resizes bilinearly (half-pixel
/// centers) to 64×32. Samples that fall outside the image read as zero.
pub fn preprocess_frame(raw: &RawFrame) -> Result<FrameTensor, ClipError> {
    let (w, h) = (raw.width, raw.height);
    if raw.rgb.len() != w * h * 3 || raw.mask.len() != w * h {
        return Err(ClipError::Ingestion(format!(
            "rgb/mask size mismatch for {w}x{h} frame (rgb {}, mask {})",
            raw.rgb.len(),
            raw.mask.len()
        )));
    }
    let b = raw.bbox;
    if !(b.height > 0.0) || !b.height.is_finite() || !b.center_x.is_finite() || !b.center_y.is_finite() {
        return Err(ClipError::InvalidBox(format!("height {} must be positive", b.height)));
    }
    if let Some(m) = raw.mask.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(ClipError::Ingestion(format!("mask value {m} outside [0, 1]")));
    }
    let crop_h = b.height;
    let crop_w = b.height / 2.0;
    let left = b.center_x - crop_w / 2.0;
    let top = b.center_y - crop_h / 2.0;
    if left >= w as f64 || top >= h as f64 || left + crop_w <= 0.0 || top + crop_h <= 0.0 {
        return Err(ClipError::InvalidBox("box lies entirely outside the image".into()));
    }

    let texel = |x: usize, y: usize, c: usize| -> f64 {
        let i = y * w + x;
        raw.rgb[i * 3 + c] as f64 / 255.0 * raw.mask[i] as f64
    };
    let mut out = vec![0.0f32; FRAME_LEN];
    for oy in 0..FRAME_H {
        let sy = top + (oy as f64 + 0.5) * crop_h / FRAME_H as f64;
        for ox in 0..FRAME_W {
            let sx = left + (ox as f64 + 0.5) * crop_w / FRAME_W as f64;
            if sx < 0.0 || sy < 0.0 || sx > w as f64 || sy > h as f64 {
                continue;
            }
            // Pixel-center coordinates, neighbours clamped at the border.
            let (u, v) = (sx - 0.5, sy - 0.5);
            let (fu, fv) = (u.floor(), v.floor());
            let (tu, tv) = (u - fu, v - fv);
            let clamp_x = |i: f64| (i.max(0.0) as usize).min(w - 1);
            let clamp_y = |i: f64| (i.max(0.0) as usize).min(h - 1);
            let (xa, xb) = (clamp_x(fu), clamp_x(fu + 1.0));
            let (ya, yb) = (clamp_y(fv), clamp_y(fv + 1.0));
            for c in 0..FRAME_C {
                let top_row = texel(xa, ya, c) * (1.0 - tu) + texel(xb, ya, c) * tu;
                let bot_row = texel(xa, yb, c) * (1.0 - tu) + texel(xb, yb, c) * tu;
                let val = top_row * (1.0 - tv) + bot_row * tv;
                out[(oy * FRAME_W + ox) * FRAME_C + c] = val.clamp(0.0, 1.0) as f32;
            }
        }
    }
    FrameTensor::new(out)
}
