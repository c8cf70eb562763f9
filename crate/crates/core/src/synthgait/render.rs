//! 2.5-D articulated walker rasterized at 4× and box-downsampled.

use std::f64::consts::PI;

use super::FactorSpec;
use crate::nets::{FRAME_C, FRAME_H, FRAME_LEN, FRAME_W};

pub(crate) const SUPERSAMPLE: usize = 4;
const RH: usize = FRAME_H * SUPERSAMPLE;
const RW: usize = FRAME_W * SUPERSAMPLE;
/// Ground line, in output pixels from the top.
const GROUND: f64 = 62.0;
/// Shade factor for limbs on the far side of the body.
const FAR_SHADE: f64 = 0.7;
const TEXTURE_DIM: f64 = 0.55;
const TEXTURE_PERIOD: f64 = 3.0;
const SKIN: [f64; 3] = [0.85, 0.7, 0.55];

#[derive(Clone, Copy)]
enum Paint {
    Skin,
    Shirt { far: bool },
    Pants { far: bool },
}

/// A capsule (segment with radius) in output-pixel screen coordinates.
struct Capsule {
    a: (f64, f64),
    b: (f64, f64),
    r: f64,
    paint: Paint,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Gait phase of frame `t`, wrapped to `[0, 2π)`.
pub fn frame_phase(spec: &FactorSpec, t: usize) -> f64 {
    (spec.gait.phase_offset + 2.0 * PI * spec.gait.cadence * t as f64).rem_euclid(2.0 * PI)
}

/// Apparent scale at frame `t`: frontal walking approaches the camera and
/// grows over the clip, side views stay at unit scale.
fn scale(spec: &FactorSpec, t: usize) -> f64 {
    let growth = (0.3 * spec.speed * spec.view_deg.to_radians().cos().abs()).clamp(0.0, 0.5);
    if spec.n_frames <= 1 {
        return 1.0;
    }
    1.0 - growth + growth * t as f64 / (spec.n_frames - 1) as f64
}

fn figure(spec: &FactorSpec, t: usize, x_shift: f64) -> Vec<Capsule> {
    let id = &spec.identity;
    let amp = spec.gait.amplitude;
    let phi = frame_phase(spec, t);
    let s = scale(spec, t);
    let h = id.height_ratio * FRAME_H as f64;
    let head_r = 0.065 * h;
    let leg = 0.45 * h * id.limb_length_ratio / 1.2;
    let arm_seg = 0.375 * leg;
    let neck_y = h - 2.0 * head_r;
    let tw = id.torso_width;

    // Body-frame joints: x forward, y up, z toward the near side.
    let hip_y = leg;
    let leg_joints = |sign: f64| {
        let thigh = sign * amp * phi.sin();
        let knee_flex = 0.9 * amp * (1.0 - (phi + if sign > 0.0 { 0.0 } else { PI }).cos()) * 0.5 + 0.1 * amp;
        let knee = (0.5 * leg * thigh.sin(), hip_y - 0.5 * leg * thigh.cos());
        let shin = thigh - knee_flex;
        let foot = (knee.0 + 0.5 * leg * shin.sin(), knee.1 - 0.5 * leg * shin.cos());
        (knee, foot)
    };
    let (knee_l, foot_l) = leg_joints(1.0);
    let (knee_r, foot_r) = leg_joints(-1.0);
    // Lower the body so the lowest foot touches the ground.
    let lift = -foot_l.1.min(foot_r.1);
    let arm_joints = |sign: f64| {
        let swing = -sign * 0.8 * amp * phi.sin();
        let elbow = (arm_seg * swing.sin(), neck_y - arm_seg * swing.cos());
        let fore = swing + 0.3 * amp.max(0.05);
        let hand = (elbow.0 + arm_seg * fore.sin(), elbow.1 - arm_seg * fore.cos());
        (elbow, hand)
    };
    let (elbow_l, hand_l) = arm_joints(1.0);
    let (elbow_r, hand_r) = arm_joints(-1.0);

    let view = spec.view_deg.to_radians();
    let cx = FRAME_W as f64 / 2.0 + x_shift;
    let project = |p: (f64, f64), z: f64| -> (f64, f64) {
        let sx = p.0 * view.sin() + z * view.cos();
        (cx + s * sx, GROUND - s * (p.1 + lift))
    };
    let hip_z = 0.3 * tw;
    let sh_z = 0.75 * tw;
    let leg_r = 0.3 * tw * s;
    let arm_r = 0.22 * tw * s;
    let mut shapes = Vec::with_capacity(10);
    // Far side first (left, z < 0), then torso and head, then near side.
    for (far, z_sign) in [(true, -1.0), (false, 1.0)] {
        let (knee, foot, elbow, hand) = if far {
            (knee_l, foot_l, elbow_l, hand_l)
        } else {
            (knee_r, foot_r, elbow_r, hand_r)
        };
        let hip = project((0.0, hip_y), z_sign * hip_z);
        let k = project(knee, z_sign * hip_z);
        let f = project(foot, z_sign * hip_z);
        let sh = project((0.0, neck_y), z_sign * sh_z);
        let e = project(elbow, z_sign * sh_z);
        let hd = project(hand, z_sign * sh_z);
        let limbs = [
            Capsule { a: hip, b: k, r: leg_r, paint: Paint::Pants { far } },
            Capsule { a: k, b: f, r: leg_r, paint: Paint::Pants { far } },
            Capsule { a: sh, b: e, r: arm_r, paint: Paint::Shirt { far } },
            Capsule { a: e, b: hd, r: arm_r, paint: Paint::Shirt { far } },
        ];
        if far {
            shapes.extend(limbs);
            shapes.push(Capsule {
                a: project((0.0, hip_y), 0.0),
                b: project((0.0, neck_y), 0.0),
                r: 0.5 * tw * s,
                paint: Paint::Shirt { far: false },
            });
            let head = project((0.0, h - head_r), 0.0);
            shapes.push(Capsule { a: head, b: head, r: head_r * s, paint: Paint::Skin });
        } else {
            // Near arm over near leg.
            let [l0, l1, a0, a1] = limbs;
            shapes.extend([l0, l1, a0, a1]);
        }
    }
    shapes
}

fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    qx * qx + qy * qy
}

/// Renders frame `t`; returns the HWC frame (color premultiplied by
/// coverage) and the per-pixel coverage in `[0, 1]`.
pub fn render_frame(spec: &FactorSpec, t: usize, x_shift: f64) -> (Vec<f32>, Vec<f32>) {
    let ap = &spec.appearance;
    let shirt = hsv(ap.hue, 0.65, ap.brightness);
    let pants = hsv(ap.hue + 0.5, 0.5, 0.6 * ap.brightness + 0.2);
    let texture = |x: f64, y: f64| -> f64 {
        let (bx, by) = ((x / TEXTURE_PERIOD).floor() as i64, (y / TEXTURE_PERIOD).floor() as i64);
        let dark = match ap.texture_id {
            1 => by.rem_euclid(2) == 1,
            2 => (bx + by).rem_euclid(2) == 1,
            _ => false,
        };
        if dark {
            TEXTURE_DIM
        } else {
            1.0
        }
    };
    let shapes = figure(spec, t, x_shift);
    // Index of the topmost shape covering each subpixel.
    let mut top: Vec<Option<usize>> = vec![None; RH * RW];
    let ss = SUPERSAMPLE as f64;
    for (k, c) in shapes.iter().enumerate() {
        let x0 = ((c.a.0.min(c.b.0) - c.r) * ss).floor().max(0.0) as usize;
        let x1 = (((c.a.0.max(c.b.0) + c.r) * ss).ceil().max(0.0) as usize).min(RW);
        let y0 = ((c.a.1.min(c.b.1) - c.r) * ss).floor().max(0.0) as usize;
        let y1 = (((c.a.1.max(c.b.1) + c.r) * ss).ceil().max(0.0) as usize).min(RH);
        let r2 = c.r * c.r;
        for sy in y0..y1 {
            for sx in x0..x1 {
                let p = ((sx as f64 + 0.5) / ss, (sy as f64 + 0.5) / ss);
                if seg_dist2(p, c.a, c.b) <= r2 {
                    top[sy * RW + sx] = Some(k);
                }
            }
        }
    }
    let mut frame = vec![0.0f32; FRAME_LEN];
    let mut coverage = vec![0.0f32; FRAME_H * FRAME_W];
    let norm = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for oy in 0..FRAME_H {
        for ox in 0..FRAME_W {
            let mut acc = [0.0f64; 3];
            let mut cov = 0usize;
            for sy in oy * SUPERSAMPLE..(oy + 1) * SUPERSAMPLE {
                for sx in ox * SUPERSAMPLE..(ox + 1) * SUPERSAMPLE {
                    let Some(k) = top[sy * RW + sx] else { continue };
                    cov += 1;
                    let (px, py) = ((sx as f64 + 0.5) / ss, (sy as f64 + 0.5) / ss);
                    let rgb = match shapes[k].paint {
                        Paint::Skin => SKIN,
                        Paint::Shirt { far } => shade(shirt, texture(px, py), far),
                        Paint::Pants { far } => shade(pants, texture(px, py), far),
                    };
                    for c in 0..FRAME_C {
                        acc[c] += rgb[c];
                    }
                }
            }
            coverage[oy * FRAME_W + ox] = (cov as f64 * norm) as f32;
            for c in 0..FRAME_C {
                frame[(oy * FRAME_W + ox) * FRAME_C + c] = (acc[c] * norm).clamp(0.0, 1.0) as f32;
            }
        }
    }
    (frame, coverage)
}

fn shade(rgb: [f64; 3], texture: f64, far: bool) -> [f64; 3] {
    let f = texture * if far { FAR_SHADE } else { 1.0 };
    [rgb[0] * f, rgb[1] * f, rgb[2] * f]
}
