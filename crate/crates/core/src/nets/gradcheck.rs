//! Central-difference checks of accumulated parameter gradients.

use rand::Rng;

use super::model::{GaitNet, Slot};

/// Gradients with both analytic and numeric magnitude below this are
/// compared on an absolute scale.
pub const ABS_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `name[index]` of the entry with the largest error.
    pub worst: String,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn add_along(net: &mut GaitNet<f64>, target: &str, idx: &[usize], dir: &[f64], scale: f64) {
    net.visit(&mut |name, s| {
        if name == target {
            if let Slot::Param(p) = s {
                for (&i, &d) in idx.iter().zip(dir) {
                    p.value[i] += scale * d;
                }
            }
        }
    });
}

fn restore(net: &mut GaitNet<f64>, target: &str, idx: &[usize], values: &[f64]) {
    net.visit(&mut |name, s| {
        if name == target {
            if let Slot::Param(p) = s {
                for (&i, &v) in idx.iter().zip(values) {
                    p.value[i] = v;
                }
            }
        }
    });
}

/// Width of the parameter slice perturbed by one directional check.
pub const SLICE: usize = 10;

/// Compares the gradient `objective` accumulates (when called with `true`)
/// against central differences of its value. For every parameter whose
/// name starts with one of `prefixes`, `per_param` slices of [`SLICE`]
/// random entries are drawn; along a random unit direction on each slice
/// the analytic directional derivative is checked against
/// `(L(θ + h·v) − L(θ − h·v)) / 2h`.
pub fn check_params<R: Rng + ?Sized>(
    net: &mut GaitNet<f64>,
    prefixes: &[&str],
    per_param: usize,
    step: f64,
    rng: &mut R,
    objective: &mut dyn FnMut(&mut GaitNet<f64>, bool) -> f64,
) -> GradCheck {
    net.zero_grad();
    objective(net, true);
    // (name, indices, original values, direction, analytic derivative)
    let mut slices: Vec<(String, Vec<usize>, Vec<f64>, Vec<f64>, f64)> = Vec::new();
    net.visit(&mut |name, s| {
        if let Slot::Param(p) = s {
            if prefixes.iter().any(|pre| name.starts_with(pre)) {
                for _ in 0..per_param {
                    let idx: Vec<usize> = (0..SLICE.min(p.len())).map(|_| rng.random_range(0..p.len())).collect();
                    let mut dir: Vec<f64> = idx.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    dir.iter_mut().for_each(|d| *d /= norm);
                    let analytic = idx.iter().zip(&dir).map(|(&i, d)| p.grad[i] * d).sum();
                    let values = idx.iter().map(|&i| p.value[i]).collect();
                    slices.push((name.to_string(), idx, values, dir, analytic));
                }
            }
        }
    });
    let mut out = GradCheck { checked: 0, max_rel_err: 0.0, worst: String::new() };
    for (name, idx, values, dir, analytic) in slices {
        add_along(net, &name, &idx, &dir, step);
        let up = objective(net, false);
        restore(net, &name, &idx, &values);
        add_along(net, &name, &idx, &dir, -step);
        let down = objective(net, false);
        restore(net, &name, &idx, &values);
        let numeric = (up - down) / (2.0 * step);
        let e = rel_err(analytic, numeric);
        out.checked += 1;
        if e > out.max_rel_err || out.worst.is_empty() {
            out.max_rel_err = out.max_rel_err.max(e);
            out.worst = format!("{name} slice {idx:?}: analytic {analytic:e} numeric {numeric:e}");
        }
    }
    out
}
