//! Weight initializers. All draw from a caller-supplied RNG so a model is a
//! pure function of its seed.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::layers::LEAKY_SLOPE;
use super::real::Real;

/// He-style gain for a leaky ReLU with the model's negative slope.
pub fn leaky_gain() -> f64 {
    (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt()
}

pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::lit(dist.sample(rng))).collect()
}

pub fn xavier_uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Vec<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("valid range");
    (0..fan_in * fan_out).map(|_| T::lit(dist.sample(rng))).collect()
}

/// A `rows × cols` matrix (row-major) with orthonormal rows or columns,
/// from the QR factorization of a Gaussian matrix.
pub fn orthogonal<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Vec<T> {
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let g: Vec<f64> = normal(rng, r * c, 1.0);
    let m = DMatrix::from_row_slice(r, c, &g);
    let qr = m.qr();
    let mut q = qr.q();
    // Sign-fix so the result is uniformly distributed over orthogonal matrices.
    let rd = qr.r();
    for j in 0..c {
        if rd[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if tall { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(T::lit(q[(i, j)]));
        }
    }
    out
}
