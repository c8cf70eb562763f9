//! Stacked LSTM with manual backpropagation through time.
//!
//! Sequences are batched time-major: step `t` holds a `batch × width`
//! row-major block. Every sequence starts from a zero state.

use rand::Rng;

use super::init::{orthogonal, xavier_uniform};
use super::real::{gemm, sigmoid, Real};
use super::tensor::Param;

/// One recurrent layer. Gate blocks are ordered input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmLayer<T> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub bias: Param<T>,
    pub input: usize,
    pub hidden: usize,
}

impl<T: Real> LstmLayer<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let w_ih = xavier_uniform(rng, input, 4 * hidden);
        let mut w_hh = Vec::with_capacity(4 * hidden * hidden);
        for _ in 0..4 {
            w_hh.extend(orthogonal::<T, R>(rng, hidden, hidden));
        }
        let mut bias = vec![T::zero(); 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = T::one());
        Self {
            w_ih: Param::new(vec![4 * hidden, input], w_ih),
            w_hh: Param::new(vec![4 * hidden, hidden], w_hh),
            bias: Param::new(vec![4 * hidden], bias),
            input,
            hidden,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct LayerCache<T> {
    xs: Vec<Vec<T>>,
    /// Activated gates per step, `batch × 4H`.
    gates: Vec<Vec<T>>,
    cs: Vec<Vec<T>>,
    hs: Vec<Vec<T>>,
}

/// Activations saved by [`Lstm::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

#[derive(Clone, Debug)]
pub struct Lstm<T> {
    pub layers: Vec<LstmLayer<T>>,
}

impl<T: Real> Lstm<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, n_layers: usize) -> Self {
        let layers = (0..n_layers)
            .map(|l| LstmLayer::init(rng, if l == 0 { input } else { hidden }, hidden))
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    /// Runs the stack over `xs` (one `batch × input` block per step) and
    /// returns the top layer's hidden state at every step.
    pub fn forward(&self, xs: &[Vec<T>], batch: usize) -> (Vec<Vec<T>>, LstmCache<T>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut seq: Vec<Vec<T>> = xs.to_vec();
        for layer in &self.layers {
            let hsz = layer.hidden;
            let mut cache = LayerCache {
                xs: seq,
                ..Default::default()
            };
            let mut h = vec![T::zero(); batch * hsz];
            let mut c = vec![T::zero(); batch * hsz];
            for x in &cache.xs {
                assert_eq!(x.len(), batch * layer.input, "lstm step width");
                let mut z = vec![T::zero(); batch * 4 * hsz];
                for row in z.chunks_mut(4 * hsz) {
                    row.copy_from_slice(&layer.bias.value);
                }
                gemm(batch, layer.input, 4 * hsz, T::one(), x, false, &layer.w_ih.value, true, T::one(), &mut z);
                gemm(batch, hsz, 4 * hsz, T::one(), &h, false, &layer.w_hh.value, true, T::one(), &mut z);
                for b in 0..batch {
                    let zr = &mut z[b * 4 * hsz..(b + 1) * 4 * hsz];
                    for j in 0..hsz {
                        let i = sigmoid(zr[j]);
                        let f = sigmoid(zr[hsz + j]);
                        let g = zr[2 * hsz + j].tanh();
                        let o = sigmoid(zr[3 * hsz + j]);
                        zr[j] = i;
                        zr[hsz + j] = f;
                        zr[2 * hsz + j] = g;
                        zr[3 * hsz + j] = o;
                        let k = b * hsz + j;
                        c[k] = f * c[k] + i * g;
                        h[k] = o * c[k].tanh();
                    }
                }
                cache.gates.push(z);
                cache.cs.push(c.clone());
                cache.hs.push(h.clone());
            }
            seq = cache.hs.clone();
            caches.push(cache);
        }
        (seq, LstmCache { batch, layers: caches })
    }

    /// Backpropagates `dh_top` (gradient w.r.t. every top-layer output) and
    /// returns the gradient w.r.t. every input step.
    pub fn backward(&mut self, cache: &LstmCache<T>, dh_top: &[Vec<T>]) -> Vec<Vec<T>> {
        let batch = cache.batch;
        let mut dh_ext: Vec<Vec<T>> = dh_top.to_vec();
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let hsz = layer.hidden;
            let steps = lc.xs.len();
            assert_eq!(dh_ext.len(), steps, "lstm gradient length");
            let zeros = vec![T::zero(); batch * hsz];
            let mut dh_next = vec![T::zero(); batch * hsz];
            let mut dc_next = vec![T::zero(); batch * hsz];
            let mut dxs = vec![Vec::new(); steps];
            let mut dz = vec![T::zero(); batch * 4 * hsz];
            for t in (0..steps).rev() {
                let gates = &lc.gates[t];
                let c_prev = if t > 0 { &lc.cs[t - 1] } else { &zeros };
                let h_prev = if t > 0 { &lc.hs[t - 1] } else { &zeros };
                for b in 0..batch {
                    let g4 = &gates[b * 4 * hsz..(b + 1) * 4 * hsz];
                    let dzr = &mut dz[b * 4 * hsz..(b + 1) * 4 * hsz];
                    for j in 0..hsz {
                        let k = b * hsz + j;
                        let (i, f, g, o) = (g4[j], g4[hsz + j], g4[2 * hsz + j], g4[3 * hsz + j]);
                        let tc = lc.cs[t][k].tanh();
                        let dh = dh_ext[t][k] + dh_next[k];
                        let dc = dh * o * (T::one() - tc * tc) + dc_next[k];
                        dzr[j] = dc * g * i * (T::one() - i);
                        dzr[hsz + j] = dc * c_prev[k] * f * (T::one() - f);
                        dzr[2 * hsz + j] = dc * i * (T::one() - g * g);
                        dzr[3 * hsz + j] = dh * tc * o * (T::one() - o);
                        dc_next[k] = dc * f;
                    }
                }
                gemm(4 * hsz, batch, layer.input, T::one(), &dz, true, &lc.xs[t], false, T::one(), &mut layer.w_ih.grad);
                gemm(4 * hsz, batch, hsz, T::one(), &dz, true, h_prev, false, T::one(), &mut layer.w_hh.grad);
                for row in dz.chunks(4 * hsz) {
                    layer.bias.grad.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
                }
                let mut dx = vec![T::zero(); batch * layer.input];
                gemm(batch, 4 * hsz, layer.input, T::one(), &dz, false, &layer.w_ih.value, false, T::zero(), &mut dx);
                dxs[t] = dx;
                gemm(batch, 4 * hsz, hsz, T::one(), &dz, false, &layer.w_hh.value, false, T::zero(), &mut dh_next);
            }
            dh_ext = dxs;
        }
        dh_ext
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(rng: &mut ChaCha8Rng, steps: usize, width: usize) -> Vec<Vec<f64>> {
        (0..steps)
            .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = LstmLayer::<f64>::init(&mut rng, 3, 4);
        assert_eq!(&l.bias.value[4..8], &[1.0; 4]);
        assert!(l.bias.value[..4].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn batched_equals_per_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lstm = Lstm::<f64>::init(&mut rng, 3, 5, 2);
        let a = seq(&mut rng, 4, 3);
        let b = seq(&mut rng, 4, 3);
        let joint: Vec<Vec<f64>> = a.iter().zip(&b).map(|(x, y)| [x.clone(), y.clone()].concat()).collect();
        let (hj, _) = lstm.forward(&joint, 2);
        let (ha, _) = lstm.forward(&a, 1);
        let (hb, _) = lstm.forward(&b, 1);
        for t in 0..4 {
            for j in 0..5 {
                assert!((hj[t][j] - ha[t][j]).abs() < 1e-14);
                assert!((hj[t][5 + j] - hb[t][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lstm = Lstm::<f64>::init(&mut rng, 3, 4, 3);
        let xs = seq(&mut rng, 3, 3);
        let w = seq(&mut rng, 3, 4);
        let loss = |l: &Lstm<f64>, xs: &[Vec<f64>]| -> f64 {
            let (h, _) = l.forward(xs, 1);
            h.iter().zip(&w).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y)).sum()
        };
        let (_, cache) = lstm.forward(&xs, 1);
        let dx = lstm.backward(&cache, &w);
        let eps = 1e-6;
        for t in 0..3 {
            for j in 0..3 {
                let mut p = xs.clone();
                p[t][j] += eps;
                let mut m = xs.clone();
                m[t][j] -= eps;
                let num = (loss(&lstm, &p) - loss(&lstm, &m)) / (2.0 * eps);
                assert!((num - dx[t][j]).abs() < 1e-8, "t={t} j={j}: {num} vs {}", dx[t][j]);
            }
        }
    }
}
