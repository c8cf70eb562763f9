//! Layer primitives with hand-written backward passes.
//!
//! Convolutions lower to GEMM through an im2col buffer, one batch item at a
//! time. Every backward pass accumulates into `Param::grad`; callers zero
//! gradients between steps.

use super::real::{gemm, Real};
use super::tensor::{Param, Tensor};

/// Negative-side slope of every leaky ReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Geometry of a square-kernel 2-D convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        }
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.col_cols();
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], x: &mut [T]) {
    let plane = g.col_cols();
    for ci in 0..g.cin {
        let dst = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v += b);
    }
}

fn accumulate_channel_bias_grad<T: Real>(grad: &mut [T], dy: &[T], plane: usize) {
    for (c, g) in grad.iter_mut().enumerate() {
        *g += dy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
}

/// 2-D convolution, weight layout `[cout, cin, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, weight: Vec<T>, bias: bool) -> Self {
        Self {
            weight: Param::new(vec![cout, cin, k, k], weight),
            bias: bias.then(|| Param::filled(vec![cout], T::zero())),
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom::new(self.cin, h, w, self.k, self.stride, self.pad)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let g = self.geom(h, w);
        (g.ho, g.wo)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c(), self.cin, "conv input channels");
        let g = self.geom(x.h(), x.w());
        let mut out = Tensor::zeros([x.n(), self.cout, g.ho, g.wo]);
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        for i in 0..x.n() {
            im2col(&g, x.item(i), &mut cols);
            let o = out.item_mut(i);
            gemm(
                self.cout,
                g.col_rows(),
                g.col_cols(),
                T::one(),
                &self.weight.value,
                false,
                &cols,
                false,
                T::zero(),
                o,
            );
            if let Some(b) = &self.bias {
                add_channel_bias(o, &b.value, g.col_cols());
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `want_dx` is set.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, want_dx: bool) -> Option<Tensor<T>> {
        let g = self.geom(x.h(), x.w());
        assert_eq!(dy.shape(), [x.n(), self.cout, g.ho, g.wo], "conv dy shape");
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        let mut dcols = vec![T::zero(); g.col_rows() * g.col_cols()];
        let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
        for i in 0..x.n() {
            let dyi = dy.item(i);
            im2col(&g, x.item(i), &mut cols);
            gemm(
                self.cout,
                g.col_cols(),
                g.col_rows(),
                T::one(),
                dyi,
                false,
                &cols,
                true,
                T::one(),
                &mut self.weight.grad,
            );
            if let Some(b) = &mut self.bias {
                accumulate_channel_bias_grad(&mut b.grad, dyi, g.col_cols());
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    g.col_rows(),
                    self.cout,
                    g.col_cols(),
                    T::one(),
                    &self.weight.value,
                    true,
                    dyi,
                    false,
                    T::zero(),
                    &mut dcols,
                );
                col2im(&g, &dcols, dx.item_mut(i));
            }
        }
        dx
    }
}

/// Transposed 2-D convolution, weight layout `[cin, cout, k, k]`.
///
/// Output size is `(h - 1) * stride - 2 * pad + k + out_pad`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl<T: Real> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        weight: Vec<T>,
        bias: bool,
    ) -> Self {
        assert!(out_pad < stride);
        Self {
            weight: Param::new(vec![cin, cout, k, k], weight),
            bias: bias.then(|| Param::filled(vec![cout], T::zero())),
            cin,
            cout,
            k,
            stride,
            pad,
            out_pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.k + self.out_pad - 2 * self.pad,
            (w - 1) * self.stride + self.k + self.out_pad - 2 * self.pad,
        )
    }

    /// The forward convolution this layer is the adjoint of.
    fn adjoint_geom(&self, h: usize, w: usize) -> ConvGeom {
        let (ho, wo) = self.out_hw(h, w);
        let g = ConvGeom::new(self.cout, ho, wo, self.k, self.stride, self.pad);
        debug_assert_eq!((g.ho, g.wo), (h, w));
        g
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c(), self.cin, "deconv input channels");
        let g = self.adjoint_geom(x.h(), x.w());
        let mut out = Tensor::zeros([x.n(), self.cout, g.h, g.w]);
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        for i in 0..x.n() {
            gemm(
                g.col_rows(),
                self.cin,
                g.col_cols(),
                T::one(),
                &self.weight.value,
                true,
                x.item(i),
                false,
                T::zero(),
                &mut cols,
            );
            let o = out.item_mut(i);
            col2im(&g, &cols, o);
            if let Some(b) = &self.bias {
                add_channel_bias(o, &b.value, g.h * g.w);
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, want_dx: bool) -> Option<Tensor<T>> {
        let g = self.adjoint_geom(x.h(), x.w());
        assert_eq!(dy.shape(), [x.n(), self.cout, g.h, g.w], "deconv dy shape");
        let mut dcols = vec![T::zero(); g.col_rows() * g.col_cols()];
        let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
        for i in 0..x.n() {
            let dyi = dy.item(i);
            im2col(&g, dyi, &mut dcols);
            gemm(
                self.cin,
                g.col_cols(),
                g.col_rows(),
                T::one(),
                x.item(i),
                false,
                &dcols,
                true,
                T::one(),
                &mut self.weight.grad,
            );
            if let Some(b) = &mut self.bias {
                accumulate_channel_bias_grad(&mut b.grad, dyi, g.h * g.w);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    self.cin,
                    g.col_rows(),
                    g.col_cols(),
                    T::one(),
                    &self.weight.value,
                    false,
                    &dcols,
                    false,
                    T::zero(),
                    dx.item_mut(i),
                );
            }
        }
        dx
    }
}

/// Per-channel batch normalization over `N×H×W`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub channels: usize,
    pub eps: T,
    pub momentum: T,
}

/// Saved activations of a training-mode batch-norm forward.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(vec![channels], T::one()),
            beta: Param::filled(vec![channels], T::zero()),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            channels,
            eps: T::lit(1e-5),
            momentum: T::lit(0.1),
        }
    }

    /// Normalizes with batch statistics; folds them into the running
    /// statistics when `update_running` is set.
    pub fn forward_train(&mut self, x: &Tensor<T>, update_running: bool) -> (Tensor<T>, BnCache<T>) {
        assert_eq!(x.c(), self.channels, "batch-norm channels");
        let (n, c, plane) = (x.n(), x.c(), x.h() * x.w());
        let count = n * plane;
        let cnt = T::lit(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for i in 0..n {
            let xi = x.item(i);
            for ch in 0..c {
                mean[ch] += xi[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= cnt);
        for i in 0..n {
            let xi = x.item(i);
            for ch in 0..c {
                let m = mean[ch];
                var[ch] += xi[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|&v| (v - m) * (v - m))
                    .sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v /= cnt);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();

        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        for i in 0..n {
            let xi = x.item(i);
            let (hi, oi) = (xhat.item_mut(i), out.item_mut(i));
            for ch in 0..c {
                let (m, s, gm, bt) = (mean[ch], inv_std[ch], self.gamma.value[ch], self.beta.value[ch]);
                for p in ch * plane..(ch + 1) * plane {
                    let h = (xi[p] - m) * s;
                    hi[p] = h;
                    oi[p] = gm * h + bt;
                }
            }
        }
        if update_running {
            let mom = self.momentum;
            let unbias = if count > 1 {
                cnt / T::lit((count - 1) as f64)
            } else {
                T::one()
            };
            for ch in 0..c {
                self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * mean[ch];
                self.running_var[ch] = (T::one() - mom) * self.running_var[ch] + mom * var[ch] * unbias;
            }
        }
        (out, BnCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c(), self.channels, "batch-norm channels");
        let plane = x.h() * x.w();
        let mut out = x.clone();
        for i in 0..x.n() {
            let oi = out.item_mut(i);
            for ch in 0..self.channels {
                let s = self.gamma.value[ch] / (self.running_var[ch] + self.eps).sqrt();
                let b = self.beta.value[ch] - self.running_mean[ch] * s;
                oi[ch * plane..(ch + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = *v * s + b);
            }
        }
        out
    }

    /// Output of the normalization recomputed from the cache.
    pub fn output_from_cache(&self, cache: &BnCache<T>) -> Tensor<T> {
        let plane = cache.xhat.h() * cache.xhat.w();
        let mut out = cache.xhat.clone();
        for i in 0..out.n() {
            let oi = out.item_mut(i);
            for ch in 0..self.channels {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                oi[ch * plane..(ch + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = g * *v + b);
            }
        }
        out
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let xhat = &cache.xhat;
        assert_eq!(dy.shape(), xhat.shape(), "batch-norm dy shape");
        let (n, c, plane) = (dy.n(), dy.c(), dy.h() * dy.w());
        let cnt = T::lit((n * plane) as f64);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for i in 0..n {
            let (di, hi) = (dy.item(i), xhat.item(i));
            for ch in 0..c {
                for p in ch * plane..(ch + 1) * plane {
                    sum_dy[ch] += di[p];
                    sum_dy_xhat[ch] += di[p] * hi[p];
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad[ch] += sum_dy_xhat[ch];
            self.beta.grad[ch] += sum_dy[ch];
        }
        let mut dx = Tensor::zeros(dy.shape());
        for i in 0..n {
            let (di, hi) = (dy.item(i), xhat.item(i));
            let oi = dx.item_mut(i);
            for ch in 0..c {
                let scale = self.gamma.value[ch] * cache.inv_std[ch] / cnt;
                let (sd, sdh) = (sum_dy[ch], sum_dy_xhat[ch]);
                for p in ch * plane..(ch + 1) * plane {
                    oi[p] = scale * (cnt * di[p] - sd - hi[p] * sdh);
                }
            }
        }
        dx
    }
}

pub fn leaky_relu_inplace<T: Real>(x: &mut [T]) {
    let s = T::lit(LEAKY_SLOPE);
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = *v * s
        }
    });
}

/// Gradient through a leaky ReLU given its pre-activation (or its output,
/// which has the same sign).
pub fn leaky_relu_backward_inplace<T: Real>(dy: &mut [T], pre: &[T]) {
    let s = T::lit(LEAKY_SLOPE);
    dy.iter_mut().zip(pre).for_each(|(d, &p)| {
        if p < T::zero() {
            *d = *d * s
        }
    });
}

/// 3×3, stride-2, pad-1 max pooling. Returns the output and, per output
/// element, the flat in-plane index of the selected input.
pub fn maxpool3s2_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (h, w) = (x.h(), x.w());
    let ho = (h - 1) / 2 + 1;
    let wo = (w - 1) / 2 + 1;
    let mut out = Tensor::zeros([x.n(), x.c(), ho, wo]);
    let mut arg = vec![0u32; x.n() * x.c() * ho * wo];
    let mut k = 0;
    for i in 0..x.n() {
        let xi = x.item(i);
        let oi = out.item_mut(i);
        for ch in 0..x.c() {
            let src = &xi[ch * h * w..(ch + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    let y0 = (2 * oy).saturating_sub(1);
                    let x0 = (2 * ox).saturating_sub(1);
                    for iy in y0..(2 * oy + 2).min(h) {
                        for ix in x0..(2 * ox + 2).min(w) {
                            let v = src[iy * w + ix];
                            if v > best {
                                best = v;
                                best_idx = iy * w + ix;
                            }
                        }
                    }
                    oi[ch * ho * wo + oy * wo + ox] = best;
                    arg[k] = best_idx as u32;
                    k += 1;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool3s2_backward<T: Real>(dy: &Tensor<T>, arg: &[u32], in_shape: [usize; 4]) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let plane_in = in_shape[2] * in_shape[3];
    let plane_out = dy.h() * dy.w();
    let mut k = 0;
    for i in 0..dy.n() {
        let di = dy.item(i);
        let xi = dx.item_mut(i);
        for ch in 0..dy.c() {
            for p in 0..plane_out {
                xi[ch * plane_in + arg[k] as usize] += di[ch * plane_out + p];
                k += 1;
            }
        }
    }
    dx
}

/// Fully connected layer, weight layout `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub inputs: usize,
    pub outputs: usize,
}

impl<T: Real> Linear<T> {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<T>, bias: bool) -> Self {
        Self {
            weight: Param::new(vec![outputs, inputs], weight),
            bias: bias.then(|| Param::filled(vec![outputs], T::zero())),
            inputs,
            outputs,
        }
    }

    /// `x` is `n × inputs` row-major; returns `n × outputs`.
    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        assert_eq!(x.len(), n * self.inputs, "linear input width");
        let mut y = vec![T::zero(); n * self.outputs];
        if let Some(b) = &self.bias {
            for row in y.chunks_mut(self.outputs) {
                row.copy_from_slice(&b.value);
            }
        }
        let beta = if self.bias.is_some() { T::one() } else { T::zero() };
        gemm(
            n,
            self.inputs,
            self.outputs,
            T::one(),
            x,
            false,
            &self.weight.value,
            true,
            beta,
            &mut y,
        );
        y
    }

    pub fn backward(&mut self, x: &[T], dy: &[T], n: usize) -> Vec<T> {
        assert_eq!(dy.len(), n * self.outputs, "linear dy width");
        gemm(
            self.outputs,
            n,
            self.inputs,
            T::one(),
            dy,
            true,
            x,
            false,
            T::one(),
            &mut self.weight.grad,
        );
        if let Some(b) = &mut self.bias {
            for row in dy.chunks(self.outputs) {
                b.grad.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
            }
        }
        let mut dx = vec![T::zero(); n * self.inputs];
        gemm(
            n,
            self.outputs,
            self.inputs,
            T::one(),
            dy,
            false,
            &self.weight.value,
            false,
            T::zero(),
            &mut dx,
        );
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn conv_naive(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], cout: usize, k: usize, s: usize, p: usize) -> (Vec<f64>, usize, usize) {
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let mut y = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x[ci * h * w + iy as usize * w + ix as usize]
                                        * wt[((co * cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    y[co * ho * wo + oy * wo + ox] = acc;
                }
            }
        }
        (y, ho, wo)
    }

    fn ramp(n: usize, a: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * a).sin()).collect()
    }

    #[test]
    fn conv_matches_naive_stride_one_and_two() {
        for stride in [1, 2] {
            let (cin, cout, h, w) = (3, 4, 7, 6);
            let wt = ramp(cout * cin * 9, 0.7);
            let x = ramp(cin * h * w, 0.3);
            let conv = Conv2d::new(cin, cout, 3, stride, 1, wt.clone(), false);
            let y = conv.forward(&Tensor::from_vec([1, cin, h, w], x.clone()));
            let (want, ho, wo) = conv_naive(&x, cin, h, w, &wt, cout, 3, stride, 1);
            assert_eq!([y.h(), y.w()], [ho, wo]);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <deconv(x), y> == <x, conv(y)> for shared weights.
        let (cin, cout, h, w) = (5, 3, 4, 2);
        let wt = ramp(cin * cout * 9, 0.9);
        let deconv = ConvTranspose2d::new(cin, cout, 3, 2, 1, 1, wt.clone(), false);
        let (ho, wo) = deconv.out_hw(h, w);
        assert_eq!((ho, wo), (2 * h, 2 * w));
        let x = ramp(cin * h * w, 0.2);
        let y = ramp(cout * ho * wo, 0.45);
        let dx = deconv.forward(&Tensor::from_vec([1, cin, h, w], x.clone()));
        // Conv with weight [cin(out), cout(in)] reuses the same memory layout.
        let conv = Conv2d::new(cout, cin, 3, 2, 1, wt, false);
        let cy = conv.forward(&Tensor::from_vec([1, cout, ho, wo], y.clone()));
        let lhs: f64 = dx.data().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = cy.data().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn maxpool_shapes_follow_ceil_half() {
        for (h, w, ho, wo) in [(64, 32, 32, 16), (32, 16, 16, 8), (8, 4, 4, 2), (4, 2, 2, 1)] {
            let x = Tensor::<f64>::from_vec([1, 1, h, w], ramp(h * w, 0.13));
            let (y, _) = maxpool3s2_forward(&x);
            assert_eq!([y.h(), y.w()], [ho, wo]);
        }
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = Tensor::<f64>::from_vec([1, 1, 3, 3], vec![1., 2., 3., 4., 9., 6., 7., 8., 5.]);
        let (y, arg) = maxpool3s2_forward(&x);
        assert_eq!(y.data(), &[9.0, 9.0, 9.0, 9.0]);
        assert!(arg.iter().all(|&a| a == 4));
        let dx = maxpool3s2_backward(&Tensor::from_vec([1, 1, 2, 2], vec![1.0; 4]), &arg, [1, 1, 3, 3]);
        assert_eq!(dx.data()[4], 4.0);
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::from_vec([3, 2, 2, 2], ramp(24, 1.3));
        let (y, _) = bn.forward_train(&x, true);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|i| y.item(i)[ch * 4..ch * 4 + 4].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / 12.0;
            let v = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 12.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batchnorm_constant_channel_stays_finite() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec([2, 1, 2, 2], vec![0.0; 8]);
        let (y, cache) = bn.forward_train(&x, true);
        assert!(y.data().iter().all(|v| v.is_finite() && *v == 0.0));
        let dx = bn.backward(&cache, &Tensor::from_vec([2, 1, 2, 2], vec![1.0; 8]));
        assert!(dx.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn linear_forward_is_affine() {
        let mut lin = Linear::new(2, 3, vec![1., 2., 3., 4., 5., 6.], true);
        lin.bias.as_mut().unwrap().value = vec![0.5, -0.5, 1.0];
        let y = lin.forward(&[1.0, -1.0], 1);
        assert_eq!(y, vec![-0.5, -1.5, 0.0]);
    }
}
