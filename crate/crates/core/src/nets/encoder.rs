use rand::Rng;

use super::init::{leaky_gain, normal};
use super::layers::{
    leaky_relu_backward_inplace, leaky_relu_inplace, maxpool3s2_backward, maxpool3s2_forward, BatchNorm2d, BnCache,
    Conv2d, Linear,
};
use super::real::{all_finite, Real};
use super::tensor::Tensor;
use super::{NetError, FEATURE_DIM, FRAME_C, FRAME_H, FRAME_W};

/// Convolution, batch norm, leaky ReLU and an optional 3×3/2 max pool.
#[derive(Clone, Debug)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub pool: bool,
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    pool: Option<(Vec<u32>, [usize; 4])>,
}

impl<T: Real> ConvBlock<T> {
    fn init<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, stride: usize, pool: bool) -> Self {
        let std = leaky_gain() / ((cin * 9) as f64).sqrt();
        Self {
            conv: Conv2d::new(cin, cout, 3, stride, 1, normal(rng, cout * cin * 9, std), false),
            bn: BatchNorm2d::new(cout),
            pool,
        }
    }

    fn forward_train(&mut self, x: Tensor<T>, update_running: bool) -> (Tensor<T>, BlockCache<T>) {
        let y = self.conv.forward(&x);
        let (mut z, bn) = self.bn.forward_train(&y, update_running);
        leaky_relu_inplace(z.data_mut());
        let (out, pool) = if self.pool {
            let shape = z.shape();
            let (p, arg) = maxpool3s2_forward(&z);
            (p, Some((arg, shape)))
        } else {
            (z, None)
        };
        (out, BlockCache { input: x, bn, pool })
    }

    fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut z = self.bn.forward_eval(&self.conv.forward(x));
        leaky_relu_inplace(z.data_mut());
        if self.pool {
            maxpool3s2_forward(&z).0
        } else {
            z
        }
    }

    fn backward(&mut self, cache: &BlockCache<T>, dy: Tensor<T>, want_dx: bool) -> Option<Tensor<T>> {
        let mut dz = match &cache.pool {
            Some((arg, shape)) => maxpool3s2_backward(&dy, arg, *shape),
            None => dy,
        };
        let pre = self.bn.output_from_cache(&cache.bn);
        leaky_relu_backward_inplace(dz.data_mut(), pre.data());
        let dconv = self.bn.backward(&cache.bn, &dz);
        self.conv.backward(&cache.input, &dconv, want_dx)
    }
}

/// Frame encoder: conv stack followed by a linear map to the 320-d split
/// feature vector.
#[derive(Clone, Debug)]
pub struct Encoder<T> {
    pub blocks: Vec<ConvBlock<T>>,
    pub fc: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    blocks: Vec<BlockCache<T>>,
    fc_input: Vec<T>,
    pooled_shape: [usize; 4],
}

impl<T: Real> Encoder<T> {
    /// Conv1 64, pool, Conv2 256, pool, Conv3 512/2, [Conv4 512], pool, FC 320.
    ///
    /// The optional fourth conv keeps stride 1 so the pooled map entering the
    /// FC layer is 4×2×512 in both configurations.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, large_model: bool) -> Self {
        let mut blocks = vec![
            ConvBlock::init(rng, FRAME_C, 64, 1, true),
            ConvBlock::init(rng, 64, 256, 1, true),
            ConvBlock::init(rng, 256, 512, 2, !large_model),
        ];
        if large_model {
            blocks.push(ConvBlock::init(rng, 512, 512, 1, true));
        }
        let fc_in = 512 * 4 * 2;
        let fc = Linear::new(
            fc_in,
            FEATURE_DIM,
            normal(rng, fc_in * FEATURE_DIM, 1.0 / (fc_in as f64).sqrt()),
            true,
        );
        Self { blocks, fc }
    }

    fn check_input(x: &Tensor<T>) -> Result<(), NetError> {
        let s = x.shape();
        if s[1..] != [FRAME_C, FRAME_H, FRAME_W] || s[0] == 0 {
            return Err(NetError::Shape(format!(
                "encoder expects [n>0, {FRAME_C}, {FRAME_H}, {FRAME_W}], got {s:?}"
            )));
        }
        Ok(())
    }

    /// Training-mode forward over a batch of frames; returns `n × 320`.
    pub fn forward_train(
        &mut self,
        x: &Tensor<T>,
        update_running: bool,
    ) -> Result<(Vec<T>, EncoderCache<T>), NetError> {
        Self::check_input(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let (out, cache) = block.forward_train(h, update_running);
            if !all_finite(out.data()) {
                return Err(NetError::NumericFault { stage: "encoder", layer: i + 1 });
            }
            caches.push(cache);
            h = out;
        }
        let n = h.n();
        let pooled_shape = h.shape();
        let fc_input = h.into_data();
        let feats = self.fc.forward(&fc_input, n);
        if !all_finite(&feats) {
            return Err(NetError::NumericFault { stage: "encoder", layer: self.blocks.len() + 1 });
        }
        Ok((feats, EncoderCache { blocks: caches, fc_input, pooled_shape }))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Vec<T>, NetError> {
        Self::check_input(x)?;
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward_eval(&h);
            if !all_finite(h.data()) {
                return Err(NetError::NumericFault { stage: "encoder", layer: i + 1 });
            }
        }
        let n = h.n();
        let feats = self.fc.forward(h.data(), n);
        if !all_finite(&feats) {
            return Err(NetError::NumericFault { stage: "encoder", layer: self.blocks.len() + 1 });
        }
        Ok(feats)
    }

    /// Accumulates parameter gradients from `dfeats` (`n × 320`); returns the
    /// input gradient when `want_dx` is set.
    pub fn backward(&mut self, cache: &EncoderCache<T>, dfeats: &[T], want_dx: bool) -> Option<Tensor<T>> {
        let n = cache.pooled_shape[0];
        let dpooled = self.fc.backward(&cache.fc_input, dfeats, n);
        let mut dy = Tensor::from_vec(cache.pooled_shape, dpooled);
        for (i, (block, bc)) in self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            match block.backward(bc, dy, i > 0 || want_dx) {
                Some(dx) => dy = dx,
                None => return None,
            }
        }
        Some(dy)
    }

    /// Activation shape after every block for one frame (layer-by-layer
    /// shape contract).
    pub fn block_shapes(&self) -> Vec<[usize; 3]> {
        let (mut h, mut w) = (FRAME_H, FRAME_W);
        let mut shapes = Vec::new();
        for b in &self.blocks {
            let (ho, wo) = b.conv.out_hw(h, w);
            shapes.push([b.conv.cout, ho, wo]);
            h = ho;
            w = wo;
            if b.pool {
                h = (h - 1) / 2 + 1;
                w = (w - 1) / 2 + 1;
                shapes.push([b.conv.cout, h, w]);
            }
        }
        shapes
    }
}
