use rand::Rng;

use super::init::{leaky_gain, normal};
use super::layers::{leaky_relu_backward_inplace, leaky_relu_inplace, BatchNorm2d, BnCache, ConvTranspose2d, Linear};
use super::real::{all_finite, sigmoid, Real};
use super::tensor::Tensor;
use super::{NetError, FEATURE_DIM, FRAME_C};

const SEED_SHAPE: [usize; 3] = [512, 4, 2];

/// Frame decoder: FC to 4×2×512, then four stride-2 transposed convs to
/// 64×32×3 with a sigmoid on the output.
#[derive(Clone, Debug)]
pub struct Decoder<T> {
    pub fc: Linear<T>,
    pub bn_fc: BatchNorm2d<T>,
    pub deconvs: Vec<ConvTranspose2d<T>>,
    /// Batch norms after every transposed conv except the last.
    pub bns: Vec<BatchNorm2d<T>>,
}

#[derive(Clone, Debug)]
pub struct DecoderCache<T> {
    z: Vec<T>,
    bn_fc: BnCache<T>,
    /// Post-activation input of every transposed conv.
    inputs: Vec<Tensor<T>>,
    bns: Vec<BnCache<T>>,
    out: Tensor<T>,
}

impl<T: Real> Decoder<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let seed_len: usize = SEED_SHAPE.iter().product();
        let fc = Linear::new(
            FEATURE_DIM,
            seed_len,
            normal(rng, FEATURE_DIM * seed_len, leaky_gain() / (FEATURE_DIM as f64).sqrt()),
            false,
        );
        let widths = [512, 256, 128, 64, FRAME_C];
        let mut deconvs = Vec::new();
        let mut bns = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            let last = i == widths.len() - 2;
            // Each output pixel of a stride-2 transposed conv sees about a
            // quarter of the kernel taps.
            let std = leaky_gain() / ((cin * 9) as f64 / 4.0).sqrt();
            let std = if last { std / leaky_gain() } else { std };
            deconvs.push(ConvTranspose2d::new(
                cin,
                cout,
                3,
                2,
                1,
                1,
                normal(rng, cin * cout * 9, std),
                last,
            ));
            if !last {
                bns.push(BatchNorm2d::new(cout));
            }
        }
        Self {
            fc,
            bn_fc: BatchNorm2d::new(SEED_SHAPE[0]),
            deconvs,
            bns,
        }
    }

    fn check_input(z: &[T], n: usize) -> Result<(), NetError> {
        if n == 0 || z.len() != n * FEATURE_DIM {
            return Err(NetError::Shape(format!(
                "decoder expects n>0 rows of {FEATURE_DIM}, got {} values for n={n}",
                z.len()
            )));
        }
        Ok(())
    }

    fn seed(&self, z: &[T], n: usize) -> Tensor<T> {
        Tensor::from_vec([n, SEED_SHAPE[0], SEED_SHAPE[1], SEED_SHAPE[2]], self.fc.forward(z, n))
    }

    /// Training-mode forward; `z` is `n × 320`. Output is `[n, 3, 64, 32]`.
    pub fn forward_train(
        &mut self,
        z: &[T],
        n: usize,
        update_running: bool,
    ) -> Result<(Tensor<T>, DecoderCache<T>), NetError> {
        Self::check_input(z, n)?;
        let a = self.seed(z, n);
        let (mut h, bn_fc) = self.bn_fc.forward_train(&a, update_running);
        leaky_relu_inplace(h.data_mut());
        let mut inputs = Vec::with_capacity(self.deconvs.len());
        let mut bn_caches = Vec::with_capacity(self.bns.len());
        let last = self.deconvs.len() - 1;
        for i in 0..self.deconvs.len() {
            let mut y = self.deconvs[i].forward(&h);
            if i < last {
                let (mut yb, c) = self.bns[i].forward_train(&y, update_running);
                leaky_relu_inplace(yb.data_mut());
                bn_caches.push(c);
                y = yb;
            } else {
                y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            if !all_finite(y.data()) {
                return Err(NetError::NumericFault { stage: "decoder", layer: i + 2 });
            }
            inputs.push(h);
            h = y;
        }
        Ok((
            h.clone(),
            DecoderCache {
                z: z.to_vec(),
                bn_fc,
                inputs,
                bns: bn_caches,
                out: h,
            },
        ))
    }

    pub fn forward_eval(&self, z: &[T], n: usize) -> Result<Tensor<T>, NetError> {
        Self::check_input(z, n)?;
        let mut h = self.bn_fc.forward_eval(&self.seed(z, n));
        leaky_relu_inplace(h.data_mut());
        let last = self.deconvs.len() - 1;
        for i in 0..self.deconvs.len() {
            h = self.deconvs[i].forward(&h);
            if i < last {
                h = self.bns[i].forward_eval(&h);
                leaky_relu_inplace(h.data_mut());
            } else {
                h.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            if !all_finite(h.data()) {
                return Err(NetError::NumericFault { stage: "decoder", layer: i + 2 });
            }
        }
        Ok(h)
    }

    /// Accumulates parameter gradients from `dout` and returns `dL/dz`.
    pub fn backward(&mut self, cache: &DecoderCache<T>, dout: &Tensor<T>) -> Vec<T> {
        let mut dy = dout.clone();
        dy.data_mut()
            .iter_mut()
            .zip(cache.out.data())
            .for_each(|(d, &y)| *d = *d * y * (T::one() - y));
        let last = self.deconvs.len() - 1;
        for i in (0..self.deconvs.len()).rev() {
            if i < last {
                leaky_relu_backward_inplace(dy.data_mut(), cache.inputs[i + 1].data());
                dy = self.bns[i].backward(&cache.bns[i], &dy);
            }
            dy = self.deconvs[i]
                .backward(&cache.inputs[i], &dy, true)
                .expect("dx requested");
        }
        leaky_relu_backward_inplace(dy.data_mut(), cache.inputs[0].data());
        let da = self.bn_fc.backward(&cache.bn_fc, &dy);
        let n = da.n();
        self.fc.backward(&cache.z, da.data(), n)
    }
}
