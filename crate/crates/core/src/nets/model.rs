use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoder::Decoder;
use super::encoder::Encoder;
use super::init::normal;
use super::layers::Linear;
use super::lstm::Lstm;
use super::real::{all_finite, softmax, Real};
use super::tensor::{Param, Tensor};
use super::{
    DisentangledFeatures, NetError, CANONICAL_DIM, FEATURE_DIM, LSTM_HIDDEN, LSTM_LAYERS, POSE_DIM,
};
use crate::container::Container;

pub const CHECKPOINT_KIND: &str = "gaitdis-checkpoint";

/// Architecture choices that change the parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Adds the fourth 512-channel conv block to the encoder.
    pub large_model: bool,
    /// Output width of both identity classifiers.
    pub n_subjects: usize,
}

/// A named tensor slot visited by [`GaitNet::visit`].
pub enum Slot<'a, T> {
    Param(&'a mut Param<T>),
    /// Non-trainable state (batch-norm running statistics).
    Buffer(&'a mut Vec<T>),
}

/// The full model: encoder, decoder, pose LSTM and both classifiers.
#[derive(Clone, Debug)]
pub struct GaitNet<T> {
    pub arch: ArchConfig,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub lstm: Lstm<T>,
    /// Identity classifier on canonical features.
    pub cls_sg: Linear<T>,
    /// Identity classifier on dynamic gait features.
    pub cls_dg: Linear<T>,
}

fn classifier<T: Real>(rng: &mut ChaCha8Rng, inputs: usize, k: usize) -> Linear<T> {
    Linear::new(inputs, k, normal(rng, inputs * k, 1.0 / (inputs as f64).sqrt()), true)
}

impl<T: Real> GaitNet<T> {
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self, NetError> {
        if arch.n_subjects == 0 {
            return Err(NetError::InvalidInput("n_subjects must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::init(&mut rng, arch.large_model);
        let decoder = Decoder::init(&mut rng);
        let lstm = Lstm::init(&mut rng, POSE_DIM, LSTM_HIDDEN, LSTM_LAYERS);
        let cls_sg = classifier(&mut rng, CANONICAL_DIM, arch.n_subjects);
        let cls_dg = classifier(&mut rng, LSTM_HIDDEN, arch.n_subjects);
        Ok(Self {
            arch,
            encoder,
            decoder,
            lstm,
            cls_sg,
            cls_dg,
        })
    }

    /// Visits every parameter and buffer in a fixed order with a stable name.
    pub fn visit<'a>(&'a mut self, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        fn linear<'a, T>(f: &mut dyn FnMut(&str, Slot<'a, T>), name: &str, l: &'a mut Linear<T>) {
            f(&format!("{name}.weight"), Slot::Param(&mut l.weight));
            if let Some(b) = &mut l.bias {
                f(&format!("{name}.bias"), Slot::Param(b));
            }
        }
        fn bn<'a, T>(f: &mut dyn FnMut(&str, Slot<'a, T>), name: &str, b: &'a mut super::layers::BatchNorm2d<T>) {
            f(&format!("{name}.gamma"), Slot::Param(&mut b.gamma));
            f(&format!("{name}.beta"), Slot::Param(&mut b.beta));
            f(&format!("{name}.running_mean"), Slot::Buffer(&mut b.running_mean));
            f(&format!("{name}.running_var"), Slot::Buffer(&mut b.running_var));
        }
        for (i, b) in self.encoder.blocks.iter_mut().enumerate() {
            let name = format!("encoder.conv{}", i + 1);
            f(&format!("{name}.weight"), Slot::Param(&mut b.conv.weight));
            if let Some(bias) = &mut b.conv.bias {
                f(&format!("{name}.bias"), Slot::Param(bias));
            }
            bn(f, &format!("encoder.bn{}", i + 1), &mut b.bn);
        }
        linear(f, "encoder.fc", &mut self.encoder.fc);
        linear(f, "decoder.fc", &mut self.decoder.fc);
        bn(f, "decoder.bn0", &mut self.decoder.bn_fc);
        for (i, d) in self.decoder.deconvs.iter_mut().enumerate() {
            let name = format!("decoder.deconv{}", i + 1);
            f(&format!("{name}.weight"), Slot::Param(&mut d.weight));
            if let Some(bias) = &mut d.bias {
                f(&format!("{name}.bias"), Slot::Param(bias));
            }
        }
        for (i, b) in self.decoder.bns.iter_mut().enumerate() {
            bn(f, &format!("decoder.bn{}", i + 1), b);
        }
        for (i, l) in self.lstm.layers.iter_mut().enumerate() {
            f(&format!("lstm.l{i}.w_ih"), Slot::Param(&mut l.w_ih));
            f(&format!("lstm.l{i}.w_hh"), Slot::Param(&mut l.w_hh));
            f(&format!("lstm.l{i}.bias"), Slot::Param(&mut l.bias));
        }
        linear(f, "cls_sg", &mut self.cls_sg);
        linear(f, "cls_dg", &mut self.cls_dg);
    }

    /// Mutable references to every trainable parameter, in visit order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        self.visit(&mut |_, s| {
            if let Slot::Param(p) = s {
                out.push(p);
            }
        });
        out
    }

    pub fn param_count(&self) -> usize {
        let mut m = self.clone();
        m.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn named_values(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut m = self.clone();
        let mut out = Vec::new();
        m.visit(&mut |name, s| match s {
            Slot::Param(p) => out.push((name.to_string(), p.shape.clone(), p.value.iter().map(|v| v.as_f64()).collect())),
            Slot::Buffer(b) => out.push((name.to_string(), vec![b.len()], b.iter().map(|v| v.as_f64()).collect())),
        });
        out
    }

    /// Overwrites values by name; every slot must be supplied with a
    /// matching length.
    fn load_named(&mut self, get: &mut dyn FnMut(&str, usize) -> Result<Vec<f64>, NetError>) -> Result<(), NetError> {
        let mut err = None;
        self.visit(&mut |name, s| {
            if err.is_some() {
                return;
            }
            let target: &mut Vec<T> = match s {
                Slot::Param(p) => &mut p.value,
                Slot::Buffer(b) => b,
            };
            match get(name, target.len()) {
                Ok(v) => {
                    for (t, x) in target.iter_mut().zip(v) {
                        *t = T::lit(x);
                    }
                }
                Err(e) => err = Some(e),
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Same weights and statistics in another scalar type; gradients reset.
    pub fn cast<U: Real>(&self) -> GaitNet<U> {
        let mut out = GaitNet::<U>::init(self.arch, 0).expect("arch already validated");
        let mut values = self.named_values().into_iter();
        out.load_named(&mut |_, _| Ok(values.next().expect("same layout").2))
            .expect("same layout");
        out
    }

    pub fn to_container(&self, iteration: u64) -> Container {
        let mut c = Container::new(
            CHECKPOINT_KIND,
            serde_json::json!({
                "large_model": self.arch.large_model,
                "n_subjects": self.arch.n_subjects,
                "iteration": iteration,
            }),
        );
        for (name, shape, v) in self.named_values() {
            c.push(name, shape, v.into_iter().map(|x| x as f32).collect());
        }
        c
    }

    /// Rebuilds a model from a checkpoint container; returns it with the
    /// stored iteration count.
    pub fn from_container(c: &Container) -> Result<(Self, u64), NetError> {
        c.expect_kind(CHECKPOINT_KIND)?;
        let meta = &c.meta;
        let arch = ArchConfig {
            large_model: meta["large_model"]
                .as_bool()
                .ok_or_else(|| NetError::Checkpoint("missing large_model".into()))?,
            n_subjects: meta["n_subjects"]
                .as_u64()
                .ok_or_else(|| NetError::Checkpoint("missing n_subjects".into()))? as usize,
        };
        let iteration = meta["iteration"].as_u64().unwrap_or(0);
        let mut net = Self::init(arch, 0)?;
        let n_slots = net.named_values().len();
        if n_slots != c.arrays.len() {
            return Err(NetError::Checkpoint(format!(
                "architecture mismatch: checkpoint has {} arrays, model expects {n_slots}",
                c.arrays.len()
            )));
        }
        net.load_named(&mut |name, len| {
            let a = c.get(name)?;
            if a.data.len() != len {
                return Err(NetError::Checkpoint(format!(
                    "architecture mismatch: {name} has {} values, model expects {len}",
                    a.data.len()
                )));
            }
            Ok(a.data.iter().map(|&x| x as f64).collect())
        })?;
        Ok((net, iteration))
    }

    pub fn save(&self, path: &Path, iteration: u64) -> Result<(), NetError> {
        Ok(self.to_container(iteration).write_file(path)?)
    }

    pub fn load(path: &Path) -> Result<(Self, u64), NetError> {
        Self::from_container(&Container::read_file(path)?)
    }

    /// Evaluation-mode encoding of a frame batch.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Vec<DisentangledFeatures<T>>, NetError> {
        let rows = self.encoder.forward_eval(x)?;
        Ok(rows.chunks(FEATURE_DIM).map(DisentangledFeatures::from_row).collect())
    }

    /// Evaluation-mode decoding of `n × 320` feature rows.
    pub fn decode(&self, z: &[T]) -> Result<Tensor<T>, NetError> {
        self.decoder.forward_eval(z, z.len() / FEATURE_DIM.max(1))
    }

    /// Top-layer LSTM outputs for one pose sequence.
    pub fn lstm_outputs(&self, poses: &[Vec<T>]) -> Result<Vec<Vec<T>>, NetError> {
        if poses.is_empty() {
            return Err(NetError::InvalidInput("empty pose sequence".into()));
        }
        if let Some(p) = poses.iter().find(|p| p.len() != POSE_DIM) {
            return Err(NetError::Shape(format!("pose width {} != {POSE_DIM}", p.len())));
        }
        let (h, _) = self.lstm.forward(poses, 1);
        if h.iter().any(|v| !all_finite(v)) {
            return Err(NetError::NumericFault { stage: "lstm", layer: LSTM_LAYERS });
        }
        Ok(h)
    }

    fn classify(l: &Linear<T>, x: &[T]) -> Result<Vec<T>, NetError> {
        if x.len() != l.inputs {
            return Err(NetError::Shape(format!("classifier expects width {}, got {}", l.inputs, x.len())));
        }
        Ok(softmax(&l.forward(x, 1)))
    }

    /// Subject probabilities from a canonical feature.
    pub fn classify_sg(&self, f_c: &[T]) -> Result<Vec<T>, NetError> {
        Self::classify(&self.cls_sg, f_c)
    }

    /// Subject probabilities from a dynamic gait feature.
    pub fn classify_dg(&self, f_dyn: &[T]) -> Result<Vec<T>, NetError> {
        Self::classify(&self.cls_dg, f_dyn)
    }
}
