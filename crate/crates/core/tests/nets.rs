use gaitdis_core::losses::linear_nll_grad;
use gaitdis_core::nets::gradcheck::check_params;
use gaitdis_core::nets::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch(k: usize) -> ArchConfig {
    ArchConfig { large_model: false, n_subjects: k }
}

fn random_frames(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    Tensor::from_vec(
        [n, FRAME_C, FRAME_H, FRAME_W],
        (0..n * FRAME_LEN).map(|_| rng.random::<f64>()).collect(),
    )
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn layer_shapes_follow_the_architecture_table() {
    let net = GaitNet::<f32>::init(arch(4), 0).unwrap();
    assert_eq!(
        net.encoder.block_shapes(),
        vec![[64, 64, 32], [64, 32, 16], [256, 32, 16], [256, 16, 8], [512, 8, 4], [512, 4, 2]]
    );
    let large = GaitNet::<f32>::init(ArchConfig { large_model: true, n_subjects: 4 }, 0).unwrap();
    assert_eq!(
        large.encoder.block_shapes(),
        vec![[64, 64, 32], [64, 32, 16], [256, 32, 16], [256, 16, 8], [512, 8, 4], [512, 8, 4], [512, 4, 2]]
    );
    let frames = vec![vec![0.5f32; FRAME_LEN]; 3];
    let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
    let x = frames_to_tensor::<f32>(&refs);
    let feats = net.encode(&x).unwrap();
    assert_eq!(feats.len(), 3);
    for f in &feats {
        assert_eq!((f.f_a.len(), f.f_c.len(), f.f_p.len()), (128, 128, 64));
    }
    let rows: Vec<f32> = feats.iter().flat_map(|f| f.to_row()).collect();
    assert_eq!(net.decode(&rows).unwrap().shape(), x.shape());
}

#[test]
fn parameter_count_matches_recorded_constant() {
    let encoder = 3 * 64 * 9 + 128 + 64 * 256 * 9 + 512 + 256 * 512 * 9 + 1024 + 4096 * 320 + 320;
    let conv4 = 512 * 512 * 9 + 1024;
    let decoder = 320 * 4096 + 1024 + 512 * 256 * 9 + 512 + 256 * 128 * 9 + 256 + 128 * 64 * 9 + 128 + 64 * 3 * 9 + 3;
    let lstm = (4 * 256 * 64 + 4 * 256 * 256 + 1024) + 2 * (2 * 4 * 256 * 256 + 1024);
    let classifiers = |k: usize| 128 * k + k + 256 * k + k;
    assert_eq!(encoder + decoder + lstm, 6_883_523);
    for k in [1, 16, 74] {
        assert_eq!(GaitNet::<f32>::init(arch(k), 0).unwrap().param_count(), 6_883_523 + classifiers(k));
        let large = ArchConfig { large_model: true, n_subjects: k };
        assert_eq!(GaitNet::<f32>::init(large, 0).unwrap().param_count(), 6_883_523 + conv4 + classifiers(k));
    }
}

#[test]
fn zero_frame_encodes_to_finite_features() {
    let net = GaitNet::<f32>::init(arch(2), 1).unwrap();
    let x = Tensor::<f32>::zeros([2, FRAME_C, FRAME_H, FRAME_W]);
    for f in net.encode(&x).unwrap() {
        assert!(f.to_row().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn decoder_outputs_lie_strictly_inside_unit_interval() {
    let net = GaitNet::<f32>::init(arch(2), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z: Vec<f32> = (0..3 * FEATURE_DIM).map(|_| rng.random_range(-3.0..3.0)).collect();
    let y = net.decode(&z).unwrap();
    assert_eq!(y.shape(), [3, FRAME_C, FRAME_H, FRAME_W]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let zero = vec![0.0f32; FEATURE_DIM];
    assert_eq!(net.decode(&zero).unwrap(), net.decode(&zero).unwrap());
}

#[test]
fn lstm_is_causal_and_length_preserving() {
    let net = GaitNet::<f64>::init(arch(2), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let poses: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut rng, POSE_DIM)).collect();
    assert_eq!(net.lstm_outputs(&poses[..1]).unwrap().len(), 1);
    let h = net.lstm_outputs(&poses).unwrap();
    assert_eq!(h.len(), 6);
    let mut perturbed = poses.clone();
    perturbed[3][7] += 0.5;
    let hp = net.lstm_outputs(&perturbed).unwrap();
    assert_eq!(h[..3], hp[..3]);
    assert_ne!(h[3], hp[3]);
    assert!(net.lstm_outputs(&[]).is_err());
}

#[test]
fn classifier_softmax_and_argmax_oracle() {
    let net = GaitNet::<f64>::init(arch(7), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let x = random_vec(&mut rng, CANONICAL_DIM);
        let p = net.classify_sg(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| v > 0.0));
        // Logits by an explicit dot product per class.
        let w = &net.cls_sg.weight.value;
        let b = &net.cls_sg.bias.as_ref().unwrap().value;
        let logits: Vec<f64> = (0..7).map(|k| b[k] + (0..CANONICAL_DIM).map(|j| w[k * CANONICAL_DIM + j] * x[j]).sum::<f64>()).collect();
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax(&p), argmax(&logits));
    }
    assert!(matches!(net.classify_dg(&[0.0; 3]), Err(NetError::Shape(_))));
}

// Finite-difference checks, 64-bit. Early conv and deconv layers have
// enough leaky-ReLU and max-pool kinks within ±1e-3 of the operating point
// that central differences at that step straddle them; 1e-6 keeps the
// comparison on one linear piece.

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-3;

#[test]
fn encoder_parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = GaitNet::<f64>::init(arch(2), 5).unwrap();
    let x = random_frames(&mut rng, 2);
    let r = random_vec(&mut rng, 2 * FEATURE_DIM);
    let mut objective = |n: &mut GaitNet<f64>, backward: bool| -> f64 {
        let (f, cache) = n.encoder.forward_train(&x, false).unwrap();
        if backward {
            n.encoder.backward(&cache, &r, false);
        }
        f.iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let report = check_params(&mut net, &["encoder."], 10, STEP, &mut rng, &mut objective);
    assert!(report.max_rel_err < TOL, "{report:?}");
    assert_eq!(report.checked, 10 * 11);
}

#[test]
fn decoder_parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = GaitNet::<f64>::init(arch(2), 6).unwrap();
    let z = random_vec(&mut rng, 3 * FEATURE_DIM);
    let r = random_vec(&mut rng, 3 * FRAME_LEN);
    let mut objective = |n: &mut GaitNet<f64>, backward: bool| -> f64 {
        let (y, cache) = n.decoder.forward_train(&z, 3, false).unwrap();
        if backward {
            n.decoder.backward(&cache, &Tensor::from_vec(y.shape(), r.clone()));
        }
        y.data().iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let report = check_params(&mut net, &["decoder."], 10, STEP, &mut rng, &mut objective);
    assert!(report.max_rel_err < TOL, "{report:?}");
}

#[test]
fn lstm_gradients_match_finite_differences_over_five_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = GaitNet::<f64>::init(arch(2), 7).unwrap();
    let xs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 2 * POSE_DIM)).collect();
    let r: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 2 * LSTM_HIDDEN)).collect();
    let mut objective = |n: &mut GaitNet<f64>, backward: bool| -> f64 {
        let (h, cache) = n.lstm.forward(&xs, 2);
        if backward {
            n.lstm.backward(&cache, &r);
        }
        h.iter().zip(&r).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y)).sum()
    };
    let report = check_params(&mut net, &["lstm."], 10, STEP, &mut rng, &mut objective);
    assert!(report.max_rel_err < TOL, "{report:?}");
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut net = GaitNet::<f64>::init(arch(5), 8).unwrap();
    let fc: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, CANONICAL_DIM)).collect();
    let fd: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, LSTM_HIDDEN)).collect();
    let mut objective = |n: &mut GaitNet<f64>, backward: bool| -> f64 {
        let mut cls_sg = n.cls_sg.clone();
        let mut cls_dg = n.cls_dg.clone();
        let (a, _) = linear_nll_grad(&mut cls_sg, &fc, 2, 1.0);
        let (b, _) = linear_nll_grad(&mut cls_dg, &fd, 4, 1.0);
        if backward {
            n.cls_sg = cls_sg;
            n.cls_dg = cls_dg;
        }
        a + b
    };
    let report = check_params(&mut net, &["cls_sg.", "cls_dg."], 10, STEP, &mut rng, &mut objective);
    assert!(report.max_rel_err < TOL, "{report:?}");
}
