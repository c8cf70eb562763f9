use gaitdis_core::engine::{match_score, GaitSignature, ScoreNormalizer, SignatureRecord};
use gaitdis_core::evalkit::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Random matrix whose probes are all enrolled; scores on a coarse grid so
/// ties occur.
fn random_matrix(rng: &mut ChaCha8Rng, ng: usize, np: usize) -> ScoreMatrix {
    let n_subj = rng.random_range(1..=ng.min(4));
    let mut g: Vec<String> = (0..ng).map(|i| format!("s{}", i % n_subj)).collect();
    // Shuffle gallery labels so subjects are interleaved arbitrarily.
    for i in (1..g.len()).rev() {
        let j = rng.random_range(0..=i);
        g.swap(i, j);
    }
    let p: Vec<String> = (0..np).map(|_| format!("s{}", rng.random_range(0..n_subj))).collect();
    let scores = (0..ng * np).map(|_| rng.random_range(0..8) as f64 / 7.0).collect();
    ScoreMatrix::new(scores, g, p, Channel::Fused).unwrap()
}

/// First gallery entry holding the column maximum decides the prediction.
fn rank1_oracle(m: &ScoreMatrix) -> f64 {
    let mut correct = 0;
    for p in 0..m.n_probe() {
        let mut best = 0;
        for g in 1..m.n_gallery() {
            if m.get(g, p) > m.get(best, p) {
                best = g;
            }
        }
        if m.gallery_labels[best] == m.probe_labels[p] {
            correct += 1;
        }
    }
    correct as f64 / m.n_probe() as f64
}

/// Rank of the true subject: subjects strictly better, plus tied subjects
/// whose first maximal entry comes earlier.
fn cmc_oracle(m: &ScoreMatrix, max_rank: usize) -> Vec<f64> {
    let mut subjects = m.gallery_labels.clone();
    subjects.sort();
    subjects.dedup();
    let mut hits = vec![0.0; max_rank];
    for p in 0..m.n_probe() {
        let agg = |s: &str| -> (f64, usize) {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for g in 0..m.n_gallery() {
                if m.gallery_labels[g] == s && m.get(g, p) > best.0 {
                    best = (m.get(g, p), g);
                }
            }
            best
        };
        let truth = agg(&m.probe_labels[p]);
        let ahead = subjects
            .iter()
            .filter(|s| **s != m.probe_labels[p])
            .filter(|s| {
                let a = agg(s);
                a.0 > truth.0 || (a.0 == truth.0 && a.1 < truth.1)
            })
            .count();
        for h in hits.iter_mut().skip(ahead) {
            *h += 1.0;
        }
    }
    hits.iter().map(|h| h / m.n_probe() as f64).collect()
}

/// Sweeps every observed score (plus +inf) as a threshold.
fn tar_oracle(m: &ScoreMatrix, far: f64) -> f64 {
    let mut gen = Vec::new();
    let mut imp = Vec::new();
    for g in 0..m.n_gallery() {
        for p in 0..m.n_probe() {
            if m.gallery_labels[g] == m.probe_labels[p] {
                gen.push(m.get(g, p));
            } else {
                imp.push(m.get(g, p));
            }
        }
    }
    let mut candidates = m.scores.clone();
    candidates.push(f64::INFINITY);
    let mut best_t = f64::INFINITY;
    for &t in &candidates {
        let fa = imp.iter().filter(|&&s| s >= t).count();
        if (fa as f64) <= far * imp.len() as f64 + 1e-9 && t < best_t {
            best_t = t;
        }
    }
    gen.iter().filter(|&&s| s >= best_t).count() as f64 / gen.len() as f64
}

fn has_genuine_and_impostor(m: &ScoreMatrix) -> bool {
    let mut gen = false;
    let mut imp = false;
    for g in &m.gallery_labels {
        for p in &m.probe_labels {
            if g == p {
                gen = true;
            } else {
                imp = true;
            }
        }
    }
    gen && imp
}

#[test]
fn metrics_match_exhaustive_oracles_on_random_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (ng, np) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let m = random_matrix(&mut rng, ng, np);
        assert_eq!(rank1(&m).unwrap().accuracy, rank1_oracle(&m));
        assert_eq!(cmc(&m, 6).unwrap(), cmc_oracle(&m, 6));
        if has_genuine_and_impostor(&m) {
            let got = tar_at_far(&m, &[0.0, 0.01, 0.05, 0.2, 0.5, 1.0]).unwrap();
            let want: Vec<f64> = [0.0, 0.01, 0.05, 0.2, 0.5, 1.0].iter().map(|&f| tar_oracle(&m, f)).collect();
            assert_eq!(got, want, "{m:?}");
        }
    }
}

#[test]
fn rank1_agrees_with_argmax_on_random_5x8() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let g = labels(&["a", "b", "c", "d", "e"]);
        let p: Vec<String> = (0..8).map(|_| g[rng.random_range(0..5)].clone()).collect();
        let scores = (0..40).map(|_| rng.random::<f64>()).collect();
        let m = ScoreMatrix::new(scores, g, p, Channel::Fused).unwrap();
        assert_eq!(rank1(&m).unwrap().accuracy, rank1_oracle(&m));
    }
}

#[test]
fn adversarial_matrix_has_zero_rank1() {
    // Every probe's best entry belongs to the other subject.
    let m = ScoreMatrix::new(vec![0.1, 0.9, 0.9, 0.1], labels(&["a", "b"]), labels(&["a", "b"]), Channel::Fused)
        .unwrap();
    assert_eq!(rank1(&m).unwrap().accuracy, 0.0);
}

#[test]
fn inverted_scores_give_zero_tar_at_one_percent() {
    // 20 subjects, genuine pairs score lowest.
    let ids: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
    let scores = (0..400).map(|k| if k / 20 == k % 20 { 0.0 } else { 1.0 + k as f64 }).collect();
    let m = ScoreMatrix::new(scores, ids.clone(), ids, Channel::Fused).unwrap();
    assert_eq!(tar_at_far(&m, &[0.01]).unwrap(), vec![0.0]);
}

#[test]
fn tar_on_hand_labeled_thirty_pairs() {
    // 3 gallery × 10 probes = 30 pairs; probes i belong to subject i % 3.
    let g = labels(&["a", "b", "c"]);
    let p: Vec<String> = (0..10).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let scores: Vec<f64> = (0..30)
        .map(|k| {
            let genuine = g[k / 10] == p[k % 10];
            (if genuine { 0.3 } else { 0.0 }) + rng.random_range(0..10) as f64 / 10.0
        })
        .collect();
    let m = ScoreMatrix::new(scores, g, p, Channel::Fused).unwrap();
    for far in [0.0, 0.05, 0.1, 0.25, 0.5] {
        assert_eq!(tar_at_far(&m, &[far]).unwrap()[0], tar_oracle(&m, far), "far {far}");
    }
}

#[test]
fn metrics_invariant_under_monotone_transforms() {
    let maps: Vec<Box<dyn Fn(f64) -> f64>> = vec![
        Box::new(|x| 3.0 * x + 1.0),
        Box::new(|x| x * x * x + x),
        Box::new(|x| (4.0 * x).exp()),
        Box::new(|x| (x + 2.0).ln()),
        Box::new(|x| x.atan()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..40 {
        let m = random_matrix(&mut rng, 6, 6);
        for f in &maps {
            let t = m.map(f);
            assert_eq!(rank1(&m).unwrap(), rank1(&t).unwrap());
            assert_eq!(cmc(&m, 6).unwrap(), cmc(&t, 6).unwrap());
            if has_genuine_and_impostor(&m) {
                assert_eq!(tar_at_far(&m, &[0.01, 0.05, 0.3]).unwrap(), tar_at_far(&t, &[0.01, 0.05, 0.3]).unwrap());
            }
        }
    }
}

fn lsig(subject: &str, view: f64, sta: Vec<f32>, dy: Vec<f32>) -> LabeledSignature {
    LabeledSignature {
        record: SignatureRecord {
            source_id: format!("{subject}@{view}"),
            subject_id: subject.into(),
            condition_id: "c0".into(),
            view_deg: view,
            video_index: None,
            n_frames: 3,
        },
        signature: GaitSignature { f_sta: sta, f_dyn: dy, n_frames_used: 3 },
    }
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    d / (na * nb)
}

#[test]
fn three_by_three_matrix_matches_hand_computation() {
    let g = vec![
        lsig("a", 90.0, vec![1.0, 0.0], vec![1.0, 1.0]),
        lsig("b", 90.0, vec![0.0, 1.0], vec![1.0, -1.0]),
        lsig("c", 90.0, vec![1.0, 1.0], vec![2.0, 0.0]),
    ];
    let p = vec![
        lsig("a", 90.0, vec![2.0, 1.0], vec![1.0, 0.5]),
        lsig("b", 90.0, vec![-1.0, 3.0], vec![0.0, -1.0]),
        lsig("c", 90.0, vec![1.0, 0.9], vec![3.0, 1.0]),
    ];
    let (m, _) = build_score_matrix(&g, &p, 0.3).unwrap();
    let mut rs = vec![];
    let mut rd = vec![];
    for gi in &g {
        for pi in &p {
            rs.push(cos(&gi.signature.f_sta, &pi.signature.f_sta));
            rd.push(cos(&gi.signature.f_dyn, &pi.signature.f_dyn));
        }
    }
    let mm = |v: &[f64], x: f64| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (x - lo) / (hi - lo)
    };
    for k in 0..9 {
        let want = 0.7 * mm(&rs, rs[k]) + 0.3 * mm(&rd, rd[k]);
        assert!((m.scores[k] - want).abs() < 1e-9, "{k}: {} vs {want}", m.scores[k]);
    }
}

#[test]
fn self_similarity_puts_each_row_max_on_the_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let s: Vec<LabeledSignature> = (0..5)
        .map(|i| {
            lsig(
                &format!("s{i}"),
                90.0,
                (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    let (m, _) = build_score_matrix(&s, &s, 0.5).unwrap();
    for g in 0..5 {
        for p in 0..5 {
            assert!(m.get(g, g) >= m.get(g, p));
        }
    }
    assert!((m.get(0, 0) - 1.0).abs() < 1e-12);
}

#[test]
fn fused_entries_equal_match_score() {
    let g = vec![lsig("a", 90.0, vec![1.0, 0.2], vec![0.3, 1.0]), lsig("b", 90.0, vec![0.1, 1.0], vec![1.0, 0.1])];
    let p = vec![lsig("a", 90.0, vec![0.9, 0.3], vec![0.2, 0.8]), lsig("b", 90.0, vec![0.5, 0.5], vec![1.0, 1.0])];
    let mats = ScoreMatrices::build(&g, &p).unwrap();
    let fused = mats.fused(0.5).unwrap();
    for (i, gi) in g.iter().enumerate() {
        for (j, pj) in p.iter().enumerate() {
            let want = match_score(&gi.signature, &pj.signature, 0.5, &mats.normalizer).unwrap();
            assert_eq!(fused.get(i, j), want);
        }
    }
}

#[test]
fn alpha_extremes_bit_match_single_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mk = |rng: &mut ChaCha8Rng, s: &str| {
        lsig(
            s,
            90.0,
            (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    };
    let g: Vec<_> = ["a", "b", "c", "d"].iter().map(|s| mk(&mut rng, s)).collect();
    let p: Vec<_> = ["a", "b", "c", "d", "a"].iter().map(|s| mk(&mut rng, s)).collect();
    let mats = ScoreMatrices::build(&g, &p).unwrap();
    assert_eq!(mats.fused(0.0).unwrap().scores, mats.channel(Channel::Static, 0.7).unwrap().scores);
    assert_eq!(mats.fused(1.0).unwrap().scores, mats.channel(Channel::Dynamic, 0.7).unwrap().scores);

    let proto = ProtocolSpec { metrics: vec![Metric::Rank1, Metric::TarAtFar], ..synthetic_protocol() };
    let rows = alpha_sweep(&proto, &g, &p, &[0.0, 1.0]).unwrap();
    let st = evaluate(&proto, &g, &p, Channel::Static, 0.5).unwrap();
    let dy = evaluate(&proto, &g, &p, Channel::Dynamic, 0.5).unwrap();
    assert_eq!(rows[0].metrics, st.metrics);
    assert_eq!(rows[1].metrics, dy.metrics);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    assert_eq!(alpha_sweep(&proto, &g, &p, &grid).unwrap().len(), 11);
}

#[test]
fn dynamic_only_ranking_ignores_dynamic_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mk = |rng: &mut ChaCha8Rng, s: &str, k: f32| {
        lsig(
            s,
            90.0,
            (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..6).map(|_| k * rng.random_range(-1.0f32..1.0)).collect(),
        )
    };
    let g: Vec<_> = ["a", "b", "c"].iter().map(|s| mk(&mut rng, s, 1.0)).collect();
    let p: Vec<_> = ["a", "b", "c"].iter().map(|s| mk(&mut rng, s, 1.0)).collect();
    let scale = |xs: &[LabeledSignature], k: f32| -> Vec<LabeledSignature> {
        xs.iter()
            .cloned()
            .map(|mut x| {
                x.signature.f_dyn.iter_mut().for_each(|v| *v *= k);
                x
            })
            .collect()
    };
    let base = ScoreMatrices::build(&g, &p).unwrap().fused(1.0).unwrap();
    let scaled = ScoreMatrices::build(&scale(&g, 4.0), &scale(&p, 0.25)).unwrap().fused(1.0).unwrap();
    assert_eq!(rank1(&base).unwrap(), rank1(&scaled).unwrap());
    assert_eq!(cmc(&base, 3).unwrap(), cmc(&scaled, 3).unwrap());
}

#[test]
fn two_by_two_fusion_matches_hand_arithmetic() {
    // Raw cosines: sta [[1, 0], [0.6, 0.8]], dyn [[0, 1], [1, 0]].
    let g = vec![lsig("a", 90.0, vec![1.0, 0.0], vec![1.0, 0.0]), lsig("b", 90.0, vec![3.0, 4.0], vec![0.0, 1.0])];
    let p = vec![lsig("a", 90.0, vec![1.0, 0.0], vec![0.0, 1.0]), lsig("b", 90.0, vec![0.0, 1.0], vec![1.0, 0.0])];
    let (m, _) = build_score_matrix(&g, &p, 0.5).unwrap();
    // mm(sta) = [[1, 0], [0.6, 0.8]] (already spans [0, 1]); mm(dyn) unchanged.
    let want = [0.5 * 1.0 + 0.5 * 0.0, 0.5 * 0.0 + 0.5 * 1.0, 0.5 * 0.6 + 0.5 * 1.0, 0.5 * 0.8 + 0.5 * 0.0];
    for k in 0..4 {
        assert!((m.scores[k] - want[k]).abs() < 1e-9, "{:?}", m.scores);
    }
    let n = ScoreNormalizer::fit(&[1.0, 0.0, 0.6, 0.8], &[0.0, 1.0, 1.0, 0.0]);
    let s = match_score(&g[1].signature, &p[0].signature, 0.5, &n).unwrap();
    assert!((s - 0.8).abs() < 1e-9);
}

#[test]
fn cross_view_evaluation_skips_identical_views() {
    let mk = |s: &str, v: f64, x: f32| lsig(s, v, vec![1.0, x], vec![x, 1.0]);
    let g = vec![mk("a", 0.0, 0.1), mk("b", 0.0, 2.0), mk("a", 90.0, 0.2), mk("b", 90.0, 2.2)];
    let p = vec![mk("a", 0.0, 0.15), mk("b", 0.0, 2.1), mk("a", 90.0, 0.1), mk("b", 90.0, 2.0)];
    let proto = ProtocolSpec { cross_view: true, ..synthetic_protocol() };
    let r = evaluate(&proto, &g, &p, Channel::Fused, 0.5).unwrap();
    assert_eq!(r.n_view_pairs, 2);
    assert_eq!(r.metrics.rank1, Some(1.0));
}

#[test]
fn builtin_protocols_round_trip_and_validate() {
    let mut all = builtin_protocols();
    all.push(synthetic_protocol());
    let mut names: Vec<&str> = all.iter().map(|p| p.name.as_str()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), all.len());
    for p in &all {
        p.validate().unwrap();
        let back: ProtocolSpec = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(&back, p);
    }
    assert_eq!(all.iter().filter(|p| p.name.starts_with("fvg_")).count(), 5);
}

#[test]
fn overlapping_subject_sets_are_rejected() {
    let p = ProtocolSpec { test_subjects: SubjectSet::Range([10, 30]), ..synthetic_protocol() };
    match p.validate() {
        Err(EvalError::Protocol(msg)) => assert!(msg.contains("both")),
        other => panic!("{other:?}"),
    }
    let q = ProtocolSpec {
        train_subjects: SubjectSet::Ids(vec!["x".into(), "017".into()]),
        ..synthetic_protocol()
    };
    assert!(q.validate().is_err());
}

#[test]
fn protocol_file_loads_and_reports_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    std::fs::write(&path, synthetic_protocol().to_json()).unwrap();
    assert_eq!(ProtocolSpec::from_file(&path).unwrap(), synthetic_protocol());
    std::fs::write(&path, r#"{"name":"x","bogus":1}"#).unwrap();
    assert!(matches!(ProtocolSpec::from_file(&path), Err(EvalError::Protocol(_))));
}

proptest! {
    #[test]
    fn cmc_is_monotone_and_starts_at_rank1(seed in 0u64..10_000, ng in 1usize..7, np in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, ng, np);
        let c = cmc(&m, 6).unwrap();
        prop_assert_eq!(c[0], rank1(&m).unwrap().accuracy);
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*c.last().unwrap(), 1.0);
    }

    #[test]
    fn tar_is_monotone_in_far(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, 6, 6);
        prop_assume!(has_genuine_and_impostor(&m));
        let t = tar_at_far(&m, &[0.0, 0.1, 0.3, 0.6, 1.0]).unwrap();
        prop_assert!(t.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(t[4], 1.0);
    }

    #[test]
    fn subject_range_membership(lo in 0u64..50, len in 0u64..50, x in 0u64..120) {
        let s = SubjectSet::Range([lo, lo + len]);
        prop_assert_eq!(s.contains(&format!("{x:03}")), x >= lo && x <= lo + len);
    }
}
