use gaitdis_core::evalkit::LinearProbe;
use gaitdis_core::nets::{FRAME_C, FRAME_H, FRAME_W};
use gaitdis_core::synthgait::*;
use proptest::prelude::*;
use std::f64::consts::TAU;

fn side_spec() -> FactorSpec {
    FactorSpec {
        identity: IdentityFactors { limb_length_ratio: 1.2, torso_width: 5.0, height_ratio: 0.8 },
        appearance: AppearanceFactors { hue: 0.1, texture_id: 1, brightness: 0.8 },
        gait: GaitFactors { phase_offset: 0.0, cadence: 1.0 / 16.0, amplitude: 0.5 },
        view_deg: 90.0,
        speed: 1.0,
        n_frames: 32,
    }
}

fn nonzero_mask(frame: &[f32]) -> Vec<bool> {
    frame.chunks(FRAME_C).map(|px| px.iter().any(|&v| v != 0.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn appearance_changes_never_move_the_silhouette(
        hue in 0.0f64..1.0,
        texture in 0u8..N_TEXTURES,
        brightness in 0.55f64..1.0,
        seed in 0u64..100,
    ) {
        let base = side_spec();
        let mut other = base;
        other.appearance = AppearanceFactors { hue, texture_id: texture, brightness };
        let a = generate(&base, seed).unwrap();
        let b = generate(&other, seed).unwrap();
        for (fa, fb) in a.clip.frames.iter().zip(&b.clip.frames) {
            prop_assert_eq!(nonzero_mask(fa.data()), nonzero_mask(fb.data()));
        }
    }
}

#[test]
fn hue_change_recolors_pixels_on_an_identical_mask() {
    let a = generate(&side_spec(), 3).unwrap();
    let mut s = side_spec();
    s.appearance.hue = 0.6;
    let b = generate(&s, 3).unwrap();
    let mut differing = 0;
    for (fa, fb) in a.clip.frames.iter().zip(&b.clip.frames) {
        assert_eq!(nonzero_mask(fa.data()), nonzero_mask(fb.data()));
        differing += fa.data().iter().zip(fb.data()).filter(|(x, y)| x != y).count();
    }
    assert!(differing > 1000, "{differing}");
}

#[test]
fn phase_offset_shifts_the_sequence_cyclically() {
    let base = side_spec();
    let period = (1.0 / base.gait.cadence).round() as usize;
    let a = generate(&base, 9).unwrap();
    for k in [1, 5, 11] {
        let mut s = base;
        s.gait.phase_offset = TAU * base.gait.cadence * k as f64;
        let b = generate(&s, 9).unwrap();
        for t in 0..period {
            let u = (t + k) % period;
            let max_diff = b.clip.frames[t]
                .data()
                .iter()
                .zip(a.clip.frames[u].data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            // Phases agree up to float rounding, which can flip a handful
            // of boundary subpixels.
            assert!(max_diff <= 1.0 / 16.0 + 1e-6, "offset {k} frame {t}: {max_diff}");
            assert!((b.per_frame_phase[t] - a.per_frame_phase[u]).abs().min(TAU - (b.per_frame_phase[t] - a.per_frame_phase[u]).abs()) < 1e-9);
        }
    }
}

#[test]
fn per_frame_phase_advances_by_cadence() {
    let lc = generate(&side_spec(), 0).unwrap();
    assert_eq!(lc.per_frame_phase.len(), lc.clip.frames.len());
    for w in lc.per_frame_phase.windows(2) {
        let step = (w[1] - w[0]).rem_euclid(TAU);
        assert!((step - TAU / 16.0).abs() < 1e-9);
    }
}

#[test]
fn conditions_share_identity_and_gait_but_redraw_appearance() {
    let ds = make_dataset(8, 2, 2, 11, &DatasetOptions::default()).unwrap();
    assert_eq!(ds.clips.len(), 32);
    assert_eq!(ds.subjects.len(), 8);
    for s in &ds.subjects {
        let clips: Vec<_> = ds.clips.iter().filter(|c| c.clip.subject_id == s.subject).collect();
        assert_eq!(clips.len(), 4);
        for c in &clips {
            assert_eq!(c.factors.identity, s.identity);
            assert_eq!((c.factors.gait.cadence, c.factors.gait.amplitude), (s.cadence, s.amplitude));
        }
        assert_ne!(s.conditions[0].1, s.conditions[1].1);
    }
    for (i, a) in ds.subjects.iter().enumerate() {
        for b in &ds.subjects[i + 1..] {
            assert!(a.identity.distance(&b.identity) >= MIN_IDENTITY_SEPARATION);
        }
    }
    let again = make_dataset(8, 2, 2, 11, &DatasetOptions::default()).unwrap();
    assert_eq!(ds.clips, again.clips);
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Mean and median covered width per row and covered height, averaged
/// over the clip.
fn silhouette_widths(lc: &LabeledClip) -> Vec<f64> {
    let mut acc = [0.0; 3];
    for cov in &lc.coverage {
        let widths: Vec<f64> = (0..FRAME_H)
            .map(|y| cov[y * FRAME_W..(y + 1) * FRAME_W].iter().map(|&c| c as f64).sum())
            .filter(|&w| w > 0.5)
            .collect();
        let mut sorted = widths.clone();
        sorted.sort_by(f64::total_cmp);
        acc[0] += widths.iter().sum::<f64>() / widths.len() as f64;
        acc[1] += sorted[sorted.len() / 2];
        acc[2] += widths.len() as f64;
    }
    acc.iter().map(|v| v / lc.coverage.len() as f64).collect()
}

#[test]
fn torso_width_is_recoverable_from_silhouette_widths() {
    let ds = make_dataset(40, 1, 1, 5, &DatasetOptions::default()).unwrap();
    let x: Vec<Vec<f64>> = ds.clips.iter().map(silhouette_widths).collect();
    let y: Vec<Vec<f64>> = ds.clips.iter().map(|c| vec![c.factors.identity.torso_width]).collect();
    let probe = LinearProbe::fit(&x, &y, 1e-6).unwrap();
    let pred: Vec<f64> = probe.predict(&x).unwrap().into_iter().map(|r| r[0]).collect();
    let truth: Vec<f64> = y.iter().map(|r| r[0]).collect();
    let rho = pearson(&ranks(&pred), &ranks(&truth));
    assert!(rho > 0.9, "rank correlation {rho}");
}
