use dbnet::dsp::{
    frame_count, frame_padded, frame_signal, overlap_add, padded_len, srs_forward, srs_inverse, stft, window, SrsBasis,
    WindowKind,
};
use proptest::prelude::*;

/// Independent DCT-IV evaluated term by term.
fn dct4(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let mut acc = 0.0;
            for (i, &v) in x.iter().enumerate() {
                acc += v * (std::f64::consts::PI / n * (i as f64 + 0.5) * (k as f64 + 0.5)).cos();
            }
            (2.0 / n).sqrt() * acc
        })
        .collect()
}

#[test]
fn basis_is_orthonormal() {
    for n in [8, 16, 320] {
        let b = SrsBasis::<f64>::new(n).unwrap();
        let m = b.matrix();
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() <= 1e-12, "n={n} ({i},{j}) {dot}");
            }
        }
    }
}

#[test]
fn forward_matches_direct_sum() {
    let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
    let got = srs_forward(&x).unwrap();
    for (a, b) in got.iter().zip(dct4(&x)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn frame_count_for_one_second() {
    assert_eq!(frame_count(16000, 320, 160), 99);
    assert_eq!(padded_len(16000, 320, 160), 16000);
    assert_eq!(frame_count(16001, 320, 160), 100);
}

#[test]
fn hamming_overlap_sum_is_constant_in_the_interior() {
    let w: Vec<f64> = window(WindowKind::Hamming, 320);
    for i in 0..160 {
        let s = w[i] + w[i + 160];
        assert!((s - 1.08).abs() < 0.005, "{i}: {s}");
    }
}

#[test]
fn stft_matches_naive_dft() {
    let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64).collect();
    let spec = stft(&x, 16, 8).unwrap();
    let w: Vec<f64> = window(WindowKind::Hamming, 16);
    for t in [0usize, 3, 6] {
        for k in [0usize, 1, 5, 8] {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..16 {
                let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / 16.0;
                re += x[t * 8 + i] * w[i] * a.cos();
                im += x[t * 8 + i] * w[i] * a.sin();
            }
            let m = (re * re + im * im).sqrt();
            assert!((spec.magnitude(t, k) - m).abs() < 1e-10, "t={t} k={k}");
        }
    }
}

#[test]
fn short_signals_fail_exact_framing() {
    assert!(frame_signal(&[0.0f64; 100], WindowKind::Rectangular, 320, 160).is_err());
    assert_eq!(frame_padded(&[0.0f64; 100], WindowKind::Rectangular, 320, 160).unwrap().frames, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn srs_round_trip(x in prop::collection::vec(-1.0f64..1.0, 32)) {
        let back = srs_inverse(&srs_forward(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ola_round_trip(len in 1usize..2000, seed in 0u64..1000, hamming in any::<bool>()) {
        let kind = if hamming { WindowKind::Hamming } else { WindowKind::Rectangular };
        let x: Vec<f64> = (0..len).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0) - 1.0).collect();
        let fm = frame_padded(&x, kind, 64, 32).unwrap();
        let y = overlap_add(&fm, len).unwrap();
        prop_assert_eq!(y.len(), len);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
