//! Synthetic signals for tests and demos: voiced syllable trains and
//! impulsive or narrowband noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

fn peak_normalize(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Harmonic syllables with gliding pitch and two formant bumps, separated
/// by short pauses. Peak amplitude 0.5.
pub fn speech_like<R: Rng>(len: usize, sample_rate: f64, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut pos = (rng.gen_range(0.02..0.08) * sample_rate) as usize;
    while pos < len {
        let dur = (rng.gen_range(0.15..0.32) * sample_rate) as usize;
        let f0_start = rng.gen_range(100.0..220.0);
        let f0_end = f0_start * rng.gen_range(0.8..1.2);
        let f1 = rng.gen_range(300.0..800.0);
        let f2 = rng.gen_range(900.0..2200.0);
        let mut phase = 0.0f64;
        for i in 0..dur.min(len - pos) {
            let u = i as f64 / dur as f64;
            let f0 = f0_start + (f0_end - f0_start) * u;
            phase += 2.0 * std::f64::consts::PI * f0 / sample_rate;
            let env = (std::f64::consts::PI * u).sin().powi(2);
            let mut v = 0.0;
            for k in 1..=16 {
                let fk = f0 * k as f64;
                if fk > 0.45 * sample_rate {
                    break;
                }
                let formant = (-((fk - f1) / 150.0).powi(2)).exp() + 0.6 * (-((fk - f2) / 250.0).powi(2)).exp();
                v += (0.05 + formant) / k as f64 * (k as f64 * phase).sin();
            }
            out[pos + i] = env * v;
        }
        pos += dur + (rng.gen_range(0.04..0.12) * sample_rate) as usize;
    }
    peak_normalize(&mut out, 0.5);
    out
}

/// Sparse decaying clicks, about `rate` per second.
pub fn impulse_noise<R: Rng>(len: usize, sample_rate: f64, rate: f64, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let decay = (-1.0 / (0.002 * sample_rate)).exp();
    let p = rate / sample_rate;
    for i in 0..len {
        if rng.gen_bool(p.min(1.0)) {
            let amp = rng.gen_range(0.3..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut a = amp;
            for o in out[i..len.min(i + (0.02 * sample_rate) as usize)].iter_mut() {
                *o += a;
                a *= decay;
            }
        }
    }
    peak_normalize(&mut out, 0.5);
    out
}

/// White noise through a resonant band-pass (Q = 8) at a random centre in
/// 400 Hz – 3 kHz.
pub fn narrowband_noise<R: Rng>(len: usize, sample_rate: f64, rng: &mut R) -> Vec<f64> {
    let fc: f64 = rng.gen_range(400.0..3000.0);
    let w0 = 2.0 * std::f64::consts::PI * fc / sample_rate;
    let alpha = w0.sin() / (2.0 * 8.0);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let x0: f64 = normal.sample(rng);
            let y0 = b0 * x0 + b2 * x2 - a1 * y1 - a2 * y2;
            (x2, x1, y2, y1) = (x1, x0, y1, y0);
            y0
        })
        .collect();
    peak_normalize(&mut out, 0.5);
    out
}

/// Equal-power sum of impulsive and narrowband noise.
pub fn mixed_noise<R: Rng>(len: usize, sample_rate: f64, rng: &mut R) -> Vec<f64> {
    let imp = impulse_noise(len, sample_rate, 12.0, rng);
    let nb = narrowband_noise(len, sample_rate, rng);
    let p = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let g = if p(&nb) > 0.0 { (p(&imp) / p(&nb)).sqrt() } else { 0.0 };
    let mut out: Vec<f64> = imp.iter().zip(&nb).map(|(a, b)| a + g * b).collect();
    peak_normalize(&mut out, 0.5);
    out
}

/// Exponentially decaying noise tail behind a unit direct impulse.
pub fn room_response<R: Rng>(sample_rate: f64, rt60: f64, rng: &mut R) -> Vec<f64> {
    let len = (rt60 * sample_rate) as usize;
    let normal = Normal::new(0.0, 0.3).expect("valid normal");
    let tau = rt60 / 6.9 * sample_rate;
    let mut h: Vec<f64> = (0..len).map(|i| normal.sample(rng) * (-(i as f64) / tau).exp()).collect();
    if let Some(first) = h.first_mut() {
        *first = 1.0;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_are_bounded_and_deterministic() {
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (speech_like(32000, 16000.0, &mut rng), mixed_noise(32000, 16000.0, &mut rng))
        };
        let (s, n) = make();
        assert_eq!(make(), (s.clone(), n.clone()));
        assert!(s.iter().chain(&n).all(|v| v.abs() <= 0.5 + 1e-12));
        assert!(s.iter().any(|&v| v != 0.0) && n.iter().any(|&v| v != 0.0));
    }
}
