//! Short-time objective intelligibility, following the published reference
//! procedure: 10 kHz internal rate, silent-frame removal, 15 one-third
//! octave bands from 150 Hz, 30-frame segments with clipping.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::nn::Real;

const FS: usize = 10_000;
const FRAME: usize = 256;
const NFFT: usize = 512;
const HOP: usize = FRAME / 2;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Rational 5/8 polyphase resampler with a Kaiser-windowed sinc low-pass
/// (half-length 10 periods of the slower rate, β = 5).
pub fn resample_16k_to_10k(x: &[f64]) -> Vec<f64> {
    let (p, q) = (5usize, 8usize);
    let m = p.max(q);
    let half = 10 * m;
    let taps = 2 * half + 1;
    let fc = 1.0 / (2.0 * m as f64);
    let beta = 5.0;
    let i0b = bessel_i0(beta);
    let h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - half as f64;
            let sinc = if t == 0.0 { 2.0 * fc } else { (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t) };
            let r = t / half as f64;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            p as f64 * sinc * w
        })
        .collect();
    let out_len = (x.len() * p).div_ceil(q);
    let mut y = vec![0.0; out_len];
    for (mi, out) in y.iter_mut().enumerate() {
        // Upsampled index of this output sample, shifted by the filter delay.
        let c = (mi * q + half) as isize;
        let j_lo = ((c - taps as isize + 1).max(0) as usize).div_ceil(p);
        let j_hi = ((c / p as isize) as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        if !x.is_empty() {
            for j in j_lo..=j_hi {
                let k = c - (j * p) as isize;
                if k >= 0 && (k as usize) < taps {
                    acc += x[j] * h[k as usize];
                }
            }
        }
        *out = acc;
    }
    y
}

/// `hanning(n + 2)[1:-1]`: the zero endpoints are excluded.
fn hann(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos()).collect()
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann(FRAME);
    if x.len() < FRAME {
        return (Vec::new(), Vec::new());
    }
    let starts: Vec<usize> = (0..=x.len() - FRAME).step_by(HOP).collect();
    let frame = |s: &[f64], i: usize| -> Vec<f64> { (0..FRAME).map(|k| s[i + k] * w[k]).collect() };
    let energy: Vec<f64> = starts
        .iter()
        .map(|&i| {
            let f = frame(x, i);
            20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10()
        })
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts.iter().zip(&energy).filter(|(_, &e)| e > max - DYN_RANGE_DB).map(|(&i, _)| i).collect();
    let out_len = if kept.is_empty() { 0 } else { (kept.len() - 1) * HOP + FRAME };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (k, &i) in kept.iter().enumerate() {
        let (fx, fy) = (frame(x, i), frame(y, i));
        for j in 0..FRAME {
            xs[k * HOP + j] += fx[j];
            ys[k * HOP + j] += fy[j];
        }
    }
    (xs, ys)
}

/// Power spectra `[frames][NFFT/2 + 1]` of Hann frames at hop `FRAME / 2`.
fn power_spectra(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann(FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let mut out = Vec::new();
    let mut start = 0;
    while start + FRAME < x.len() {
        let mut buf: Vec<Complex<f64>> = (0..NFFT)
            .map(|k| Complex::new(if k < FRAME { x[start + k] * w[k] } else { 0.0 }, 0.0))
            .collect();
        fft.process(&mut buf);
        out.push(buf[..=NFFT / 2].iter().map(|c| c.norm_sqr()).collect());
        start += HOP;
    }
    out
}

/// Bin ranges `[lo, hi)` of the one-third octave bands.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).powi(2).total_cmp(&(b.1 - target).powi(2)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    (0..BANDS)
        .map(|k| {
            let lo = MIN_FREQ * 2f64.powf((2.0 * k as f64 - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k as f64 + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn band_envelopes(spec: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands.iter().map(|&(lo, hi)| spec.iter().map(|frame| frame[lo..hi].iter().sum::<f64>().sqrt()).collect()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Intelligibility of `processed` against `clean`, both at 16 kHz. Needs at
/// least 30 analysis frames of non-silent speech (about 0.4 s).
pub fn stoi<T: Real>(clean: &[T], processed: &[T]) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::Signal(format!("length mismatch: {} vs {}", clean.len(), processed.len())));
    }
    let x = resample_16k_to_10k(&clean.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
    let y = resample_16k_to_10k(&processed.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
    let (x, y) = remove_silent_frames(&x, &y);
    let (sx, sy) = (power_spectra(&x), power_spectra(&y));
    if sx.len() < SEGMENT {
        return Err(Error::Signal(format!(
            "too short for STOI: {} active frames, need {SEGMENT}",
            sx.len()
        )));
    }
    let bands = third_octave_bands();
    let (ex, ey) = (band_envelopes(&sx, &bands), band_envelopes(&sy, &bands));
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let segments = sx.len() - SEGMENT + 1;
    for m in 0..segments {
        for b in 0..BANDS {
            let xs = &ex[b][m..m + SEGMENT];
            let ys = &ey[b][m..m + SEGMENT];
            let alpha = norm(xs) / (norm(ys) + EPS);
            let yp: Vec<f64> = ys.iter().zip(xs).map(|(&yv, &xv)| (yv * alpha).min(xv * clip)).collect();
            let my = yp.iter().sum::<f64>() / SEGMENT as f64;
            let mx = xs.iter().sum::<f64>() / SEGMENT as f64;
            let yc: Vec<f64> = yp.iter().map(|v| v - my).collect();
            let xc: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let (ny, nx) = (norm(&yc) + EPS, norm(&xc) + EPS);
            total += yc.iter().zip(&xc).map(|(a, b)| (a / ny) * (b / nx)).sum::<f64>();
        }
    }
    Ok(total / (segments * BANDS) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampler_keeps_low_tones() {
        let x: Vec<f64> = (0..16000).map(|i| (2.0 * std::f64::consts::PI * 500.0 * i as f64 / 16000.0).sin()).collect();
        let y = resample_16k_to_10k(&x);
        assert_eq!(y.len(), 10000);
        for (i, &v) in y.iter().enumerate().skip(200).take(9600) {
            let want = (2.0 * std::f64::consts::PI * 500.0 * i as f64 / 10000.0).sin();
            assert!((v - want).abs() < 1e-2, "sample {i}: {v} vs {want}");
        }
    }

    #[test]
    fn bands_are_ordered() {
        let b = third_octave_bands();
        assert_eq!(b.len(), 15);
        assert!(b.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].0 < w[0].1));
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(stoi(&[0.1f64; 3000], &[0.1f64; 3000]).is_err());
    }
}
