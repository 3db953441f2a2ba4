//! Signal front and back end: framing, windows, overlap-add, the real-valued
//! spectral transform fed to the frequency branch, and the STFT used by the
//! loss.

mod frames;
mod srs;
mod stft;

pub use frames::{frame_count, frame_padded, frame_signal, overlap_add, overlap_sum, padded_len, FrameMatrix};
pub use srs::{srs_forward, srs_inverse, SrsBasis};
pub use stft::{stft, ComplexSpec, DftBasis};

use crate::nn::Real;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 320;
pub const HOP: usize = 160;

/// Smallest overlap-sum used as an OLA divisor.
pub const OLA_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WindowKind {
    Rectangular,
    /// `0.54 − 0.46·cos(2πn/(N−1))`
    Hamming,
}

pub fn window<T: Real>(kind: WindowKind, n: usize) -> Vec<T> {
    match kind {
        WindowKind::Rectangular => vec![T::one(); n],
        WindowKind::Hamming => {
            if n == 1 {
                return vec![T::one()];
            }
            (0..n)
                .map(|i| {
                    let x = 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
                    T::lit(0.54 - 0.46 * x.cos())
                })
                .collect()
        }
    }
}

/// Mono audio at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Self {
        Waveform { samples, sample_rate: SAMPLE_RATE }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_edges_and_center() {
        let w: Vec<f64> = window(WindowKind::Hamming, 320);
        assert!((w[0] - 0.08).abs() < 1e-12);
        assert!((w[319] - 0.08).abs() < 1e-12);
        for (i, &v) in w.iter().enumerate() {
            let want = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / 319.0).cos();
            assert!((v - want).abs() < 1e-15);
        }
    }
}
