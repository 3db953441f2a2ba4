//! Random spectral tilt: an RBJ high-shelf biquad with slope 1, whose
//! magnitude response lies between 0 dB and its shelf gain at every frequency.

use rand::Rng;

/// Largest shelf gain magnitude drawn, in dB.
pub const TILT_MAX_DB: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralTilt {
    /// Normalized so that `a[0] == 1`.
    pub b: [f64; 3],
    pub a: [f64; 3],
    pub gain_db: f64,
    pub corner_hz: f64,
    pub sample_rate: f64,
}

impl SpectralTilt {
    pub fn high_shelf(gain_db: f64, corner_hz: f64, sample_rate: f64) -> Self {
        let amp = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * std::f64::consts::PI * corner_hz / sample_rate;
        let (sn, cs) = w0.sin_cos();
        let alpha = sn / 2.0 * std::f64::consts::SQRT_2;
        let k = 2.0 * amp.sqrt() * alpha;
        let b0 = amp * ((amp + 1.0) + (amp - 1.0) * cs + k);
        let b1 = -2.0 * amp * ((amp - 1.0) + (amp + 1.0) * cs);
        let b2 = amp * ((amp + 1.0) + (amp - 1.0) * cs - k);
        let a0 = (amp + 1.0) - (amp - 1.0) * cs + k;
        let a1 = 2.0 * ((amp - 1.0) - (amp + 1.0) * cs);
        let a2 = (amp + 1.0) - (amp - 1.0) * cs - k;
        SpectralTilt {
            b: [b0 / a0, b1 / a0, b2 / a0],
            a: [1.0, a1 / a0, a2 / a0],
            gain_db,
            corner_hz,
            sample_rate,
        }
    }

    /// Gain uniform in `±TILT_MAX_DB`, corner log-uniform in 300 Hz – 3 kHz.
    pub fn random<R: Rng>(rng: &mut R, sample_rate: f64) -> Self {
        let gain = rng.gen_range(-TILT_MAX_DB..=TILT_MAX_DB);
        let corner = 300.0 * 10f64.powf(rng.gen_range(0.0..=1.0));
        Self::high_shelf(gain, corner, sample_rate)
    }

    /// `20·log10 |H(e^{jω})|` at `freq_hz`.
    pub fn response_db(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / self.sample_rate;
        let eval = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
            (re * re + im * im).sqrt()
        };
        20.0 * (eval(&self.b) / eval(&self.a)).log10()
    }

    /// Direct-form I filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (b, a) = (self.b, self.a);
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = b[0] * x0 + b[1] * x1 + b[2] * x2 - a[1] * y1 - a[2] * y2;
                (x2, x1, y2, y1) = (x1, x0, y1, y0);
                y0
            })
            .collect()
    }
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

/// Gain restoring the RMS of `reference` on `filtered` (1 when silent).
pub(crate) fn rms_gain(reference: &[f64], filtered: &[f64]) -> f64 {
    let (r, f) = (rms(reference), rms(filtered));
    if r == 0.0 || f == 0.0 {
        1.0
    } else {
        r / f
    }
}

/// Filters `x` and restores its RMS.
pub fn spectral_augment(x: &[f64], tilt: &SpectralTilt) -> Vec<f64> {
    let y = tilt.filter(x);
    let g = rms_gain(x, &y);
    y.into_iter().map(|v| v * g).collect()
}
