//! Training objectives on STFT magnitudes and evaluation metrics.

mod stoi;

pub use stoi::{resample_16k_to_10k, stoi};

use serde::{Deserialize, Serialize};

use crate::dsp::{frame_padded, window, DftBasis, WindowKind, FRAME_LEN, HOP};
use crate::error::{Error, Result};
use crate::model::Outputs;
use crate::nn::{Backward, Dims, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Magnitude loss on both branch outputs.
    #[default]
    Mag,
    /// Phase-constrained magnitude loss: speech and residual-noise terms.
    Pcm,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mag" => Ok(LossKind::Mag),
            "pcm" => Ok(LossKind::Pcm),
            other => Err(Error::config(format!("unknown loss '{other}' (expected mag or pcm)"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mag => "mag",
            LossKind::Pcm => "pcm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub frame_len: usize,
    pub hop: usize,
    /// Weight of the speech term in the phase-constrained loss; the noise
    /// term gets the complement.
    pub speech_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { kind: LossKind::Mag, frame_len: FRAME_LEN, hop: HOP, speech_weight: 0.5 }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.speech_weight) {
            return Err(Error::config(format!("speech weight {} outside [0, 1]", self.speech_weight)));
        }
        if self.frame_len == 0 || self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::config(format!("invalid loss framing {}/{}", self.frame_len, self.hop)));
        }
        Ok(())
    }
}

/// Per-item spectra of the valid region: `rows × 2K` (real then imaginary).
struct Spectra<T> {
    spec: Vec<T>,
    /// Frame count of each batch item.
    frames: Vec<usize>,
}

fn spectra<T: Real>(x: &Tensor<T>, lens: &[usize], basis: &DftBasis<T>, hop: usize) -> Result<Spectra<T>> {
    let len = x.dims().features;
    let n = basis.n();
    let mut rows = Vec::new();
    let mut frames = Vec::with_capacity(lens.len());
    for (item, &valid) in x.data().chunks(len).zip(lens) {
        let fm = frame_padded(&item[..valid], WindowKind::Hamming, n, hop)?;
        frames.push(fm.frames);
        rows.extend(fm.data);
    }
    let mut spec = vec![T::zero(); rows.len() / n * 2 * basis.bins()];
    basis.apply(&rows, &mut spec);
    Ok(Spectra { spec, frames })
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

struct MagBackward<T> {
    dims: Dims,
    lens: Vec<usize>,
    frames: Vec<usize>,
    hop: usize,
    basis: DftBasis<T>,
    /// d loss / d spectrum for the estimate and the reference.
    coef: [Vec<T>; 2],
}

impl<T: Real> MagBackward<T> {
    fn to_signal(&self, coef: &[T], scale: T) -> Tensor<T> {
        let n = self.basis.n();
        let len = self.dims.features;
        let w: Vec<T> = window(WindowKind::Hamming, n);
        let mut gframes = vec![T::zero(); coef.len() / (2 * self.basis.bins()) * n];
        self.basis.apply_adjoint(coef, &mut gframes);
        let mut out = Tensor::zeros(self.dims);
        let mut row = 0;
        for (b, (&frames, &valid)) in self.frames.iter().zip(&self.lens).enumerate() {
            let dst = &mut out.data_mut()[b * len..(b + 1) * len];
            for t in 0..frames {
                let g = &gframes[(row + t) * n..(row + t + 1) * n];
                let base = t * self.hop;
                for i in 0..n.min(valid.saturating_sub(base)) {
                    dst[base + i] += g[i] * w[i] * scale;
                }
            }
            row += frames;
        }
        out
    }
}

impl<T: Real> Backward<T> for MagBackward<T> {
    fn backward(&self, dy: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = dy.data()[0];
        vec![Some(self.to_signal(&self.coef[0], g)), Some(self.to_signal(&self.coef[1], g))]
    }
}

fn check_batch<T: Real>(est: &Tensor<T>, reference: &Tensor<T>, lens: &[usize]) -> Result<()> {
    let d = est.dims();
    if d != reference.dims() {
        return Err(Error::dim(format!("loss operands differ: {d:?} vs {:?}", reference.dims())));
    }
    if d.channels != 1 || d.frames != 1 {
        return Err(Error::dim(format!("loss expects waveforms [B, 1, 1, L], got {d:?}")));
    }
    if lens.len() != d.batch || d.batch == 0 {
        return Err(Error::dim(format!("{} valid lengths for a batch of {}", lens.len(), d.batch)));
    }
    if let Some(&bad) = lens.iter().find(|&&l| l == 0 || l > d.features) {
        return Err(Error::dim(format!("valid length {bad} outside 1..={}", d.features)));
    }
    Ok(())
}

/// Batch magnitude loss on `[B, 1, 1, L]` waveforms, each item evaluated over
/// its first `lens[b]` samples and the per-item losses averaged:
///
/// `(1/(T·F)) Σ_t Σ_f | (|S_r| + |S_i|) − (|Ŝ_r| + |Ŝ_i|) |`
///
/// The result is differentiable with respect to both operands.
pub fn mag_loss_var<T: Real>(
    tape: &mut Tape<T>,
    est: &Var<T>,
    reference: &Var<T>,
    lens: &[usize],
    frame_len: usize,
    hop: usize,
) -> Result<Var<T>> {
    check_batch(est.value(), reference.value(), lens)?;
    let basis = DftBasis::new(frame_len);
    let k = basis.bins();
    let se = spectra(est.value(), lens, &basis, hop)?;
    let sr = spectra(reference.value(), lens, &basis, hop)?;
    let batch = T::lit(lens.len() as f64);
    let mut total = T::zero();
    let mut ce = vec![T::zero(); se.spec.len()];
    let mut cr = vec![T::zero(); sr.spec.len()];
    let mut row = 0;
    for &frames in &se.frames {
        let scale = T::one() / (T::lit((frames * k) as f64) * batch);
        let mut item = T::zero();
        for t in row..row + frames {
            let e = &se.spec[t * 2 * k..(t + 1) * 2 * k];
            let r = &sr.spec[t * 2 * k..(t + 1) * 2 * k];
            for f in 0..k {
                let diff = (e[f].abs() + e[k + f].abs()) - (r[f].abs() + r[k + f].abs());
                item += diff.abs();
                let s = sign(diff) * scale;
                ce[t * 2 * k + f] = s * sign(e[f]);
                ce[t * 2 * k + k + f] = s * sign(e[k + f]);
                cr[t * 2 * k + f] = -s * sign(r[f]);
                cr[t * 2 * k + k + f] = -s * sign(r[k + f]);
            }
        }
        total += item * scale;
        row += frames;
    }
    let back = MagBackward { dims: est.dims(), lens: lens.to_vec(), frames: se.frames, hop, basis, coef: [ce, cr] };
    Ok(tape.custom(Tensor::scalar(total), &[est, reference], Box::new(back)))
}

fn waveform_pair<T: Real>(a: &[T], b: &[T]) -> Result<(Tensor<T>, Tensor<T>)> {
    if a.len() != b.len() {
        return Err(Error::Signal(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Signal("empty signal".into()));
    }
    let d = Dims::new(1, 1, 1, a.len());
    Ok((Tensor::from_vec(d, a.to_vec())?, Tensor::from_vec(d, b.to_vec())?))
}

/// Magnitude loss between a clean signal `s` and an estimate `s_hat`.
pub fn mag_loss<T: Real>(s: &[T], s_hat: &[T], cfg: &LossConfig) -> Result<T> {
    let (st, et) = waveform_pair(s, s_hat)?;
    let mut tape = Tape::inference();
    let (sv, ev) = (tape.constant(st), tape.constant(et));
    let l = mag_loss_var(&mut tape, &ev, &sv, &[s.len()], cfg.frame_len, cfg.hop)?;
    Ok(l.value().data()[0])
}

/// Sum of the per-branch magnitude losses.
pub fn total_loss<T: Real>(s: &[T], s_time: &[T], s_freq: &[T], cfg: &LossConfig) -> Result<T> {
    Ok(mag_loss(s, s_time, cfg)? + mag_loss(s, s_freq, cfg)?)
}

/// `w·L(s, ŝ) + (1 − w)·L(n, n̂)` with `n = noisy − s` and `n̂ = noisy − ŝ`.
pub fn pcm_loss<T: Real>(noisy: &[T], s: &[T], s_hat: &[T], cfg: &LossConfig) -> Result<T> {
    if noisy.len() != s.len() {
        return Err(Error::Signal(format!("length mismatch: {} vs {}", noisy.len(), s.len())));
    }
    let n: Vec<T> = noisy.iter().zip(s).map(|(&x, &c)| x - c).collect();
    let n_hat: Vec<T> = noisy.iter().zip(s_hat).map(|(&x, &e)| x - e).collect();
    let w = T::lit(cfg.speech_weight);
    Ok(w * mag_loss(s, s_hat, cfg)? + (T::one() - w) * mag_loss(&n, &n_hat, cfg)?)
}

/// Training objective on a batch: the configured loss applied to both
/// branch outputs and summed.
pub fn objective<T: Real>(
    tape: &mut Tape<T>,
    cfg: &LossConfig,
    noisy: &Var<T>,
    clean: &Var<T>,
    out: &Outputs<T>,
    lens: &[usize],
) -> Result<Var<T>> {
    let (n, hop) = (cfg.frame_len, cfg.hop);
    let mut terms = Vec::with_capacity(2);
    for est in [&out.time, &out.freq] {
        let term = match cfg.kind {
            LossKind::Mag => mag_loss_var(tape, est, clean, lens, n, hop)?,
            LossKind::Pcm => {
                let speech = mag_loss_var(tape, est, clean, lens, n, hop)?;
                let noise = tape.sub(noisy, clean)?;
                let noise_hat = tape.sub(noisy, est)?;
                let residual = mag_loss_var(tape, &noise_hat, &noise, lens, n, hop)?;
                let a = tape.scale(&speech, T::lit(cfg.speech_weight));
                let b = tape.scale(&residual, T::lit(1.0 - cfg.speech_weight));
                tape.add(&a, &b)?
            }
        };
        terms.push(term);
    }
    tape.add(&terms[0], &terms[1])
}

pub const SI_SDR_CAP_DB: f64 = 60.0;

/// Scale-invariant SDR in dB, clamped to `±SI_SDR_CAP_DB`.
pub fn si_sdr<T: Real>(s: &[T], s_hat: &[T]) -> Result<f64> {
    if s.len() != s_hat.len() {
        return Err(Error::Signal(format!("length mismatch: {} vs {}", s.len(), s_hat.len())));
    }
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum::<f64>();
    let ss = dot(s, s);
    if ss == 0.0 {
        return Err(Error::Signal("SI-SDR reference is silent".into()));
    }
    let alpha = dot(s_hat, s) / ss;
    let mut target = 0.0;
    let mut resid = 0.0;
    for (&r, &e) in s.iter().zip(s_hat) {
        let t = alpha * r.as_f64();
        target += t * t;
        let d = e.as_f64() - t;
        resid += d * d;
    }
    let db = 10.0 * (target / resid).log10();
    Ok(if db.is_nan() { -SI_SDR_CAP_DB } else { db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB) })
}

/// Per-utterance scores with aggregates.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub names: Vec<String>,
    pub si_sdr_db: Vec<f64>,
    pub stoi: Vec<f64>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, si_sdr_db: f64, stoi: f64) {
        self.names.push(name.into());
        self.si_sdr_db.push(si_sdr_db);
        self.stoi.push(stoi);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// `(mean, population std)` of SI-SDR and STOI.
    pub fn aggregate(&self) -> ((f64, f64), (f64, f64)) {
        (mean_std(&self.si_sdr_db), mean_std(&self.stoi))
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, f: f64) -> Vec<f64> {
        (0..len).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin() * 0.5).collect()
    }

    #[test]
    fn identical_and_negated_give_zero() {
        let cfg = LossConfig::default();
        let s = tone(1600, 440.0);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(mag_loss(&s, &s, &cfg).unwrap(), 0.0);
        assert!(mag_loss(&s, &neg, &cfg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sisdr_caps_and_scale_invariance() {
        let s = tone(800, 300.0);
        assert_eq!(si_sdr(&s, &s).unwrap(), 60.0);
        let scaled: Vec<f64> = s.iter().map(|v| 2.5 * v).collect();
        assert_eq!(si_sdr(&s, &scaled).unwrap(), 60.0);
        assert!(si_sdr(&[0.0; 4], &[1.0; 4]).is_err());
    }

    #[test]
    fn loss_kind_parses() {
        assert_eq!("pcm".parse::<LossKind>().unwrap(), LossKind::Pcm);
        assert!("l2".parse::<LossKind>().is_err());
    }
}
