//! Mixture synthesis from speech, noise and room-response pools.

mod augment;
mod manifest;
pub mod synth;

pub use augment::{spectral_augment, SpectralTilt, TILT_MAX_DB};
pub use manifest::{DatasetManifest, ManifestEntry, Pools, Role, Split};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::nn::{Dims, Real, Tensor};

/// SNR draw for one mixture.
#[derive(Clone, Debug, PartialEq)]
pub enum SnrProfile {
    /// Uniform over a finite set of values (dB).
    Discrete(Vec<f64>),
    /// Uniform over `[lo, hi]` dB.
    Uniform { lo: f64, hi: f64 },
}

impl SnrProfile {
    /// `{-5, -4, ..., 0}` dB.
    pub fn wsj0() -> Self {
        SnrProfile::Discrete((-5..=0).map(f64::from).collect())
    }

    /// Continuous `[-5, 25]` dB.
    pub fn dns() -> Self {
        SnrProfile::Uniform { lo: -5.0, hi: 25.0 }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            SnrProfile::Discrete(v) => v[rng.gen_range(0..v.len())],
            SnrProfile::Uniform { lo, hi } => rng.gen_range(*lo..=*hi),
        }
    }

    pub fn contains(&self, snr: f64) -> bool {
        match self {
            SnrProfile::Discrete(v) => v.contains(&snr),
            SnrProfile::Uniform { lo, hi } => (*lo..=*hi).contains(&snr),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SnrProfile::Discrete(v) if v.is_empty() => Err(Error::config("empty SNR set")),
            SnrProfile::Uniform { lo, hi } if !(lo <= hi) => Err(Error::config(format!("SNR range {lo}..{hi} is empty"))),
            _ => Ok(()),
        }
    }
}

/// Sampling recipe for training mixtures.
#[derive(Clone, Debug, PartialEq)]
pub struct MixConfig {
    pub sample_rate: u32,
    pub snr: SnrProfile,
    pub rir_prob: f64,
    pub compound_prob: f64,
    pub crop_seconds: f64,
    pub augment: bool,
    /// Leading part of the room response kept for the training target.
    pub direct_ms: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self::wsj0()
    }
}

impl MixConfig {
    /// Additive noise only, discrete SNRs.
    pub fn wsj0() -> Self {
        MixConfig {
            sample_rate: crate::dsp::SAMPLE_RATE,
            snr: SnrProfile::wsj0(),
            rir_prob: 0.0,
            compound_prob: 0.0,
            crop_seconds: 7.0,
            augment: false,
            direct_ms: 50.0,
        }
    }

    /// Wide SNR range with reverberation, compound noise and augmentation.
    pub fn dns() -> Self {
        MixConfig { snr: SnrProfile::dns(), rir_prob: 0.3, compound_prob: 0.05, augment: true, ..Self::wsj0() }
    }

    pub fn crop_samples(&self) -> usize {
        (self.crop_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("rir_prob", self.rir_prob), ("compound_prob", self.compound_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.crop_seconds > 0.0) {
            return Err(Error::config(format!("crop length {} s must be positive", self.crop_seconds)));
        }
        self.snr.validate()
    }
}

/// Every random choice behind one mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub speech: usize,
    pub noise: usize,
    /// Second noise added at equal power.
    pub compound: Option<usize>,
    pub rir: Option<usize>,
    pub snr_db: f64,
    pub crop_offset: usize,
    pub noise_seed: u64,
    pub augment_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub noisy: Vec<f32>,
    pub clean: Vec<f32>,
    pub spec: MixtureSpec,
}

fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Measured `10·log10(P_speech / P_noise)` over the whole signal.
pub fn measured_snr_db(speech: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(speech) / power(noise)).log10()
}

/// Scales `noise` (at least as long as `speech`; its head is used) so the
/// speech-to-noise power ratio is `snr_db`, and returns
/// `(speech + scaled noise, scaled noise)`. `+∞` gives silent noise.
pub fn mix_at_snr(speech: &[f64], noise: &[f64], snr_db: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if noise.len() < speech.len() {
        return Err(Error::Data(format!("noise of {} samples is shorter than speech ({})", noise.len(), speech.len())));
    }
    let noise = &noise[..speech.len()];
    let ps = power(speech);
    if ps == 0.0 {
        return Err(Error::Data("speech segment is silent".into()));
    }
    let gain = if snr_db == f64::INFINITY {
        0.0
    } else {
        let pn = power(noise);
        if pn == 0.0 || snr_db.is_nan() {
            return Err(Error::Data(format!("cannot reach {snr_db} dB with silent noise")));
        }
        (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt()
    };
    let scaled: Vec<f64> = noise.iter().map(|v| v * gain).collect();
    let mix = speech.iter().zip(&scaled).map(|(s, n)| s + n).collect();
    Ok((mix, scaled))
}

/// A `len`-sample excerpt of `noise`: a random crop when long enough,
/// otherwise the noise tiled from a random starting phase.
pub fn fit_noise<R: Rng>(noise: &[f64], len: usize, rng: &mut R) -> Result<Vec<f64>> {
    if noise.is_empty() {
        return Err(Error::Data("empty noise recording".into()));
    }
    if noise.len() >= len {
        let off = rng.gen_range(0..=noise.len() - len);
        Ok(noise[off..off + len].to_vec())
    } else {
        let off = rng.gen_range(0..noise.len());
        Ok((0..len).map(|i| noise[(off + i) % noise.len()]).collect())
    }
}

/// Linear convolution `a * b` truncated to `a.len()` samples.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; a.len()];
    }
    if a.len().min(b.len()) <= 64 {
        let mut y = vec![0.0; a.len()];
        for (i, &bv) in b.iter().enumerate() {
            for (o, &av) in y[i.min(a.len())..].iter_mut().zip(a) {
                *o += av * bv;
            }
        }
        return y;
    }
    let n = (a.len() + b.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |x: &[f64]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&r| Complex::new(r, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (lift(a), lift(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..a.len()].iter().map(|c| c.re / n as f64).collect()
}

fn unit_peak(x: &[f64]) -> Result<Vec<f64>> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::Data("room response is all zeros".into()));
    }
    Ok(x.iter().map(|v| v / peak).collect())
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Draws every random choice for one mixture. The number of draws does not
/// depend on their outcomes, so one example never shifts the next.
pub fn draw_spec<R: Rng>(pools: &Pools, cfg: &MixConfig, rng: &mut R) -> Result<MixtureSpec> {
    if pools.speech.is_empty() {
        return Err(Error::Data("speech pool is empty".into()));
    }
    if pools.noise.is_empty() {
        return Err(Error::Data("noise pool is empty".into()));
    }
    let speech = rng.gen_range(0..pools.speech.len());
    let noise = rng.gen_range(0..pools.noise.len());
    let compound_idx = rng.gen_range(0..pools.noise.len());
    let use_compound = rng.gen_bool(cfg.compound_prob);
    let rir_idx = if pools.rir.is_empty() { 0 } else { rng.gen_range(0..pools.rir.len()) };
    let use_rir = rng.gen_bool(cfg.rir_prob);
    let snr_db = cfg.snr.sample(rng);
    let crop = cfg.crop_samples();
    let len = pools.speech[speech].len();
    let crop_draw: u64 = rng.gen();
    let crop_offset = if len > crop { (crop_draw % (len - crop + 1) as u64) as usize } else { 0 };
    let noise_seed = rng.gen();
    let augment_seed: u64 = rng.gen();
    if use_rir && pools.rir.is_empty() {
        return Err(Error::Data("room-response pool is empty but rir_prob > 0".into()));
    }
    Ok(MixtureSpec {
        speech,
        noise,
        compound: use_compound.then_some(compound_idx),
        rir: use_rir.then_some(rir_idx),
        snr_db,
        crop_offset,
        noise_seed,
        augment_seed: cfg.augment.then_some(augment_seed),
    })
}

/// Builds the `(noisy, clean)` pair described by `spec`.
pub fn render(pools: &Pools, cfg: &MixConfig, spec: &MixtureSpec) -> Result<Example> {
    let src = &pools.speech.get(spec.speech).ok_or_else(|| Error::Data("speech index out of range".into()))?.samples;
    let crop = cfg.crop_samples();
    let end = (spec.crop_offset + crop).min(src.len());
    let dry = to_f64(&src[spec.crop_offset.min(end)..end]);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let (mut speech, mut clean) = match spec.rir {
        Some(i) => {
            let rir = unit_peak(&to_f64(&pools.rir[i].samples))?;
            let direct_len = ((cfg.direct_ms / 1000.0) * cfg.sample_rate as f64).round() as usize;
            let direct = unit_peak(&rir[..direct_len.min(rir.len())])?;
            (convolve(&dry, &rir), convolve(&dry, &direct))
        }
        None => (dry.clone(), dry),
    };
    let mut noise = fit_noise(&to_f64(&pools.noise[spec.noise].samples), speech.len(), &mut rng)?;
    if let Some(j) = spec.compound {
        let second = fit_noise(&to_f64(&pools.noise[j].samples), speech.len(), &mut rng)?;
        let (p1, p2) = (power(&noise), power(&second));
        if p2 > 0.0 {
            let g = if p1 > 0.0 { (p1 / p2).sqrt() } else { 1.0 };
            noise.iter_mut().zip(&second).for_each(|(n, s)| *n += g * s);
        }
    }
    if let Some(seed) = spec.augment_seed {
        let mut arng = ChaCha8Rng::seed_from_u64(seed);
        let tilt = SpectralTilt::random(&mut arng, cfg.sample_rate as f64);
        let filtered = tilt.filter(&speech);
        let g = augment::rms_gain(&speech, &filtered);
        speech = filtered.iter().map(|v| v * g).collect();
        clean = tilt.filter(&clean).iter().map(|v| v * g).collect();
        let noise_tilt = SpectralTilt::random(&mut arng, cfg.sample_rate as f64);
        noise = spectral_augment(&noise, &noise_tilt);
    }
    let (noisy, _) = mix_at_snr(&speech, &noise, spec.snr_db)?;
    Ok(Example {
        noisy: noisy.iter().map(|&v| v as f32).collect(),
        clean: clean.iter().map(|&v| v as f32).collect(),
        spec: spec.clone(),
    })
}

/// Draws and renders one example.
pub fn make_training_example<R: Rng>(pools: &Pools, cfg: &MixConfig, rng: &mut R) -> Result<Example> {
    let spec = draw_spec(pools, cfg, rng)?;
    render(pools, cfg, &spec)
}

/// Zero-padded batch with the valid length of every item.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `[B, 1, 1, L_max]`
    pub noisy: Tensor<T>,
    pub clean: Tensor<T>,
    /// `1` on valid samples, `0` on padding; same shape as `noisy`.
    pub mask: Tensor<T>,
    pub lens: Vec<usize>,
}

/// Pads every pair to the longest one in the batch.
pub fn batch_collate<T: Real>(pairs: &[(&[f32], &[f32])]) -> Result<Batch<T>> {
    if pairs.is_empty() {
        return Err(Error::Data("cannot collate an empty batch".into()));
    }
    let mut lens = Vec::with_capacity(pairs.len());
    for (n, c) in pairs {
        if n.len() != c.len() || n.is_empty() {
            return Err(Error::Data(format!("pair lengths {} / {} must match and be non-zero", n.len(), c.len())));
        }
        lens.push(n.len());
    }
    let max = *lens.iter().max().expect("non-empty");
    let dims = Dims::new(pairs.len(), 1, 1, max);
    let mut noisy = Tensor::zeros(dims);
    let mut clean = Tensor::zeros(dims);
    let mut mask = Tensor::zeros(dims);
    for (b, (n, c)) in pairs.iter().enumerate() {
        for i in 0..n.len() {
            noisy.set(b, 0, 0, i, T::lit(n[i] as f64));
            clean.set(b, 0, 0, i, T::lit(c[i] as f64));
            mask.set(b, 0, 0, i, T::one());
        }
    }
    Ok(Batch { noisy, clean, mask, lens })
}

pub fn collate_examples<T: Real>(examples: &[Example]) -> Result<Batch<T>> {
    let pairs: Vec<(&[f32], &[f32])> = examples.iter().map(|e| (&e.noisy[..], &e.clean[..])).collect();
    batch_collate(&pairs)
}
