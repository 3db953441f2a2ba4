//! Shared oracles for the integration tests and the acceptance run.
#![allow(dead_code)]

use dbnet::loss::{objective, LossConfig, LossKind};
use dbnet::model::{forward, init_model, ModelConfig, Outputs};
use dbnet::nn::{BnMode, BnStats, ConvGeom, Dims, GatedVars, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step and pass threshold for the wide-precision checks.
pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

pub fn random(dims: Dims, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(dims, (0..dims.numel()).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// `sum(y ⊙ r)` for a fixed random `r`, turning any output into a scalar.
pub fn project(tape: &mut Tape<f64>, y: &Var<f64>, seed: u64) -> Var<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(random(y.dims(), 1.0, &mut rng));
    let p = tape.mul(y, &r).unwrap();
    tape.sum(&p)
}

pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

/// Worst relative error over all inputs of a scalar function.
pub fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var<f64>]) -> Var<f64>) -> f64 {
    let mut tape = Tape::new();
    let leaves: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&mut tape, &leaves);
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape.grad_of(&y, &leaves[i]).unwrap();
        let eval = |k: usize, d: f64| {
            let mut t = Tape::new();
            let vars: Vec<Var<f64>> = inputs
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    let mut x = x.clone();
                    if j == i {
                        x.data_mut()[k] += d;
                    }
                    t.leaf(x)
                })
                .collect();
            f(&mut t, &vars).value().data()[0]
        };
        let numeric: Vec<f64> = (0..input.numel()).map(|k| (eval(k, H) - eval(k, -H)) / (2.0 * H)).collect();
        worst = worst.max(rel_err(analytic.data(), &numeric));
    }
    worst
}

pub fn conv2d_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(Dims::new(2, 3, 4, 9), 1.0, &mut rng);
    let w = random(Dims::new(2, 3, 2, 3), 0.5, &mut rng);
    let b = random(Dims::new(1, 2, 1, 1), 0.5, &mut rng);
    
    check(&[x, w, b], |t, v| {
        let y = t.conv2d(&v[0], &v[1], &v[2], ConvGeom::new((1, 2), (1, 1))).unwrap();
        project(t, &y, 9)
    })
}

pub fn gated_conv_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(Dims::new(2, 2, 3, 8), 1.0, &mut rng);
    let w1 = random(Dims::new(3, 2, 2, 3), 0.5, &mut rng);
    let b1 = random(Dims::new(1, 3, 1, 1), 0.5, &mut rng);
    let w2 = random(Dims::new(3, 2, 2, 3), 0.5, &mut rng);
    let b2 = random(Dims::new(1, 3, 1, 1), 0.5, &mut rng);
    
    check(&[x, w1, b1, w2, b2], |t, v| {
        let p = GatedVars { w1: &v[1], b1: &v[2], w2: &v[3], b2: &v[4] };
        let y = t.gated_conv(&v[0], p, ConvGeom::new((1, 2), (0, 1))).unwrap();
        project(t, &y, 10)
    })
}

pub fn gated_deconv_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(Dims::new(2, 3, 3, 4), 1.0, &mut rng);
    let w1 = random(Dims::new(3, 2, 2, 3), 0.5, &mut rng);
    let b1 = random(Dims::new(1, 2, 1, 1), 0.5, &mut rng);
    let w2 = random(Dims::new(3, 2, 2, 3), 0.5, &mut rng);
    let b2 = random(Dims::new(1, 2, 1, 1), 0.5, &mut rng);
    
    check(&[x, w1, b1, w2, b2], |t, v| {
        let p = GatedVars { w1: &v[1], b1: &v[2], w2: &v[3], b2: &v[4] };
        let y = t.gated_deconv(&v[0], p, (1, 2)).unwrap();
        project(t, &y, 11)
    })
}

pub fn batch_norm_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(Dims::new(2, 3, 4, 5), 1.0, &mut rng);
    let gamma = random(Dims::new(1, 3, 1, 1), 1.0, &mut rng);
    let beta = random(Dims::new(1, 3, 1, 1), 1.0, &mut rng);
    
    check(&[x, gamma, beta], |t, v| {
        let mut stats = BnStats::new(3);
        let y = t.batch_norm(&v[0], &v[1], &v[2], &mut stats, BnMode::Train).unwrap();
        project(t, &y, 12)
    })
}

pub fn lstm_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (input, hidden) = (5, 4);
    let x = random(Dims::new(2, 1, 6, input), 1.0, &mut rng);
    let w_ih = random(Dims::new(1, 1, 4 * hidden, input), 0.5, &mut rng);
    let w_hh = random(Dims::new(1, 1, 4 * hidden, hidden), 0.5, &mut rng);
    let bias = random(Dims::new(1, 1, 1, 4 * hidden), 0.5, &mut rng);
    
    check(&[x, w_ih, w_hh, bias], |t, v| {
        let (y, _) = t.lstm(&v[0], &v[1], &v[2], &v[3], None).unwrap();
        project(t, &y, 13)
    })
}

pub fn bridge_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(Dims::new(2, 3, 2, 6), 1.0, &mut rng);
    let m = random(Dims::new(1, 1, 6, 6), 1.0, &mut rng);
    
    check(&[x, m], |t, v| {
        let y = t.feature_matmul(&v[0], &v[1]).unwrap();
        project(t, &y, 14)
    })
}

pub fn loss_inputs(seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Dims::new(2, 1, 1, 40);
    vec![random(d, 1.0, &mut rng), random(d, 1.0, &mut rng), random(d, 1.0, &mut rng), random(d, 1.0, &mut rng)]
}

/// Every primitive check, by name.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", conv2d_error()),
        ("gated_conv", gated_conv_error()),
        ("gated_deconv", gated_deconv_error()),
        ("batch_norm", batch_norm_error()),
        ("lstm", lstm_error()),
        ("bridge", bridge_error()),
        ("mag_loss", magnitude_loss_error()),
        ("pcm_loss", phase_constrained_loss_error()),
    ]
}

pub fn magnitude_loss_error() -> f64 {
    let cfg = LossConfig { kind: LossKind::Mag, frame_len: 16, hop: 8, speech_weight: 0.5 };
    
    check(&loss_inputs(7), |t, v| {
        let out = Outputs { time: v[2].clone(), freq: v[3].clone() };
        objective(t, &cfg, &v[0], &v[1], &out, &[40, 29]).unwrap()
    })
}

pub fn phase_constrained_loss_error() -> f64 {
    let cfg = LossConfig { kind: LossKind::Pcm, frame_len: 16, hop: 8, speech_weight: 0.5 };
    
    check(&loss_inputs(8), |t, v| {
        let out = Outputs { time: v[2].clone(), freq: v[3].clone() };
        objective(t, &cfg, &v[0], &v[1], &out, &[33, 40]).unwrap()
    })
}

/// Smallest network that still exercises every layer type.
pub fn tiny_config() -> ModelConfig {
    ModelConfig { frame_len: 16, hop: 8, layers: 2, channels: 4, kernel: (2, 3), seed: 3, ..ModelConfig::wsj0() }
}

/// End-to-end check on sampled entries of every parameter tensor.
pub fn full_network_error(kind: LossKind) -> f64 {
    let cfg = tiny_config();
    let mut model = init_model::<f64>(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = Dims::new(2, 1, 1, 40);
    let mut noisy = random(d, 1.0, &mut rng);
    let clean = random(d, 0.5, &mut rng);
    for i in 33..40 {
        noisy.set(1, 0, 0, i, 0.0);
    }
    let lens = [40, 33];
    let loss_cfg = LossConfig { kind, frame_len: 16, hop: 8, speech_weight: 0.5 };
    let eval = |model: &mut dbnet::Model<f64>, record: bool| -> f64 {
        let mut tape = Tape::new();
        let loss = {
            let mut view = model.view(BnMode::Train).unwrap();
            let out = forward(&mut tape, &mut view, &noisy).unwrap();
            let nv = tape.constant(noisy.clone());
            let cv = tape.constant(clean.clone());
            objective(&mut tape, &loss_cfg, &nv, &cv, &out, &lens).unwrap()
        };
        if record {
            tape.backward(&loss, &mut model.params).unwrap();
        }
        loss.value().data()[0]
    };
    model.params.zero_grad();
    eval(&mut model, true);
    let ids: Vec<_> = model.params.ids().collect();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for id in ids {
        let n = model.params.get(id).value.numel();
        for k in [0, n / 2, n - 1] {
            analytic.push(model.params.get(id).grad.data()[k]);
            let orig = model.params.get(id).value.data()[k];
            model.params.get_mut(id).value.data_mut()[k] = orig + H;
            let up = eval(&mut model, false);
            model.params.get_mut(id).value.data_mut()[k] = orig - H;
            let down = eval(&mut model, false);
            model.params.get_mut(id).value.data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
    }
    rel_err(&analytic, &numeric)
}

pub fn small_cfg(frame_len: usize, layers: usize, channels: usize, kernel: (usize, usize), groups: usize) -> ModelConfig {
    ModelConfig { frame_len, hop: frame_len / 2, layers, channels, kernel, lstm_groups: groups, ..ModelConfig::wsj0() }
}

/// The three configurations the closed forms are checked on.
pub fn accounting_configs() -> [ModelConfig; 3] {
    [small_cfg(16, 2, 4, (1, 3), 2), small_cfg(32, 3, 6, (2, 3), 2), small_cfg(64, 2, 8, (2, 5), 4)]
}

/// Hand-derived parameter count.
pub fn params_closed_form(c: &ModelConfig) -> usize {
    let ch = c.channels;
    let (kt, kf) = c.kernel;
    let k = kt * kf;
    let gated = |cin: usize, cout: usize| 2 * (cout * cin * k + cout) + 2 * cout;
    let fb = c.frame_len >> c.layers;
    let w = ch * fb / c.lstm_groups;
    let mut branch = gated(2, ch) + (c.layers - 1) * gated(2 * ch, ch);
    branch += c.lstm_layers * c.lstm_groups * (8 * w * w + 4 * w);
    branch += c.layers * gated(3 * ch, ch);
    branch += ch * k + 1;
    let bridges: usize = (0..c.layers).map(|l| 2 * (c.frame_len >> l).pow(2) + 2 * (fb << l).pow(2)).sum();
    2 * branch + bridges
}

/// Hand-derived MACs per frame under the documented convention.
pub fn macs_closed_form(c: &ModelConfig) -> u64 {
    let ch = c.channels;
    let k = c.kernel.0 * c.kernel.1;
    let n = c.frame_len;
    let fb = n >> c.layers;
    let w = ch * fb / c.lstm_groups;
    let mut branch = 0;
    for l in 0..c.layers {
        let cin = if l == 0 { 2 } else { 2 * ch };
        branch += 2 * ch * cin * k * (n >> (l + 1));
        branch += 2 * ch * 3 * ch * k * (fb << l);
    }
    branch += c.lstm_layers * c.lstm_groups * 4 * (w * w + w * w);
    branch += ch * k * n;
    let mut bridges = 0;
    for l in 0..c.layers {
        let ce = if l == 0 { 1 } else { ch };
        bridges += 2 * ce * (n >> l).pow(2) + 2 * ch * (fb << l).pow(2);
    }
    (2 * branch + bridges) as u64
}

pub fn wave(x: Vec<f64>) -> dbnet::dsp::Waveform {
    dbnet::dsp::Waveform::new(x.into_iter().map(|v| v as f32).collect())
}

/// Small synthetic speech, noise and room-response pools.
pub fn synth_pools(seed: u64) -> dbnet::data::Pools {
    use dbnet::data::synth;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = 16000.0;
    dbnet::data::Pools {
        speech: (0..3).map(|_| wave(synth::speech_like(24000, sr, &mut rng))).collect(),
        noise: (0..3).map(|_| wave(synth::mixed_noise(20000, sr, &mut rng))).collect(),
        rir: (0..2).map(|_| wave(synth::room_response(sr, 0.3, &mut rng))).collect(),
    }
}
