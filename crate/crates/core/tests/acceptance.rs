//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! Exits non-zero when a criterion fails, unless it is listed in
//! `DOCUMENTED_GAPS` (see the README for what those are and why).

mod common;

use std::time::{Duration, Instant};

use dbnet::data::{batch_collate, make_training_example, measured_snr_db, mix_at_snr, synth, MixConfig, SnrProfile};
use dbnet::data::draw_spec;
use dbnet::dsp::{frame_padded, overlap_add, SrsBasis, WindowKind};
use dbnet::io::{count_macs, count_params, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use dbnet::loss::{mag_loss, pcm_loss, si_sdr, total_loss, LossConfig, LossKind};
use dbnet::model::{
    branch_inputs, flush_streaming, forward_frames, forward_streaming, init_model, Branches, Model, ModelConfig, NetState,
    StreamState,
};
use dbnet::nn::{BnMode, Dims, Tape, Tensor};
use dbnet::train::{TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria allowed to fail without failing the run.
const DOCUMENTED_GAPS: &[u32] = &[6];

const TRANSFORM_TOL: f64 = 1e-6;
const TRANSFORM_BUDGET: Duration = Duration::from_secs(10);
const GRADIENT_BUDGET: Duration = Duration::from_secs(120);
const STREAM_TOL: f64 = 1e-5;
const STREAM_BUDGET: Duration = Duration::from_secs(60);
const OVERFIT_LOSS_RATIO: f64 = 0.1;
const OVERFIT_GAIN_DB: f64 = 8.0;
const OVERFIT_BUDGET: Duration = Duration::from_secs(30 * 60);
const PARAM_RANGE: (usize, usize) = (2_000_000, 3_800_000);
const SNR_TOL_DB: f64 = 0.01;
/// Two-sided 99 % normal quantile for the binomial intervals.
const Z99: f64 = 2.5758293035489;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300)
}

fn transforms() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let basis = SrsBasis::<f32>::new(320).unwrap();
    let mut srs_worst: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f32> = (0..320).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = basis.inverse(&basis.forward(&x).unwrap()).unwrap();
        let to64 = |v: &[f32]| v.iter().map(|&s| s as f64).collect::<Vec<_>>();
        srs_worst = srs_worst.max(rel(&to64(&back), &to64(&x)));
    }
    let mut ola_worst: f64 = 0.0;
    for i in 0..1000 {
        let len = rng.gen_range(320..4000);
        let x: Vec<f32> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kind = if i % 2 == 0 { WindowKind::Hamming } else { WindowKind::Rectangular };
        let frames = frame_padded(&x, kind, 320, 160).unwrap();
        let back = overlap_add(&frames, len).unwrap();
        let to64 = |v: &[f32]| v.iter().map(|&s| s as f64).collect::<Vec<_>>();
        ola_worst = ola_worst.max(rel(&to64(&back), &to64(&x)));
    }
    let mut ortho_worst: f64 = 0.0;
    for n in [8usize, 16, 320] {
        let m = SrsBasis::<f32>::new(n).unwrap();
        let m = m.matrix();
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| m[i * n + k] as f64 * m[j * n + k] as f64).sum();
                ortho_worst = ortho_worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    let secs = t0.elapsed();
    let pass = srs_worst <= TRANSFORM_TOL && ola_worst <= TRANSFORM_TOL && ortho_worst <= TRANSFORM_TOL && secs < TRANSFORM_BUDGET;
    outcome(
        pass,
        format!(
            "f32: SRS round trip {srs_worst:.2e}, OLA round trip {ola_worst:.2e}, orthonormality {ortho_worst:.2e} (tol {TRANSFORM_TOL:.0e}); {:.2} s (< {} s)",
            secs.as_secs_f64(),
            TRANSFORM_BUDGET.as_secs()
        ),
    )
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut errs = common::primitive_errors();
    errs.push(("network(mag)", common::full_network_error(LossKind::Mag)));
    errs.push(("network(pcm)", common::full_network_error(LossKind::Pcm)));
    let secs = t0.elapsed();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let list: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        worst <= common::TOL && secs < GRADIENT_BUDGET,
        format!("worst {worst:.2e} (tol {:.0e}, f64, h {:.0e}): {}; {:.1} s", common::TOL, common::H, list.join(", "), secs.as_secs_f64()),
    )
}

fn shape_ladder() -> Outcome {
    let cfg = ModelConfig::wsj0();
    let mut model: Model<f32> = init_model(&cfg).unwrap();
    let srs = SrsBasis::<f32>::new(cfg.frame_len).unwrap().as_tensor();
    let frames = 3;
    let len = (frames - 1) * cfg.hop + cfg.frame_len;
    let x = Tensor::from_vec(Dims::new(1, 1, 1, len), vec![0.1f32; len]).unwrap();
    let [xt, xf] = branch_inputs(&x, &cfg, &srs).unwrap();
    let mut tape = Tape::inference();
    let (xt, xf) = (tape.constant(xt), tape.constant(xf));
    let mut state = NetState::traced(&cfg);
    let mut view = model.view(BnMode::Infer).unwrap();
    forward_frames(&mut tape, &mut view, [&xt, &xf], &mut state, Branches::Both).unwrap();
    let trace = state.trace();
    let get = |name: &str| trace.iter().find(|(n, _)| n == name).map(|(_, d)| *d);
    let mut bad = Vec::new();
    for b in ["time", "freq"] {
        let mut want = vec![(format!("{b}.glstm"), Dims::new(1, 64, frames, 5)), (format!("{b}.out"), Dims::new(1, 1, frames, 320))];
        for l in 1..=6 {
            want.push((format!("{b}.enc{l}"), Dims::new(1, 64, frames, 320 >> l)));
            want.push((format!("{b}.dec{l}"), Dims::new(1, 64, frames, 5 << l)));
        }
        for (name, d) in want {
            if get(&name) != Some(d) {
                bad.push(format!("{name}: {:?}", get(&name)));
            }
        }
    }
    let bottleneck = get("freq.glstm").map(|d| d.to_array());
    let restored = get("freq.dec6").map(|d| d.features);
    outcome(
        bad.is_empty(),
        format!("bottleneck {bottleneck:?}, decoder output features {restored:?}, {} mismatches {bad:?}", bad.len()),
    )
}

fn causality() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for kt in [1usize, 2] {
        let cfg = ModelConfig { kernel: (kt, 3), ..ModelConfig::wsj0() };
        let frozen = init_model::<f32>(&cfg).unwrap().freeze().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(400 + kt as u64);
        let len = 8000;
        let x: Vec<f32> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let (t0, f0) = frozen.enhance(&x).unwrap();
        for p in [1000usize, 3217, 6400] {
            let mut y = x.clone();
            y[p..].iter_mut().for_each(|v| *v += 0.25);
            let (t1, f1) = frozen.enhance(&y).unwrap();
            let safe = p + 1 - cfg.frame_len;
            let same = t0[..safe] == t1[..safe] && f0[..safe] == f1[..safe];
            let moved = f0[p..] != f1[p..];
            pass &= same && moved;
            if !same {
                notes.push(format!("kt={kt} p={p} leaked"));
            }
        }
    }
    let cfg = ModelConfig::wsj0();
    let frozen = init_model::<f32>(&cfg).unwrap().freeze().unwrap();
    let mut state = StreamState::new(&cfg);
    let first = forward_streaming(&mut state, &frozen, &[0.1f32; 319]).unwrap().len();
    let second = forward_streaming(&mut state, &frozen, &[0.1f32]).unwrap().len();
    let latency = count_macs(&cfg).unwrap().latency_ms;
    let dns_latency = count_macs(&ModelConfig::dns()).unwrap().latency_ms;
    pass &= first == 0 && second == cfg.hop && latency == 30.0 && dns_latency == 30.0;
    outcome(
        pass,
        format!(
            "future perturbation bit-exact for kT in {{1, 2}} {}; output after 319 samples {first}, after 320 {second}; latency {latency} ms (DNS {dns_latency} ms, required exactly 30)",
            if notes.is_empty() { "ok".to_string() } else { notes.join(", ") }
        ),
    )
}

fn streaming() -> Outcome {
    let t0 = Instant::now();
    let cfg = ModelConfig::wsj0();
    let frozen = init_model::<f32>(&cfg).unwrap().freeze().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut worst: f64 = 0.0;
    let mut lengths_ok = true;
    for _ in 0..10 {
        let len = 48000;
        let x: Vec<f32> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let (t_off, f_off) = frozen.enhance(&x).unwrap();
        let mut state = StreamState::new(&cfg);
        let (mut t, mut f) = (Vec::with_capacity(len), Vec::with_capacity(len));
        let mut pos = 0;
        while pos < len {
            let step = rng.gen_range(1..=2000).min(len - pos);
            let c = forward_streaming(&mut state, &frozen, &x[pos..pos + step]).unwrap();
            t.extend(c.time);
            f.extend(c.freq);
            pos += step;
        }
        let c = flush_streaming(&mut state, &frozen).unwrap();
        t.extend(c.time);
        f.extend(c.freq);
        lengths_ok &= t.len() == len && f.len() == len;
        for (s, o) in [(&t, &t_off), (&f, &f_off)] {
            let peak = o.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64)).max(1e-30);
            let dev = s.iter().zip(o.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs() as f64));
            worst = worst.max(dev / peak);
        }
    }
    let secs = t0.elapsed();
    outcome(
        lengths_ok && worst <= STREAM_TOL && secs < STREAM_BUDGET,
        format!(
            "10 random 3 s inputs, chunks 1..2000 samples: max relative deviation {worst:.2e} (tol {STREAM_TOL:.0e}); lengths match {lengths_ok}; {:.1} s (< {} s)",
            secs.as_secs_f64(),
            STREAM_BUDGET.as_secs()
        ),
    )
}

fn overfit() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let items: Vec<(Vec<f32>, Vec<f32>)> = (0..10)
        .map(|_| {
            let s = synth::speech_like(32000, 16000.0, &mut rng);
            let n = synth::mixed_noise(32000, 16000.0, &mut rng);
            let (mix, _) = mix_at_snr(&s, &n, 0.0).unwrap();
            (mix.iter().map(|&v| v as f32).collect(), s.iter().map(|&v| v as f32).collect())
        })
        .collect();
    let cfg = ModelConfig { channels: 16, ..ModelConfig::wsj0() };
    let lc = LossConfig::default();
    let eval = |m: &Model<f32>| {
        let fz = m.freeze().unwrap();
        let (mut loss, mut sdr) = (0.0, 0.0);
        for (noisy, clean) in &items {
            let (t, f) = fz.enhance(noisy).unwrap();
            loss += total_loss(clean, &t, &f, &lc).unwrap() as f64;
            sdr += si_sdr(clean, &f).unwrap();
        }
        (loss / items.len() as f64, sdr / items.len() as f64)
    };
    let noisy_sdr = items.iter().map(|(n, c)| si_sdr(c, n).unwrap()).sum::<f64>() / items.len() as f64;
    let model: Model<f32> = init_model(&cfg).unwrap();
    let (loss0, _) = eval(&model);
    // Minibatches of 2 cycle through the 10 items; a full batch per step does
    // not fit the time budget on one core.
    let batch = 2;
    let mut trainer = Trainer::new(model, TrainConfig { batch, ..Default::default() }).unwrap();
    for step in 0..500usize {
        let refs: Vec<(&[f32], &[f32])> = (0..batch)
            .map(|k| {
                let (a, b) = &items[(step * batch + k) % items.len()];
                (&a[..], &b[..])
            })
            .collect();
        trainer.step_batch(&batch_collate(&refs).unwrap()).unwrap();
    }
    let (loss1, sdr1) = eval(&trainer.model);
    let secs = t0.elapsed();
    let ratio = loss1 / loss0;
    let gain = sdr1 - noisy_sdr;
    outcome(
        ratio <= OVERFIT_LOSS_RATIO && gain >= OVERFIT_GAIN_DB && secs <= OVERFIT_BUDGET,
        format!(
            "total_loss {loss0:.4} -> {loss1:.4} (ratio {ratio:.3}, need <= {OVERFIT_LOSS_RATIO}); freq SI-SDR {sdr1:.2} dB vs noisy {noisy_sdr:.2} dB (gain {gain:.2} dB, need >= {OVERFIT_GAIN_DB}); {:.0} s (<= {} s)",
            secs.as_secs_f64(),
            OVERFIT_BUDGET.as_secs()
        ),
    )
}

fn accounting() -> Outcome {
    let mut pass = true;
    for c in common::accounting_configs() {
        pass &= count_params(&c).unwrap().total == common::params_closed_form(&c);
        let r = count_macs(&c).unwrap();
        pass &= r.macs_per_frame == common::macs_closed_form(&c);
        pass &= r.macs_per_second == r.macs_per_frame as f64 * c.sample_rate as f64 / c.hop as f64;
    }
    let closed_forms = pass;
    let p = count_params(&ModelConfig::wsj0()).unwrap();
    pass &= (PARAM_RANGE.0..=PARAM_RANGE.1).contains(&p.total);
    let groups: Vec<String> = p.groups.iter().map(|(k, v)| format!("{k} {v}")).collect();
    let dns = count_macs(&ModelConfig::dns()).unwrap();
    outcome(
        pass,
        format!(
            "closed forms on 3 configs exact: {closed_forms}; WSJ0 profile {} params vs 2.9M reported (range [{}, {}]) [{}]; DNS profile {:.3} G MACs/s vs 2.847 G reported",
            p.total,
            PARAM_RANGE.0,
            PARAM_RANGE.1,
            groups.join(", "),
            dns.macs_per_second / 1e9
        ),
    )
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let s: Vec<f64> = (0..8000).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let noisy: Vec<f64> = s.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
    let est_t: Vec<f64> = s.iter().map(|v| 0.7 * v + rng.gen_range(-0.1..0.1)).collect();
    let est_f: Vec<f64> = s.iter().map(|v| 0.9 * v + rng.gen_range(-0.1..0.1)).collect();
    let neg: Vec<f64> = s.iter().map(|v| -v).collect();
    let mag = LossConfig::new(LossKind::Mag);
    let pcm = LossConfig::new(LossKind::Pcm);
    let same = mag_loss(&s, &s, &mag).unwrap();
    let negated = mag_loss(&s, &neg, &mag).unwrap();
    let perfect = pcm_loss(&noisy, &s, &s, &pcm).unwrap();
    let base = si_sdr(&s, &est_f).unwrap();
    let scaled = [0.5, 2.0, 8.0].iter().all(|k| {
        let e: Vec<f64> = est_f.iter().map(|v| v * k).collect();
        si_sdr(&s, &e).unwrap() == base
    });
    let total = total_loss(&s, &est_t, &est_f, &mag).unwrap();
    let parts = mag_loss(&s, &est_t, &mag).unwrap() + mag_loss(&s, &est_f, &mag).unwrap();
    let pass = same == 0.0 && negated == 0.0 && perfect == 0.0 && scaled && total == parts;
    outcome(
        pass,
        format!(
            "mag(s,s) {same:e}, mag(s,-s) {negated:e}, pcm(perfect) {perfect:e}, SI-SDR scale-invariant exactly {scaled}, total == sum of branches {}",
            total == parts
        ),
    )
}

fn binomial_ci(p: f64, n: usize) -> (f64, f64) {
    let half = Z99 * (p * (1.0 - p) / n as f64).sqrt();
    (p - half, p + half)
}

fn mixing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let pools = common::synth_pools(901);
    let mut worst: f64 = 0.0;
    for profile in [SnrProfile::wsj0(), SnrProfile::dns()] {
        for augment in [false, true] {
            let cfg = MixConfig { snr: profile.clone(), rir_prob: 0.0, compound_prob: 0.0, crop_seconds: 1.0, augment, ..MixConfig::wsj0() };
            for _ in 0..100 {
                let ex = make_training_example(&pools, &cfg, &mut rng).unwrap();
                let clean: Vec<f64> = ex.clean.iter().map(|&v| v as f64).collect();
                let noise: Vec<f64> = ex.noisy.iter().zip(&clean).map(|(&a, b)| a as f64 - b).collect();
                worst = worst.max((measured_snr_db(&clean, &noise) - ex.spec.snr_db).abs());
            }
        }
        for snr in match &profile {
            SnrProfile::Discrete(v) => v.clone(),
            _ => (0..=30).map(|k| -5.0 + k as f64).collect(),
        } {
            let s = synth::speech_like(8000, 16000.0, &mut rng);
            let n = synth::mixed_noise(8000, 16000.0, &mut rng);
            let (_, scaled) = mix_at_snr(&s, &n, snr).unwrap();
            worst = worst.max((measured_snr_db(&s, &scaled) - snr).abs());
        }
    }
    let cfg = MixConfig::dns();
    let draws = 10_000;
    let (mut rir, mut compound) = (0usize, 0usize);
    for _ in 0..draws {
        let spec = draw_spec(&pools, &cfg, &mut rng).unwrap();
        rir += spec.rir.is_some() as usize;
        compound += spec.compound.is_some() as usize;
    }
    let (r, c) = (rir as f64 / draws as f64, compound as f64 / draws as f64);
    let (rci, cci) = (binomial_ci(0.30, draws), binomial_ci(0.05, draws));
    let pass = worst <= SNR_TOL_DB && (rci.0..=rci.1).contains(&r) && (cci.0..=cci.1).contains(&c);
    outcome(
        pass,
        format!(
            "worst SNR error {worst:.2e} dB (tol {SNR_TOL_DB}); RIR rate {r:.4} in [{:.4}, {:.4}]; compound rate {c:.4} in [{:.4}, {:.4}] ({draws} draws, 99% CI)",
            rci.0, rci.1, cci.0, cci.1
        ),
    )
}

fn persistence() -> Outcome {
    let cfg = ModelConfig { frame_len: 64, hop: 32, layers: 3, channels: 4, kernel: (2, 3), seed: 11, ..ModelConfig::wsj0() };
    let pools = common::synth_pools(1001);
    let mix = MixConfig { crop_seconds: 0.25, ..MixConfig::dns() };
    let tc = TrainConfig { batch: 2, seed: 1002, ..Default::default() };
    let bits = |m: &Model<f32>| m.params.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();

    let mut straight = Trainer::new(init_model(&cfg).unwrap(), tc).unwrap();
    let mut losses_a = Vec::new();
    for _ in 0..50 {
        losses_a.push(straight.step(&pools, &mix).unwrap());
    }

    let mut first = Trainer::new(init_model(&cfg).unwrap(), tc).unwrap();
    let mut losses_b = Vec::new();
    for _ in 0..25 {
        losses_b.push(first.step(&pools, &mix).unwrap());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.dbnc");
    save_checkpoint(&path, &first.model, &first.state()).unwrap();
    let (loaded, state) = load_checkpoint(&path).unwrap();
    let file_exact = bits(&loaded) == bits(&first.model)
        && loaded.bn == first.model.bn
        && state == first.state()
        && encode_checkpoint(&loaded, &state).unwrap() == std::fs::read(&path).unwrap();
    let mut resumed = Trainer::resume(loaded, state, tc).unwrap();
    for _ in 0..25 {
        losses_b.push(resumed.step(&pools, &mix).unwrap());
    }
    let resume_exact = bits(&resumed.model) == bits(&straight.model)
        && resumed.model.bn == straight.model.bn
        && resumed.adam == straight.adam
        && losses_a.iter().map(|v| v.to_bits()).eq(losses_b.iter().map(|v| v.to_bits()));
    let reencoded = {
        let bytes = encode_checkpoint(&straight.model, &straight.state()).unwrap();
        let (m, s) = decode_checkpoint(&bytes).unwrap();
        encode_checkpoint(&m, &s).unwrap() == bytes
    };
    outcome(
        file_exact && resume_exact && reencoded,
        format!("save/load bit-exact {file_exact}; 25+25 resumed steps equal 50 uninterrupted bit-for-bit {resume_exact}; decode/encode fixed point {reencoded}"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "transform correctness", transforms),
        (2, "gradient suite", gradients),
        (3, "shape ladder", shape_ladder),
        (4, "causality and latency", causality),
        (5, "streaming equals offline", streaming),
        (6, "desk-scale overfit", overfit),
        (7, "accounting", accounting),
        (8, "loss identities", loss_identities),
        (9, "mixing", mixing),
        (10, "persistence", persistence),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = run();
        let gap = DOCUMENTED_GAPS.contains(&id);
        let verdict = match (o.pass, gap) {
            (true, _) => "PASS",
            (false, true) => "FAIL (documented gap)",
            (false, false) => "FAIL",
        };
        println!("criterion {id:>2} {name}: {verdict} | {}", o.detail);
        if !o.pass && !gap {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
