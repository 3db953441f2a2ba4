mod common;

use common::{accounting_configs, macs_closed_form, params_closed_form, small_cfg};
use dbnet::dsp::Waveform;
use dbnet::error::{CheckpointSection, Error};
use dbnet::io::{
    count_macs, count_params, decode_checkpoint, encode_checkpoint, load_checkpoint, read_wav, save_checkpoint,
    write_wav, TrainState,
};
use dbnet::loss::LossKind;
use dbnet::model::{init_model, Model, ModelConfig};
use dbnet::nn::{AdamConfig, AdamState};

#[test]
fn parameter_counts_match_closed_form() {
    for c in accounting_configs() {
        let got = count_params(&c).unwrap();
        assert_eq!(got.total, params_closed_form(&c), "{c:?}");
        let model: Model<f32> = init_model(&c).unwrap();
        assert_eq!(model.params.num_scalars(), got.total);
    }
}

#[test]
fn mac_counts_match_closed_form() {
    for c in accounting_configs() {
        let r = count_macs(&c).unwrap();
        assert_eq!(r.macs_per_frame, macs_closed_form(&c), "{c:?}");
        assert_eq!(r.macs_per_second, r.macs_per_frame as f64 * 16000.0 / c.hop as f64);
    }
}

#[test]
fn doubling_channels_quadruples_inner_kernels() {
    let a = count_params(&small_cfg(32, 2, 4, (1, 3), 2)).unwrap();
    let b = count_params(&small_cfg(32, 2, 8, (1, 3), 2)).unwrap();
    let dec = |p: &dbnet::io::ParamBreakdown| p.groups["time.decoder"] as f64;
    let ratio = dec(&b) / dec(&a);
    assert!((3.8..=4.0).contains(&ratio), "{ratio}");
}

#[test]
fn latency_depends_only_on_framing() {
    let r = count_macs(&ModelConfig::wsj0()).unwrap();
    assert_eq!(r.latency_ms, 30.0);
    let r = count_macs(&ModelConfig { channels: 8, ..ModelConfig::dns() }).unwrap();
    assert_eq!(r.latency_ms, 30.0);
}

fn sine(len: usize, amp: f32) -> Waveform {
    Waveform::new((0..len).map(|i| amp * (i as f32 * 0.031).sin()).collect())
}

#[test]
fn wav_round_trip_within_one_lsb() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    for amp in [0.3f32, 1.0] {
        let w = sine(4000, amp);
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), w.len());
        let worst = w.samples.iter().zip(&r.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(worst <= 1.0 / 32768.0, "{worst}");
    }
}

#[test]
fn wav_rejects_other_rates() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("b.wav");
    write_wav(&p, &Waveform { samples: vec![0.0; 100], sample_rate: 44100 }).unwrap();
    match read_wav(&p) {
        Err(Error::Wav { reason, .. }) => assert!(reason.contains("44100"), "{reason}"),
        other => panic!("expected a rate error, got {other:?}"),
    }
}

fn trained_state(model: &Model<f32>) -> TrainState {
    let mut adam = AdamState::new(&model.params, AdamConfig::default());
    adam.step = 7;
    for (i, m) in adam.m.iter_mut().enumerate() {
        m.iter_mut().enumerate().for_each(|(j, v)| *v = (i * 31 + j) as f32 * 1e-3);
    }
    for v in adam.v.iter_mut() {
        v.iter_mut().for_each(|x| *x = 0.25);
    }
    TrainState { step: 1234, loss: LossKind::Pcm, adam: Some(adam), extra: serde_json::json!({"note": "x"}) }
}

fn small_model() -> Model<f32> {
    let mut m: Model<f32> = init_model(&small_cfg(32, 2, 4, (2, 3), 2)).unwrap();
    for (i, bn) in m.bn.iter_mut().enumerate() {
        bn.mean.iter_mut().for_each(|v| *v = i as f32 * 0.1);
        bn.var.iter_mut().for_each(|v| *v = 1.5);
    }
    m
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.dbnc");
    let model = small_model();
    let state = trained_state(&model);
    save_checkpoint(&p, &model, &state).unwrap();
    let (back, st) = load_checkpoint(&p).unwrap();
    assert_eq!(st, state);
    assert_eq!(back.cfg(), model.cfg());
    for (a, b) in model.params.iter().zip(back.params.iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &dbnet::nn::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    for (a, b) in model.bn.iter().zip(&back.bn) {
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.var, b.var);
    }
    assert_eq!(encode_checkpoint(&back, &st).unwrap(), std::fs::read(&p).unwrap());
}

#[test]
fn checkpoint_bytes_are_deterministic_and_sorted() {
    let model = small_model();
    let state = trained_state(&model);
    let a = encode_checkpoint(&model, &state).unwrap();
    let b = encode_checkpoint(&model.clone(), &state).unwrap();
    assert_eq!(a, b);
    let meta_len = u64::from_le_bytes(a[8..16].try_into().unwrap()) as usize;
    let meta: serde_json::Value = serde_json::from_slice(&a[16..16 + meta_len]).unwrap();
    let names: Vec<&str> = meta["tensors"].as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    let mut offset = 0;
    for e in meta["tensors"].as_array().unwrap() {
        assert_eq!(e["offset"].as_u64().unwrap(), offset);
        offset += 4 * e["len"].as_u64().unwrap();
    }
    assert_eq!(offset as usize, a.len() - 16 - meta_len);
}

fn section_of(bytes: &[u8]) -> CheckpointSection {
    match decode_checkpoint(bytes) {
        Err(Error::Checkpoint { section, .. }) => section,
        other => panic!("expected a checkpoint error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn corrupt_checkpoints_name_the_failing_section() {
    let model = small_model();
    let good = encode_checkpoint(&model, &TrainState::fresh(LossKind::Mag)).unwrap();
    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(section_of(&bad), CheckpointSection::Magic);
    let mut bad = good.clone();
    bad[4] = 9;
    assert_eq!(section_of(&bad), CheckpointSection::Version);
    let mut bad = good.clone();
    bad[17] = b'#';
    assert_eq!(section_of(&bad), CheckpointSection::Metadata);
    assert_eq!(section_of(&good[..good.len() - 3]), CheckpointSection::Data);
    assert_eq!(section_of(&good[..10]), CheckpointSection::Metadata);
    assert_eq!(section_of(&good[..2]), CheckpointSection::Magic);
}
