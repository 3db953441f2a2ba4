use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dbnet::data::{make_training_example, DatasetManifest, Split};
use dbnet::dsp::Waveform;
use dbnet::io::{count_macs, load_checkpoint, read_wav, save_checkpoint, to_pcm16, write_wav};
use dbnet::loss::{si_sdr, stoi, MetricReport};
use dbnet::model::{flush_streaming, forward_streaming, StreamState};
use dbnet::train::{mean_si_sdr, Trainer};
use dbnet::{init_model, Model};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, RunConfig};

/// Offsets the training seed for the fixed validation draw.
const VALID_SEED_OFFSET: u64 = 0x5eed_7a11;

fn manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg.data.manifest.as_ref().ok_or_else(|| ConfigError("data.manifest is not set".into()))?;
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn checkpoint_path(cfg: &RunConfig) -> Result<&Path> {
    Ok(cfg.io.checkpoint.as_deref().ok_or_else(|| ConfigError("io.checkpoint is not set".into()))?)
}

fn load_model(cfg: &RunConfig) -> Result<Model<f32>> {
    let path = checkpoint_path(cfg)?;
    let (model, state) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    info!("loaded {} (step {})", path.display(), state.step);
    Ok(model)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let manifest = manifest(cfg)?;
    let pools = manifest.pools(Split::Train)?;
    let mix = cfg.mix();
    let val = manifest.pools(Split::Val)?;
    let valid: Vec<(Vec<f32>, Vec<f32>)> = if val.speech.is_empty() || val.noise.is_empty() {
        warn!("no validation speech/noise in the manifest; skipping validation");
        Vec::new()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(VALID_SEED_OFFSET));
        (0..cfg.train.valid_items)
            .map(|_| make_training_example(&val, &mix, &mut rng).map(|e| (e.noisy, e.clean)))
            .collect::<dbnet::Result<_>>()?
    };
    let tc = cfg.train_config();
    let mut trainer = match &cfg.io.resume {
        Some(p) => {
            let (model, state) = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            if model.cfg() != &cfg.model {
                return Err(ConfigError(format!("{} was trained with a different model configuration", p.display())).into());
            }
            info!("resuming from {} at step {}", p.display(), state.step);
            Trainer::resume(model, state, tc)?
        }
        None => Trainer::new(init_model(&cfg.model)?, tc)?,
    };
    std::fs::create_dir_all(&cfg.io.output_dir).with_context(|| format!("creating {}", cfg.io.output_dir.display()))?;
    // Output locations are left out so the saved bytes depend only on what
    // was trained.
    let recipe: String = cfg.render().lines().filter(|l| !l.trim_start_matches("# ").starts_with("io.")).map(|l| format!("{l}\n")).collect();
    let extra = serde_json::json!({ "config": recipe });
    let save = |trainer: &Trainer, path: &Path| -> Result<()> {
        let mut state = trainer.state();
        state.extra = extra.clone();
        save_checkpoint(path, &trainer.model, &state).with_context(|| format!("saving {}", path.display()))?;
        info!("saved {}", path.display());
        Ok(())
    };
    let t = &cfg.train;
    while trainer.step < t.steps {
        let loss = trainer.step(&pools, &mix)?;
        let s = trainer.step;
        if s % t.log_every == 0 {
            info!("step {s} loss {loss:.6}");
        }
        if !valid.is_empty() && s % t.valid_every == 0 {
            info!("step {s} validation SI-SDR {:.3} dB", mean_si_sdr(&trainer.model, &valid)?);
        }
        if s % t.checkpoint_every == 0 {
            save(&trainer, &cfg.io.output_dir.join(format!("step{s:08}.dbnc")))?;
        }
    }
    let last = cfg.io.checkpoint.clone().unwrap_or_else(|| cfg.io.output_dir.join("final.dbnc"));
    save(&trainer, &last)
}

pub fn enhance(cfg: &RunConfig, input: &Path, output: &Path, time_output: Option<&Path>) -> Result<()> {
    let model = load_model(cfg)?;
    let noisy = read_wav(input)?;
    if noisy.is_empty() {
        return Err(dbnet::Error::Data(format!("{} has no samples", input.display())).into());
    }
    let (time, freq) = model.freeze()?.enhance(&noisy.samples)?;
    write_wav(output, &Waveform::new(freq))?;
    if let Some(p) = time_output {
        write_wav(p, &Waveform::new(time))?;
    }
    info!("enhanced {} samples", noisy.len());
    Ok(())
}

fn write_pcm(out: &mut impl Write, samples: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = samples.iter().flat_map(|&v| to_pcm16(v).to_le_bytes()).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn stream(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let mut state = StreamState::new(model.cfg());
    let frozen = model.freeze()?;
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut buf = vec![0u8; 4096];
    let mut carry: Option<u8> = None;
    loop {
        let n = match input.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        };
        let mut bytes: Vec<u8> = carry.take().into_iter().collect();
        bytes.extend_from_slice(&buf[..n]);
        if bytes.len() % 2 == 1 {
            carry = bytes.pop();
        }
        let samples: Vec<f32> = bytes.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0).collect();
        let chunk = forward_streaming(&mut state, &frozen, &samples)?;
        write_pcm(&mut out, &chunk.freq)?;
    }
    if carry.is_some() {
        warn!("input ended in the middle of a sample; dropped the odd byte");
    }
    let tail = flush_streaming(&mut state, &frozen)?;
    write_pcm(&mut out, &tail.freq)?;
    info!("streamed {} samples", state.samples_out());
    Ok(())
}

pub fn mix(cfg: &RunConfig, count: usize, split: &str, seed: u64) -> Result<()> {
    let split: Split = split.parse()?;
    let pools = manifest(cfg)?.pools(split)?;
    let mix = cfg.mix();
    let dir = &cfg.io.output_dir;
    for sub in ["noisy", "clean"] {
        std::fs::create_dir_all(dir.join(sub)).with_context(|| format!("creating {}", dir.join(sub).display()))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut listing = String::from("# name snr_db reverberant compound\n");
    for i in 0..count {
        let ex = make_training_example(&pools, &mix, &mut rng)?;
        let name = format!("{i:05}.wav");
        write_wav(dir.join("noisy").join(&name), &Waveform::new(ex.noisy))?;
        write_wav(dir.join("clean").join(&name), &Waveform::new(ex.clean))?;
        listing.push_str(&format!("{name} {:.3} {} {}\n", ex.spec.snr_db, ex.spec.rir.is_some(), ex.spec.compound.is_some()));
    }
    std::fs::write(dir.join("mixtures.txt"), listing)?;
    info!("wrote {count} mixtures to {}", dir.display());
    Ok(())
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn eval(reference_dir: &Path, estimate_dir: &Path) -> Result<()> {
    let refs = wav_files(reference_dir)?;
    if refs.is_empty() {
        return Err(dbnet::Error::Data(format!("no WAV files in {}", reference_dir.display())).into());
    }
    let mut report = MetricReport::default();
    for r in &refs {
        let name = r.file_name().expect("listed file").to_string_lossy().into_owned();
        let e = estimate_dir.join(&name);
        if !e.exists() {
            return Err(dbnet::Error::Data(format!("no estimate for {name} in {}", estimate_dir.display())).into());
        }
        let (clean, est) = (read_wav(r)?, read_wav(&e)?);
        let sdr = si_sdr(&clean.samples, &est.samples).with_context(|| name.clone())?;
        let intel = stoi(&clean.samples, &est.samples).with_context(|| name.clone())?;
        report.push(name, sdr, intel);
    }
    let width = report.names.iter().map(String::len).max().unwrap_or(4).max(4);
    println!("{:<width$}  {:>10}  {:>7}", "file", "si_sdr_db", "stoi");
    for i in 0..report.len() {
        println!("{:<width$}  {:>10.3}  {:>7.4}", report.names[i], report.si_sdr_db[i], report.stoi[i]);
    }
    let ((sm, ss), (tm, ts)) = report.aggregate();
    println!("{:<width$}  {:>10.3}  {:>7.4}", "mean", sm, tm);
    println!("{:<width$}  {:>10.3}  {:>7.4}", "std", ss, ts);
    Ok(())
}

pub fn info(cfg: &RunConfig) -> Result<()> {
    let model_cfg = match &cfg.io.checkpoint {
        Some(_) => load_model(cfg)?.cfg().clone(),
        None => cfg.model.clone(),
    };
    print!("{}", count_macs(&model_cfg)?.render());
    Ok(())
}
