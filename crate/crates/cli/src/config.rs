//! `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use dbnet::data::{MixConfig, SnrProfile};
use dbnet::loss::{LossConfig, LossKind};
use dbnet::nn::AdamConfig;
use dbnet::train::TrainConfig;
use dbnet::ModelConfig;

/// Invalid or incomplete run configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub crop_seconds: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub log_every: u64,
    pub valid_every: u64,
    pub valid_items: usize,
    pub checkpoint_every: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnrChoice {
    Wsj0,
    Dns,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSettings {
    pub manifest: Option<PathBuf>,
    pub snr: SnrChoice,
    pub rir_prob: f64,
    pub compound_prob: f64,
    pub augment: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IoSettings {
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub data: DataSettings,
    pub io: IoSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::wsj0(),
            train: TrainSettings {
                lr: 1e-3,
                batch: 32,
                steps: 1000,
                crop_seconds: 7.0,
                loss: LossKind::Mag,
                seed: 0,
                log_every: 10,
                valid_every: 100,
                valid_items: 8,
                checkpoint_every: 500,
            },
            data: DataSettings { manifest: None, snr: SnrChoice::Wsj0, rir_prob: 0.0, compound_prob: 0.0, augment: false },
            io: IoSettings { checkpoint: None, output_dir: PathBuf::from("out"), resume: None },
        }
    }
}

/// Splits config text into `(line number, key, value)`.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected 'key = value', got '{line}'", no + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            bail!("line {}: empty key", no + 1);
        }
        out.push((no + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => bail!("expected on/off, got '{v}'"),
    }
}

fn parse_pair(v: &str) -> Result<(usize, usize)> {
    let inner = v.trim_start_matches('(').trim_end_matches(')');
    let (a, b) = inner.split_once(',').ok_or_else(|| anyhow!("expected 'a, b', got '{v}'"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    Ok(v.parse::<T>()?)
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl RunConfig {
    /// Applies settings in order on top of the defaults. Profile keys are
    /// applied first so the remaining keys refine them.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut loss_set = false;
        for (k, v) in pairs.iter().filter(|(k, _)| k == "model.profile") {
            cfg.model = match v.as_str() {
                "wsj0" => ModelConfig::wsj0(),
                "dns" => ModelConfig::dns(),
                _ => bail!("{k}: unknown profile '{v}' (wsj0 or dns)"),
            };
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "model.profile") {
            loss_set |= k == "train.loss";
            cfg.set(k, v).with_context(|| format!("setting {k}"))?;
        }
        if !loss_set {
            cfg.train.loss = cfg.model.loss;
        }
        cfg.model.loss = cfg.train.loss;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.data;
        match k {
            "model.sample_rate" => m.sample_rate = num(v)?,
            "model.frame_len" => m.frame_len = num(v)?,
            "model.hop" => m.hop = num(v)?,
            "model.layers" => m.layers = num(v)?,
            "model.channels" => m.channels = num(v)?,
            "model.kernel" => m.kernel = parse_pair(v)?,
            "model.stride" => m.stride = parse_pair(v)?,
            "model.lstm_groups" => m.lstm_groups = num(v)?,
            "model.lstm_layers" => m.lstm_layers = num(v)?,
            "model.seed" => m.seed = num(v)?,
            "model.bridges" => m.bridges = parse_bool(v)?,
            "model.freeze_bridges" => m.freeze_bridges = parse_bool(v)?,
            "train.lr" => t.lr = num(v)?,
            "train.batch" => t.batch = num(v)?,
            "train.steps" => t.steps = num(v)?,
            "train.crop_seconds" => t.crop_seconds = num(v)?,
            "train.loss" => t.loss = v.parse()?,
            "train.seed" => t.seed = num(v)?,
            "train.log_every" => t.log_every = num(v)?,
            "train.valid_every" => t.valid_every = num(v)?,
            "train.valid_items" => t.valid_items = num(v)?,
            "train.checkpoint_every" => t.checkpoint_every = num(v)?,
            "data.manifest" => d.manifest = Some(PathBuf::from(v)),
            "data.snr" => {
                d.snr = match v {
                    "wsj0" => SnrChoice::Wsj0,
                    "dns" => SnrChoice::Dns,
                    _ => bail!("unknown SNR profile '{v}' (wsj0 or dns)"),
                }
            }
            "data.rir_prob" => d.rir_prob = num(v)?,
            "data.compound_prob" => d.compound_prob = num(v)?,
            "data.augment" => d.augment = parse_bool(v)?,
            "io.checkpoint" => self.io.checkpoint = Some(PathBuf::from(v)),
            "io.output_dir" => self.io.output_dir = PathBuf::from(v),
            "io.resume" => self.io.resume = Some(PathBuf::from(v)),
            _ => bail!("unknown key '{k}'"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mix().validate()?;
        self.loss().validate()?;
        let t = &self.train;
        if !(t.lr > 0.0) {
            bail!("train.lr must be positive, got {}", t.lr);
        }
        if t.batch == 0 {
            bail!("train.batch must be positive");
        }
        for (name, v) in [("train.log_every", t.log_every), ("train.valid_every", t.valid_every), ("train.checkpoint_every", t.checkpoint_every)] {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        Ok(())
    }

    pub fn mix(&self) -> MixConfig {
        let d = &self.data;
        MixConfig {
            sample_rate: self.model.sample_rate,
            snr: match d.snr {
                SnrChoice::Wsj0 => SnrProfile::wsj0(),
                SnrChoice::Dns => SnrProfile::dns(),
            },
            rir_prob: d.rir_prob,
            compound_prob: d.compound_prob,
            crop_seconds: self.train.crop_seconds,
            augment: d.augment,
            ..MixConfig::wsj0()
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { kind: self.train.loss, frame_len: self.model.frame_len, hop: self.model.hop, ..LossConfig::default() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig { lr: self.train.lr, ..AdamConfig::default() },
            batch: self.train.batch,
            seed: self.train.seed,
            loss: self.loss(),
        }
    }

    /// Every key with its resolved value, sorted by key.
    pub fn resolved(&self) -> BTreeMap<&'static str, String> {
        let (m, t, d, io) = (&self.model, &self.train, &self.data, &self.io);
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        BTreeMap::from([
            ("model.sample_rate", m.sample_rate.to_string()),
            ("model.frame_len", m.frame_len.to_string()),
            ("model.hop", m.hop.to_string()),
            ("model.layers", m.layers.to_string()),
            ("model.channels", m.channels.to_string()),
            ("model.kernel", format!("{}, {}", m.kernel.0, m.kernel.1)),
            ("model.stride", format!("{}, {}", m.stride.0, m.stride.1)),
            ("model.lstm_groups", m.lstm_groups.to_string()),
            ("model.lstm_layers", m.lstm_layers.to_string()),
            ("model.seed", m.seed.to_string()),
            ("model.bridges", on_off(m.bridges).into()),
            ("model.freeze_bridges", on_off(m.freeze_bridges).into()),
            ("train.lr", t.lr.to_string()),
            ("train.batch", t.batch.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.crop_seconds", t.crop_seconds.to_string()),
            ("train.loss", t.loss.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.log_every", t.log_every.to_string()),
            ("train.valid_every", t.valid_every.to_string()),
            ("train.valid_items", t.valid_items.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("data.manifest", path(&d.manifest)),
            ("data.snr", if d.snr == SnrChoice::Wsj0 { "wsj0" } else { "dns" }.into()),
            ("data.rir_prob", d.rir_prob.to_string()),
            ("data.compound_prob", d.compound_prob.to_string()),
            ("data.augment", on_off(d.augment).into()),
            ("io.checkpoint", path(&io.checkpoint)),
            ("io.output_dir", io.output_dir.display().to_string()),
            ("io.resume", path(&io.resume)),
        ])
    }

    /// The resolved configuration in the file format; parses back to `self`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.resolved() {
            if v == "none" {
                s.push_str(&format!("# {k} = (unset)\n"));
            } else {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }
}
