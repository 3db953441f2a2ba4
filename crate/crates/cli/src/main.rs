mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::{parse_lines, RunConfig};

/// Dual-branch causal speech enhancement.
#[derive(Parser, Debug)]
#[command(name = "dbnet", version)]
struct Cli {
    /// Run configuration file (`key = value` per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one key, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Shorthand for `--set io.checkpoint=PATH`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trains on mixtures synthesized from `data.manifest`.
    Train,
    /// Enhances one WAV file offline.
    Enhance {
        input: PathBuf,
        output: PathBuf,
        /// Also writes the time-branch estimate here.
        #[arg(long)]
        time_output: Option<PathBuf>,
    },
    /// Raw PCM16 LE mono 16 kHz from stdin to stdout, frame by frame.
    Stream,
    /// Writes a set of noisy/clean pairs from `data.manifest`.
    Mix {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// SI-SDR and STOI of estimates against references with matching names.
    Eval {
        #[arg(long)]
        reference_dir: PathBuf,
        #[arg(long)]
        estimate_dir: PathBuf,
    },
    /// Parameter, MAC and latency report for the configured model or a checkpoint.
    Info,
}

/// Process exit codes, one per failure class.
mod exit {
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 3;
    pub const IO: u8 = 4;
    pub const CHECKPOINT: u8 = 5;
    pub const DATA: u8 = 6;
    pub const STREAM: u8 = 7;
    pub const NUMERIC: u8 = 8;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dbnet::Error>() {
            return match e {
                dbnet::Error::Config(_) => exit::CONFIG,
                dbnet::Error::Wav { .. } | dbnet::Error::Io(_) => exit::IO,
                dbnet::Error::Checkpoint { .. } => exit::CHECKPOINT,
                dbnet::Error::Data(_) => exit::DATA,
                dbnet::Error::Stream(_) => exit::STREAM,
                dbnet::Error::Dimension(_) | dbnet::Error::Graph(_) | dbnet::Error::Signal(_) => exit::NUMERIC,
            };
        }
        if cause.downcast_ref::<config::ConfigError>().is_some() {
            return exit::CONFIG;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return exit::IO;
        }
    }
    exit::OTHER
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut pairs = Vec::new();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let lines = parse_lines(&text).map_err(|e| config::ConfigError(format!("{}: {e:#}", path.display())))?;
        pairs.extend(lines.into_iter().map(|(_, k, v)| (k, v)));
    }
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| config::ConfigError(format!("--set expects KEY=VALUE, got '{s}'")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(p) = &cli.checkpoint {
        pairs.push(("io.checkpoint".into(), p.display().to_string()));
    }
    let cfg = RunConfig::from_pairs(&pairs).map_err(|e| config::ConfigError(format!("{e:#}")))?;
    for line in cfg.render().lines() {
        log::info!("config {line}");
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Enhance { input, output, time_output } => commands::enhance(&cfg, &input, &output, time_output.as_deref()),
        Command::Stream => commands::stream(&cfg),
        Command::Mix { count, split, seed } => commands::mix(&cfg, count, &split, seed),
        Command::Eval { reference_dir, estimate_dir } => commands::eval(&reference_dir, &estimate_dir),
        Command::Info => commands::info(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
