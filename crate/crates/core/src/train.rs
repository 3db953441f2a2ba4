//! Training loop pieces. Each step draws its data from a generator seeded by
//! `(seed, step)`, so a run resumed from a checkpoint sees the same batches
//! as an uninterrupted one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{collate_examples, make_training_example, Batch, MixConfig, Pools};
use crate::error::{Error, Result};
use crate::io::TrainState;
use crate::loss::{objective, si_sdr, LossConfig};
use crate::model::{forward, Model};
use crate::nn::{AdamConfig, AdamState, BnMode, Tape};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { adam: AdamConfig::default(), batch: 32, seed: 0, loss: LossConfig::default() }
    }
}

/// Generator for the data of one step.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub step: u64,
    pub cfg: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.loss.validate()?;
        if cfg.batch == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let adam = AdamState::new(&model.params, cfg.adam);
        Ok(Trainer { model, adam, step: 0, cfg })
    }

    /// Continues from saved weights and optimizer moments.
    pub fn resume(model: Model<f32>, state: TrainState, cfg: TrainConfig) -> Result<Self> {
        let mut t = Trainer::new(model, cfg)?;
        t.step = state.step;
        if let Some(adam) = state.adam {
            t.adam = adam;
        }
        Ok(t)
    }

    pub fn state(&self) -> TrainState {
        TrainState { step: self.step, loss: self.cfg.loss.kind, adam: Some(self.adam.clone()), extra: serde_json::Value::Null }
    }

    /// Forward, backward and one optimizer update; returns the loss before
    /// the update.
    pub fn step_batch(&mut self, batch: &Batch<f32>) -> Result<f64> {
        self.model.params.zero_grad();
        let mut tape = Tape::new();
        let loss = {
            let mut view = self.model.view(BnMode::Train)?;
            let noisy = tape.constant(batch.noisy.clone());
            let clean = tape.constant(batch.clean.clone());
            let out = forward(&mut tape, &mut view, &batch.noisy)?;
            objective(&mut tape, &self.cfg.loss, &noisy, &clean, &out, &batch.lens)?
        };
        let value = loss.value().data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Graph(format!("non-finite loss at step {}", self.step)));
        }
        tape.backward(&loss, &mut self.model.params)?;
        self.adam.step(&mut self.model.params)?;
        self.step += 1;
        Ok(value)
    }

    /// Synthesizes a batch for the current step and trains on it.
    pub fn step(&mut self, pools: &Pools, mix: &MixConfig) -> Result<f64> {
        let mut rng = step_rng(self.cfg.seed, self.step);
        let examples = (0..self.cfg.batch).map(|_| make_training_example(pools, mix, &mut rng)).collect::<Result<Vec<_>>>()?;
        let batch = collate_examples(&examples)?;
        self.step_batch(&batch)
    }
}

/// Mean SI-SDR of the frequency-branch output over `(noisy, clean)` pairs.
pub fn mean_si_sdr(model: &Model<f32>, pairs: &[(Vec<f32>, Vec<f32>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("no validation pairs".into()));
    }
    let frozen = model.freeze()?;
    let mut total = 0.0;
    for (noisy, clean) in pairs {
        let (_, freq) = frozen.enhance(noisy)?;
        total += si_sdr(clean, &freq)?;
    }
    Ok(total / pairs.len() as f64)
}
