use serde::{Deserialize, Serialize};

use crate::dsp::{FRAME_LEN, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::loss::LossKind;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    /// Encoder depth; the decoder mirrors it.
    pub layers: usize,
    pub channels: usize,
    /// `(frames, features)`; frames ∈ {1, 2} in the shipped profiles.
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub lstm_groups: usize,
    pub lstm_layers: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// When false every bridge output is forced to zero.
    pub bridges: bool,
    /// Bridge matrices keep their initialization.
    pub freeze_bridges: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::wsj0()
    }
}

impl ModelConfig {
    /// Six layers of 64 channels, `(1, 3)` kernels.
    pub fn wsj0() -> Self {
        ModelConfig {
            sample_rate: SAMPLE_RATE,
            frame_len: FRAME_LEN,
            hop: HOP,
            layers: 6,
            channels: 64,
            kernel: (1, 3),
            stride: (1, 2),
            lstm_groups: 2,
            lstm_layers: 2,
            loss: LossKind::Mag,
            seed: 0,
            bridges: true,
            freeze_bridges: false,
        }
    }

    /// Real-time profile: `(2, 3)` kernels with fewer channels and the
    /// phase-constrained loss.
    pub fn dns() -> Self {
        ModelConfig { kernel: (2, 3), channels: 28, loss: LossKind::Pcm, ..Self::wsj0() }
    }

    pub fn bottleneck_features(&self) -> usize {
        self.frame_len >> self.layers
    }

    /// Feature size entering encoder layer `l` (0-based).
    pub fn encoder_input_features(&self, l: usize) -> usize {
        self.frame_len >> l
    }

    /// Feature size entering decoder layer `l` (0-based).
    pub fn decoder_input_features(&self, l: usize) -> usize {
        self.bottleneck_features() << l
    }

    /// Flattened bottleneck width seen by the grouped LSTM.
    pub fn lstm_width(&self) -> usize {
        self.channels * self.bottleneck_features()
    }

    pub fn lstm_group_width(&self) -> usize {
        self.lstm_width() / self.lstm_groups
    }

    /// Input-to-output delay imposed by framing, in samples.
    pub fn latency_samples(&self) -> usize {
        self.frame_len + self.hop
    }

    pub fn latency_ms(&self) -> f64 {
        self.latency_samples() as f64 * 1000.0 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.sample_rate == 0 {
            return fail("sample rate must be positive".into());
        }
        if self.layers == 0 || self.channels == 0 || self.lstm_layers == 0 || self.lstm_groups == 0 {
            return fail("layers, channels, lstm_layers and lstm_groups must be positive".into());
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return fail(format!("hop {} must be in 1..={}", self.hop, self.frame_len));
        }
        if !self.frame_len.is_multiple_of(2) {
            return fail(format!("frame length {} must be even", self.frame_len));
        }
        if self.layers >= usize::BITS as usize || !self.frame_len.is_multiple_of(1usize << self.layers) {
            return fail(format!(
                "frame length {} is not divisible by 2^{} (one halving per encoder layer)",
                self.frame_len, self.layers
            ));
        }
        if self.stride != (1, 2) {
            return fail(format!("stride must be (1, 2), got {:?}", self.stride));
        }
        let (kt, kf) = self.kernel;
        if kt == 0 || kf < 2 || kf % 2 == 0 {
            return fail(format!("kernel {:?} needs kt >= 1 and an odd kf >= 3", self.kernel));
        }
        if !self.lstm_width().is_multiple_of(self.lstm_groups) {
            return fail(format!(
                "{} LSTM groups do not divide bottleneck width {}",
                self.lstm_groups,
                self.lstm_width()
            ));
        }
        Ok(())
    }
}
