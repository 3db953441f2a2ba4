//! Parameter and compute accounting derived from the config alone.
//!
//! Counting convention: one multiply-accumulate is one MAC, gated layers
//! count both convolutions, biases, activations and normalization are not
//! counted. A transposed convolution is charged for the products it actually
//! forms, `Cout·Cin·kT·kF·F_in`, not for the zero-stuffed output grid.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::Result;
use crate::model::{schema, ModelConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub total: usize,
    /// Scalars per parameter group, sorted by group name.
    pub groups: BTreeMap<String, usize>,
}

pub fn count_params(cfg: &ModelConfig) -> Result<ParamBreakdown> {
    let (_, specs, _) = schema(cfg)?;
    let mut groups = BTreeMap::new();
    for s in &specs {
        *groups.entry(s.group.clone()).or_insert(0) += s.dims.numel();
    }
    Ok(ParamBreakdown { total: groups.values().sum(), groups })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub macs_per_frame: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub params: ParamBreakdown,
    pub layers: Vec<LayerCost>,
    pub macs_per_frame: u64,
    pub macs_per_second: f64,
    /// Forward and inverse input transforms of the frequency branch; kept
    /// out of the network total.
    pub transform_macs_per_frame: u64,
    pub latency_ms: f64,
}

/// Plain convolution cost per frame.
pub fn conv_macs(cin: usize, cout: usize, kernel: (usize, usize), f_out: usize) -> u64 {
    (cout * cin * kernel.0 * kernel.1 * f_out) as u64
}

pub fn gated_conv_macs(cin: usize, cout: usize, kernel: (usize, usize), f_out: usize) -> u64 {
    2 * conv_macs(cin, cout, kernel, f_out)
}

/// One LSTM step with equal input and hidden width.
pub fn lstm_macs(input: usize, hidden: usize) -> u64 {
    (4 * (input * hidden + hidden * hidden)) as u64
}

pub fn count_macs(cfg: &ModelConfig) -> Result<CostReport> {
    let params = count_params(cfg)?;
    let c = cfg.channels;
    let k = cfg.kernel;
    let mut layers = Vec::new();
    let mut push = |name: String, macs: u64| layers.push(LayerCost { name, macs_per_frame: macs });
    for b in ["time", "freq"] {
        for l in 0..cfg.layers {
            let cin = if l == 0 { 2 } else { 2 * c };
            push(format!("{b}.enc{}", l + 1), gated_conv_macs(cin, c, k, cfg.encoder_input_features(l + 1)));
        }
        let w = cfg.lstm_group_width();
        for l in 0..cfg.lstm_layers {
            push(format!("{b}.glstm.l{}", l + 1), cfg.lstm_groups as u64 * lstm_macs(w, w));
        }
        for l in 0..cfg.layers {
            push(format!("{b}.dec{}", l + 1), gated_conv_macs(3 * c, c, k, cfg.decoder_input_features(l)));
        }
        push(format!("{b}.out"), conv_macs(c, 1, k, cfg.frame_len));
    }
    if cfg.bridges {
        for l in 0..cfg.layers {
            let f = cfg.encoder_input_features(l);
            let ch = if l == 0 { 1 } else { c };
            push(format!("bridge.enc{}", l + 1), 2 * (ch * f * f) as u64);
        }
        for l in 0..cfg.layers {
            let f = cfg.decoder_input_features(l);
            push(format!("bridge.dec{}", l + 1), 2 * (c * f * f) as u64);
        }
    }
    let macs_per_frame = layers.iter().map(|l| l.macs_per_frame).sum();
    let frames_per_second = cfg.sample_rate as f64 / cfg.hop as f64;
    Ok(CostReport {
        params,
        layers,
        macs_per_frame,
        macs_per_second: macs_per_frame as f64 * frames_per_second,
        transform_macs_per_frame: 2 * (cfg.frame_len * cfg.frame_len) as u64,
        latency_ms: cfg.latency_ms(),
    })
}

impl CostReport {
    /// Human-readable `key: value` lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("params: {}\n", self.params.total));
        for (g, n) in &self.params.groups {
            s.push_str(&format!("params.{g}: {n}\n"));
        }
        for l in &self.layers {
            s.push_str(&format!("macs_per_frame.{}: {}\n", l.name, l.macs_per_frame));
        }
        s.push_str(&format!("macs_per_frame: {}\n", self.macs_per_frame));
        s.push_str(&format!("macs_per_second: {:.0}\n", self.macs_per_second));
        s.push_str(&format!("macs_per_second_g: {:.3}\n", self.macs_per_second / 1e9));
        s.push_str(&format!("transform_macs_per_frame: {}\n", self.transform_macs_per_frame));
        s.push_str(&format!("latency_ms: {}\n", self.latency_ms));
        s.push_str("mac_convention: 1 multiply-accumulate = 1 MAC; gated convs count both paths; biases, activations and norms excluded\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_examples() {
        assert_eq!(conv_macs(1, 1, (1, 3), 160), 480);
        assert_eq!(gated_conv_macs(1, 1, (1, 3), 160), 960);
    }

    #[test]
    fn totals_are_sums_and_latency_is_30ms() {
        let r = count_macs(&ModelConfig::wsj0()).unwrap();
        assert_eq!(r.macs_per_frame, r.layers.iter().map(|l| l.macs_per_frame).sum::<u64>());
        assert_eq!(r.params.total, r.params.groups.values().sum::<usize>());
        assert_eq!(r.macs_per_second, r.macs_per_frame as f64 * 100.0);
        assert!((r.latency_ms - 30.0).abs() < 1e-12);
    }
}
