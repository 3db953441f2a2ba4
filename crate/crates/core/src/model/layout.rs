//! Parameter schema: names, shapes and initializers, derived from the
//! config alone so that counting never needs to allocate a model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::ModelConfig;
use crate::nn::{uniform, BnStats, Dims, ParamId, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Time = 0,
    Freq = 1,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Time, Branch::Freq];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Time => "time",
            Branch::Freq => "freq",
        }
    }

    pub fn other(self) -> Branch {
        match self {
            Branch::Time => Branch::Freq,
            Branch::Freq => Branch::Time,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    /// `M[k][n] = cos(2π k n / F)`
    DftReal,
    /// `(2/F)` times the transpose of [`Init::DftReal`].
    DftRealInverse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Dims,
    pub init: Init,
    /// Parameters in the "layer" group used by the cost breakdown.
    pub group: String,
}

/// Ids of one gated (de)convolution block followed by batch norm.
#[derive(Clone, Debug)]
pub struct GatedBlock {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the batch-norm statistics bank.
    pub bn: usize,
}

#[derive(Clone, Debug)]
pub struct LstmIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct BranchIds {
    pub encoder: Vec<GatedBlock>,
    pub decoder: Vec<GatedBlock>,
    /// `[layer][group]`
    pub lstm: Vec<Vec<LstmIds>>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Bridge matrices of one depth, named by the direction of translation.
#[derive(Clone, Debug)]
pub struct BridgePair {
    /// Applied to time-branch features, feeding the frequency branch.
    pub time_to_freq: ParamId,
    /// Applied to frequency-branch features, feeding the time branch.
    pub freq_to_time: ParamId,
}

impl BridgePair {
    /// Bridge that translates the *other* branch's features for `into`.
    pub fn toward(&self, into: Branch) -> ParamId {
        match into {
            Branch::Time => self.freq_to_time,
            Branch::Freq => self.time_to_freq,
        }
    }
}

/// Everything needed to locate parameters during a forward pass.
#[derive(Clone, Debug)]
pub struct DbNet {
    pub cfg: ModelConfig,
    pub branches: [BranchIds; 2],
    pub encoder_bridges: Vec<BridgePair>,
    pub decoder_bridges: Vec<BridgePair>,
    /// Batch-norm layer names, matching the statistics bank.
    pub bn_names: Vec<String>,
}

impl DbNet {
    pub fn branch(&self, b: Branch) -> &BranchIds {
        &self.branches[b as usize]
    }
}

struct Builder {
    specs: Vec<ParamSpec>,
    bn_names: Vec<String>,
    bn_channels: Vec<usize>,
}

impl Builder {
    fn add(&mut self, name: String, dims: Dims, init: Init, group: &str) -> ParamId {
        self.specs.push(ParamSpec { name, dims, init, group: group.to_string() });
        ParamId(self.specs.len() - 1)
    }

    fn gated(&mut self, prefix: &str, w_dims: Dims, cout: usize, fan_in: usize, group: &str) -> GatedBlock {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let bias = Dims::new(1, cout, 1, 1);
        let w1 = self.add(format!("{prefix}.lin.weight"), w_dims, Init::Uniform(bound), group);
        let b1 = self.add(format!("{prefix}.lin.bias"), bias, Init::Zeros, group);
        let w2 = self.add(format!("{prefix}.gate.weight"), w_dims, Init::Uniform(bound), group);
        let b2 = self.add(format!("{prefix}.gate.bias"), bias, Init::Zeros, group);
        let gamma = self.add(format!("{prefix}.bn.gamma"), bias, Init::Ones, group);
        let beta = self.add(format!("{prefix}.bn.beta"), bias, Init::Zeros, group);
        self.bn_names.push(format!("{prefix}.bn"));
        self.bn_channels.push(cout);
        GatedBlock { w1, b1, w2, b2, gamma, beta, bn: self.bn_names.len() - 1 }
    }
}

/// Builds the id layout and the ordered parameter schema for `cfg`.
pub fn schema(cfg: &ModelConfig) -> Result<(DbNet, Vec<ParamSpec>, Vec<usize>)> {
    cfg.validate()?;
    let mut b = Builder { specs: Vec::new(), bn_names: Vec::new(), bn_channels: Vec::new() };
    let c = cfg.channels;
    let (kt, kf) = cfg.kernel;
    let make_branch = |b: &mut Builder, br: Branch| -> BranchIds {
        let name = br.name();
        let mut encoder = Vec::new();
        for l in 0..cfg.layers {
            let cin = if l == 0 { 2 } else { 2 * c };
            let group = format!("{name}.encoder");
            encoder.push(b.gated(&format!("{name}.enc{}", l + 1), Dims::new(c, cin, kt, kf), c, cin * kt * kf, &group));
        }
        let mut lstm = Vec::new();
        let width = cfg.lstm_group_width();
        let lb = 1.0 / (width as f64).sqrt();
        for l in 0..cfg.lstm_layers {
            let mut groups = Vec::new();
            for g in 0..cfg.lstm_groups {
                let p = format!("{name}.glstm.l{}.g{}", l + 1, g + 1);
                let group = format!("{name}.glstm");
                groups.push(LstmIds {
                    w_ih: b.add(format!("{p}.w_ih"), Dims::new(1, 1, 4 * width, width), Init::Uniform(lb), &group),
                    w_hh: b.add(format!("{p}.w_hh"), Dims::new(1, 1, 4 * width, width), Init::Uniform(lb), &group),
                    bias: b.add(format!("{p}.bias"), Dims::new(1, 1, 1, 4 * width), Init::Zeros, &group),
                });
            }
            lstm.push(groups);
        }
        let mut decoder = Vec::new();
        for l in 0..cfg.layers {
            let cin = 3 * c;
            let group = format!("{name}.decoder");
            decoder.push(b.gated(&format!("{name}.dec{}", l + 1), Dims::new(cin, c, kt, kf), c, cin * kt * kf, &group));
        }
        let group = format!("{name}.output");
        let bound = 1.0 / ((c * kt * kf) as f64).sqrt();
        let out_w = b.add(format!("{name}.out.weight"), Dims::new(1, c, kt, kf), Init::Uniform(bound), &group);
        let out_b = b.add(format!("{name}.out.bias"), Dims::new(1, 1, 1, 1), Init::Zeros, &group);
        BranchIds { encoder, decoder, lstm, out_w, out_b }
    };
    let time = make_branch(&mut b, Branch::Time);
    let freq = make_branch(&mut b, Branch::Freq);
    let bridge = |b: &mut Builder, stage: &str, l: usize, f: usize| BridgePair {
        time_to_freq: b.add(format!("bridge.{stage}{}.time_to_freq", l + 1), Dims::new(1, 1, f, f), Init::DftReal, "bridges"),
        freq_to_time: b.add(
            format!("bridge.{stage}{}.freq_to_time", l + 1),
            Dims::new(1, 1, f, f),
            Init::DftRealInverse,
            "bridges",
        ),
    };
    let encoder_bridges = (0..cfg.layers).map(|l| bridge(&mut b, "enc", l, cfg.encoder_input_features(l))).collect();
    let decoder_bridges = (0..cfg.layers).map(|l| bridge(&mut b, "dec", l, cfg.decoder_input_features(l))).collect();
    let net = DbNet {
        cfg: cfg.clone(),
        branches: [time, freq],
        encoder_bridges,
        decoder_bridges,
        bn_names: b.bn_names.clone(),
    };
    Ok((net, b.specs, b.bn_channels))
}

pub(crate) fn materialize<T: Real>(cfg: &ModelConfig, specs: &[ParamSpec]) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    for s in specs {
        let value = match s.init {
            Init::Zeros => Tensor::zeros(s.dims),
            Init::Ones => Tensor::full(s.dims, T::one()),
            Init::Uniform(bound) => uniform(s.dims, bound, &mut rng),
            Init::DftReal => dft_real(s.dims.features, false),
            Init::DftRealInverse => dft_real(s.dims.features, true),
        };
        let id = store.insert(s.name.clone(), value)?;
        if s.group == "bridges" && cfg.freeze_bridges {
            store.get_mut(id).frozen = true;
        }
    }
    Ok(store)
}

pub(crate) fn bn_bank<T: Real>(channels: &[usize]) -> Vec<BnStats<T>> {
    channels.iter().map(|&c| BnStats::new(c)).collect()
}

fn dft_real<T: Real>(f: usize, inverse: bool) -> Tensor<T> {
    let mut data = vec![T::zero(); f * f];
    for k in 0..f {
        for n in 0..f {
            let v = (2.0 * std::f64::consts::PI * ((k * n) % f) as f64 / f as f64).cos();
            if inverse {
                data[n * f + k] = T::lit(2.0 / f as f64 * v);
            } else {
                data[k * f + n] = T::lit(v);
            }
        }
    }
    Tensor::from_vec(Dims::new(1, 1, f, f), data).expect("square")
}
