//! Dual-branch forward pass over framed input.
//!
//! Every time-convolution takes its past context from an explicit history
//! buffer instead of padding. Offline runs start from an all-zero history,
//! which is exactly causal zero padding, and streaming runs carry the buffer
//! between calls, so both paths share this code.

use crate::dsp::{frame_padded, overlap_sum, SrsBasis, WindowKind};
use crate::error::{Error, Result};
use crate::model::glstm::glstm_forward;
use crate::model::layout::{self, Branch, DbNet, GatedBlock};
use crate::model::ModelConfig;
use crate::nn::{
    Axis, Backward, BnMode, BnStats, ConvGeom, Dims, GatedVars, LstmState, ParamId, ParamStore, Real, Tape, Tensor, Var,
};

/// A model with its parameters and batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: DbNet,
    pub params: ParamStore<T>,
    pub bn: Vec<BnStats<T>>,
}

/// Builds a freshly initialized model; deterministic under `cfg.seed`.
pub fn init_model<T: Real>(cfg: &ModelConfig) -> Result<Model<T>> {
    let (net, specs, bn_channels) = layout::schema(cfg)?;
    let params = layout::materialize(cfg, &specs)?;
    Ok(Model { net, params, bn: layout::bn_bank(&bn_channels) })
}

impl<T: Real> Model<T> {
    pub fn cfg(&self) -> &ModelConfig {
        &self.net.cfg
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { net: self.net.clone(), params: self.params.cast(), bn: self.bn.iter().map(BnStats::cast).collect() }
    }

    /// A read-only view for the given batch-norm mode. Training mode
    /// registers parameters on the tape and updates running statistics.
    pub fn view(&mut self, mode: BnMode) -> Result<View<'_, T>> {
        let srs = SrsBasis::new(self.net.cfg.frame_len)?.as_tensor();
        let norm = match mode {
            BnMode::Train => Norm::Train(&mut self.bn),
            BnMode::Infer => Norm::Infer(&self.bn),
        };
        Ok(View { net: &self.net, weights: Source::Live(&self.params), norm, srs: Var::from_tensor(srs) })
    }

    /// Immutable inference snapshot whose parameters are shared rather than
    /// copied on every call.
    pub fn freeze(&self) -> Result<Frozen<T>> {
        let vars = self.params.iter().map(|p| Var::from_tensor(p.value.clone())).collect();
        let srs = SrsBasis::new(self.net.cfg.frame_len)?.as_tensor();
        Ok(Frozen { net: self.net.clone(), vars, bn: self.bn.clone(), srs: Var::from_tensor(srs) })
    }

    /// Offline inference on one waveform; returns `(time, freq)` outputs of
    /// the input's length.
    pub fn enhance(&self, noisy: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.freeze()?.enhance(noisy)
    }
}

/// Inference-only parameters and statistics.
pub struct Frozen<T> {
    pub net: DbNet,
    vars: Vec<Var<T>>,
    bn: Vec<BnStats<T>>,
    srs: Var<T>,
}

impl<T: Real> Frozen<T> {
    pub fn view(&self) -> View<'_, T> {
        View { net: &self.net, weights: Source::Snapshot(&self.vars), norm: Norm::Infer(&self.bn), srs: self.srs.clone() }
    }

    pub(crate) fn srs_tensor(&self) -> &Tensor<T> {
        self.srs.value()
    }

    pub fn enhance(&self, noisy: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let x = Tensor::from_vec(Dims::new(1, 1, 1, noisy.len()), noisy.to_vec())?;
        let mut tape = Tape::inference();
        let out = forward(&mut tape, &mut self.view(), &x)?;
        Ok((out.time.value().data().to_vec(), out.freq.value().data().to_vec()))
    }
}

enum Source<'a, T> {
    Live(&'a ParamStore<T>),
    Snapshot(&'a [Var<T>]),
}

enum Norm<'a, T> {
    Train(&'a mut [BnStats<T>]),
    Infer(&'a [BnStats<T>]),
}

pub struct View<'a, T> {
    pub net: &'a DbNet,
    weights: Source<'a, T>,
    norm: Norm<'a, T>,
    srs: Var<T>,
}

impl<T: Real> View<'_, T> {
    fn var(&self, tape: &mut Tape<T>, id: ParamId) -> Var<T> {
        match &self.weights {
            Source::Live(store) => tape.param(store, id),
            Source::Snapshot(vars) => vars[id.index()].clone(),
        }
    }

    fn batch_norm(&mut self, tape: &mut Tape<T>, x: &Var<T>, blk: &GatedBlock) -> Result<Var<T>> {
        let gamma = self.var(tape, blk.gamma);
        let beta = self.var(tape, blk.beta);
        match &mut self.norm {
            Norm::Train(bank) => tape.batch_norm(x, &gamma, &beta, &mut bank[blk.bn], BnMode::Train),
            Norm::Infer(bank) => tape.batch_norm_infer(x, &gamma, &beta, &bank[blk.bn]),
        }
    }
}

/// Which branches to evaluate. A single branch receives zeros wherever the
/// other branch's features would be exchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branches {
    Both,
    Only(Branch),
}

impl Branches {
    fn active(self, b: Branch) -> bool {
        match self {
            Branches::Both => true,
            Branches::Only(o) => o == b,
        }
    }
}

/// Per-branch carried context: time-history of every convolution and the
/// recurrent state of every group LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct NetState<T> {
    /// `[branch][slot]`: encoder layers, then decoder layers, then output conv.
    history: [Vec<Option<Tensor<T>>>; 2],
    /// `[branch][layer][group]`
    lstm: [Vec<Vec<Option<LstmState<T>>>>; 2],
    /// Layer output shapes of the last pass, when enabled.
    trace: Option<Vec<(String, Dims)>>,
}

impl<T: Real> NetState<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        let slots = 2 * cfg.layers + 1;
        let history = || vec![None; slots];
        let lstm = || vec![vec![None; cfg.lstm_groups]; cfg.lstm_layers];
        NetState { history: [history(), history()], lstm: [lstm(), lstm()], trace: None }
    }

    /// Like [`NetState::new`] but records the output shape of every layer.
    pub fn traced(cfg: &ModelConfig) -> Self {
        NetState { trace: Some(Vec::new()), ..Self::new(cfg) }
    }

    /// `(layer name, output dims)` in evaluation order; empty unless traced.
    pub fn trace(&self) -> &[(String, Dims)] {
        self.trace.as_deref().unwrap_or(&[])
    }

    fn record(&mut self, branch: Branch, layer: &str, y: &Var<T>) {
        if let Some(t) = &mut self.trace {
            t.push((format!("{}.{layer}", branch.name()), y.dims()));
        }
    }

    /// Number of stored scalars; bounded by the architecture, not the stream.
    pub fn footprint(&self) -> usize {
        let hist: usize = self.history.iter().flatten().flatten().map(Tensor::numel).sum();
        let rec: usize = self.lstm.iter().flatten().flatten().flatten().map(|s| s.h.len() + s.c.len()).sum();
        hist + rec
    }
}

/// Prepends the stored past frames to `x` and stores the new tail.
fn with_history<T: Real>(tape: &mut Tape<T>, x: &Var<T>, slot: &mut Option<Tensor<T>>, kt: usize) -> Result<Var<T>> {
    if kt <= 1 {
        return Ok(x.clone());
    }
    let d = x.dims();
    let want = d.with(Axis::Frame, kt - 1);
    let hist = match slot.take() {
        Some(h) if h.dims() == want => h,
        Some(h) => return Err(Error::Stream(format!("history {:?} does not fit input {d:?}", h.dims()))),
        None => Tensor::zeros(want),
    };
    let h = tape.constant(hist);
    let ext = tape.concat(&[&h, x], Axis::Frame)?;
    *slot = Some(ext.value().slice(Axis::Frame, d.frames, kt - 1)?);
    Ok(ext)
}

fn gated_block<T: Real>(
    tape: &mut Tape<T>,
    view: &mut View<'_, T>,
    blk: &GatedBlock,
    x: &Var<T>,
    slot: &mut Option<Tensor<T>>,
    deconv: bool,
) -> Result<Var<T>> {
    let cfg = &view.net.cfg;
    let (kt, kf) = cfg.kernel;
    let stride = cfg.stride;
    let frames = x.dims().frames;
    let ext = with_history(tape, x, slot, kt)?;
    let (w1, b1, w2, b2) = (view.var(tape, blk.w1), view.var(tape, blk.b1), view.var(tape, blk.w2), view.var(tape, blk.b2));
    let p = GatedVars { w1: &w1, b1: &b1, w2: &w2, b2: &b2 };
    let y = if deconv {
        let y = tape.gated_deconv(&ext, p, stride)?;
        if kt > 1 {
            tape.slice(&y, Axis::Frame, kt - 1, frames)?
        } else {
            y
        }
    } else {
        tape.gated_conv(&ext, p, ConvGeom::new(stride, (0, kf / 2)))?
    };
    let y = view.batch_norm(tape, &y, blk)?;
    Ok(tape.elu(&y))
}

fn exchange<T: Real>(
    tape: &mut Tape<T>,
    view: &View<'_, T>,
    other: Option<&Var<T>>,
    like: &Var<T>,
    bridge: ParamId,
) -> Result<Var<T>> {
    match other {
        Some(o) if view.net.cfg.bridges => {
            let m = view.var(tape, bridge);
            tape.feature_matmul(o, &m)
        }
        _ => Ok(tape.constant(Tensor::zeros(like.dims()))),
    }
}

/// Runs the network on framed inputs `[B, 1, T, N]` (rectangular frames for
/// the time branch, transform coefficients for the frequency branch) and
/// returns the per-frame outputs of the same shape.
pub fn forward_frames<T: Real>(
    tape: &mut Tape<T>,
    view: &mut View<'_, T>,
    inputs: [&Var<T>; 2],
    state: &mut NetState<T>,
    branches: Branches,
) -> Result<[Option<Var<T>>; 2]> {
    let net = view.net;
    let cfg = &net.cfg;
    let n = cfg.frame_len;
    for x in inputs {
        let d = x.dims();
        if d.channels != 1 || d.features != n || d.frames == 0 {
            return Err(Error::dim(format!("branch input must be [B, 1, T>0, {n}], got {d:?}")));
        }
    }
    if inputs[0].dims() != inputs[1].dims() {
        return Err(Error::dim("branch inputs differ in shape"));
    }
    let layers = cfg.layers;
    let mut prev: [Option<Var<T>>; 2] =
        [Branch::Time, Branch::Freq].map(|b| branches.active(b).then(|| inputs[b as usize].clone()));
    let mut skips: Vec<[Option<Var<T>>; 2]> = Vec::with_capacity(layers);

    for l in 0..layers {
        let mut next: [Option<Var<T>>; 2] = [None, None];
        for b in Branch::BOTH {
            let Some(own) = prev[b as usize].as_ref() else { continue };
            let other = prev[b.other() as usize].as_ref();
            let ex = exchange(tape, view, other, own, net.encoder_bridges[l].toward(b))?;
            let x = tape.concat(&[own, &ex], Axis::Channel)?;
            let blk = &net.branch(b).encoder[l];
            let mut slot = state.history[b as usize][l].take();
            let y = gated_block(tape, view, blk, &x, &mut slot, false)?;
            state.history[b as usize][l] = slot;
            state.record(b, &format!("enc{}", l + 1), &y);
            next[b as usize] = Some(y);
        }
        skips.push(next.clone());
        prev = next;
    }

    for b in Branch::BOTH {
        if let Some(x) = prev[b as usize].take() {
            let ids = &net.branch(b).lstm;
            let fetch = |t: &mut Tape<T>, id: ParamId| view.var(t, id);
            let y = glstm_forward(tape, fetch, ids, &x, &mut state.lstm[b as usize])?;
            state.record(b, "glstm", &y);
            prev[b as usize] = Some(y);
        }
    }
    for l in 0..layers {
        let mut next: [Option<Var<T>>; 2] = [None, None];
        for b in Branch::BOTH {
            let Some(own) = prev[b as usize].as_ref() else { continue };
            let other = prev[b.other() as usize].as_ref();
            let ex = exchange(tape, view, other, own, net.decoder_bridges[l].toward(b))?;
            let skip = skips[layers - 1 - l][b as usize].as_ref().expect("active branch has skips");
            let x = tape.concat(&[own, skip, &ex], Axis::Channel)?;
            let blk = &net.branch(b).decoder[l];
            let mut slot = state.history[b as usize][layers + l].take();
            let y = gated_block(tape, view, blk, &x, &mut slot, true)?;
            state.history[b as usize][layers + l] = slot;
            state.record(b, &format!("dec{}", l + 1), &y);
            next[b as usize] = Some(y);
        }
        prev = next;
    }

    let (kt, kf) = cfg.kernel;
    let mut out: [Option<Var<T>>; 2] = [None, None];
    for b in Branch::BOTH {
        let Some(x) = prev[b as usize].as_ref() else { continue };
        let mut slot = state.history[b as usize][2 * layers].take();
        let ext = with_history(tape, x, &mut slot, kt)?;
        state.history[b as usize][2 * layers] = slot;
        let ids = net.branch(b);
        let w = view.var(tape, ids.out_w);
        let bias = view.var(tape, ids.out_b);
        let y = tape.conv2d(&ext, &w, &bias, ConvGeom::new((1, 1), (0, kf / 2)))?;
        state.record(b, "out", &y);
        out[b as usize] = Some(y);
    }
    Ok(out)
}

/// Enhanced waveforms `[B, 1, 1, L]` of both branches.
pub struct Outputs<T> {
    pub time: Var<T>,
    pub freq: Var<T>,
}

/// Frames a batch `[B, 1, 1, L]` into the two branch inputs `[B, 1, T, N]`:
/// rectangular frames and the transform of Hamming frames. The tail is
/// zero-padded to complete the last frame.
pub fn branch_inputs<T: Real>(noisy: &Tensor<T>, cfg: &ModelConfig, srs: &Tensor<T>) -> Result<[Tensor<T>; 2]> {
    let d = noisy.dims();
    if d.channels != 1 || d.frames != 1 || d.features == 0 || d.batch == 0 {
        return Err(Error::dim(format!("waveform batch must be [B, 1, 1, L>0], got {d:?}")));
    }
    let (n, hop) = (cfg.frame_len, cfg.hop);
    let len = d.features;
    let frames = crate::dsp::frame_count(len, n, hop);
    let dims = Dims::new(d.batch, 1, frames, n);
    let mut time = Vec::with_capacity(dims.numel());
    let mut ham = Vec::with_capacity(dims.numel());
    for x in noisy.data().chunks(len) {
        time.extend(frame_padded(x, WindowKind::Rectangular, n, hop)?.data);
        ham.extend(frame_padded(x, WindowKind::Hamming, n, hop)?.data);
    }
    let mut freq = vec![T::zero(); ham.len()];
    crate::nn::real::gemm(
        d.batch * frames,
        n,
        n,
        &ham,
        crate::nn::real::Layout::Normal,
        srs.data(),
        crate::nn::real::Layout::Transposed,
        &mut freq,
        false,
    );
    Ok([Tensor::from_vec(dims, time)?, Tensor::from_vec(dims, freq)?])
}

/// Full pass on a waveform batch `[B, 1, 1, L]`.
pub fn forward<T: Real>(tape: &mut Tape<T>, view: &mut View<'_, T>, noisy: &Tensor<T>) -> Result<Outputs<T>> {
    let [time, freq] = forward_with(tape, view, noisy, Branches::Both)?;
    Ok(Outputs { time: time.expect("time branch active"), freq: freq.expect("freq branch active") })
}

/// One branch alone, as if the other branch contributed nothing.
pub fn forward_single<T: Real>(
    tape: &mut Tape<T>,
    view: &mut View<'_, T>,
    noisy: &Tensor<T>,
    branch: Branch,
) -> Result<Var<T>> {
    let out = forward_with(tape, view, noisy, Branches::Only(branch))?;
    Ok(out[branch as usize].clone().expect("requested branch active"))
}

fn forward_with<T: Real>(
    tape: &mut Tape<T>,
    view: &mut View<'_, T>,
    noisy: &Tensor<T>,
    branches: Branches,
) -> Result<[Option<Var<T>>; 2]> {
    let cfg = view.net.cfg.clone();
    let len = noisy.dims().features;
    let [xt, xf] = branch_inputs(noisy, &cfg, view.srs.value())?;
    let (xt, xf) = (tape.constant(xt), tape.constant(xf));
    let mut state = NetState::new(&cfg);
    let frames = forward_frames(tape, view, [&xt, &xf], &mut state, branches)?;
    let [ft, ff] = frames;
    let time = match ft {
        Some(y) => Some(overlap_add_var(tape, &y, WindowKind::Rectangular, cfg.hop, len)?),
        None => None,
    };
    let freq = match ff {
        Some(c) => {
            let srs = view.srs.clone();
            let y = tape.feature_matmul(&c, &srs)?;
            Some(overlap_add_var(tape, &y, WindowKind::Hamming, cfg.hop, len)?)
        }
        None => None,
    };
    Ok([time, freq])
}

struct OlaBackward<T> {
    input: Dims,
    hop: usize,
    out_len: usize,
    norm: Vec<T>,
}

impl<T: Real> Backward<T> for OlaBackward<T> {
    fn backward(&self, dy: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let d = self.input;
        let n = d.features;
        let mut dx = Tensor::zeros(d);
        let plane = d.frames * n;
        for b in 0..d.batch {
            let g = &dy.data()[b * self.out_len..(b + 1) * self.out_len];
            let dst = &mut dx.data_mut()[b * plane..(b + 1) * plane];
            for t in 0..d.frames {
                let base = t * self.hop;
                for i in 0..n.min(self.out_len.saturating_sub(base)) {
                    dst[t * n + i] = g[base + i] / self.norm[base + i];
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Differentiable overlap-add of `[B, 1, T, N]` frames into `[B, 1, 1, out_len]`,
/// normalized by the overlap-sum of `kind`.
pub fn overlap_add_var<T: Real>(
    tape: &mut Tape<T>,
    frames: &Var<T>,
    kind: WindowKind,
    hop: usize,
    out_len: usize,
) -> Result<Var<T>> {
    let d = frames.dims();
    if d.channels != 1 || d.frames == 0 || hop == 0 || hop > d.features {
        return Err(Error::dim(format!("cannot overlap-add {d:?} at hop {hop}")));
    }
    let n = d.features;
    let span = (d.frames - 1) * hop + n;
    if out_len > span || out_len < (d.frames - 1) * hop + 1 {
        return Err(Error::Signal(format!("output length {out_len} inconsistent with {} frames", d.frames)));
    }
    let norm: Vec<T> = overlap_sum(kind, n, hop, d.frames);
    let plane = d.frames * n;
    let mut out = vec![T::zero(); d.batch * out_len];
    let mut acc = vec![T::zero(); span];
    for b in 0..d.batch {
        acc.iter_mut().for_each(|v| *v = T::zero());
        let src = &frames.value().data()[b * plane..(b + 1) * plane];
        for t in 0..d.frames {
            for (a, &v) in acc[t * hop..t * hop + n].iter_mut().zip(&src[t * n..(t + 1) * n]) {
                *a += v;
            }
        }
        for (i, o) in out[b * out_len..(b + 1) * out_len].iter_mut().enumerate() {
            *o = acc[i] / norm[i];
        }
    }
    let value = Tensor::from_vec(Dims::new(d.batch, 1, 1, out_len), out)?;
    Ok(tape.custom(value, &[frames], Box::new(OlaBackward { input: d, hop, out_len, norm })))
}

/// `y[b, c, t, :] = m · x[b, c, t, :]` for a square `(1, 1, F, F)` matrix.
pub fn bridge_apply<T: Real>(x: &Tensor<T>, m: &Tensor<T>) -> Result<Tensor<T>> {
    let md = m.dims();
    if md.frames != md.features {
        return Err(Error::dim(format!("bridge matrix must be square, got {md:?}")));
    }
    let mut tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let mv = tape.constant(m.clone());
    Ok(tape.feature_matmul(&xv, &mv)?.value().clone())
}
