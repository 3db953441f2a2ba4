//! Frame-synchronous inference: one hop of output per completed frame.

use crate::dsp::{frame_count, window, WindowKind, OLA_FLOOR};
use crate::error::{Error, Result};
use crate::model::graph::{forward_frames, Branches, Frozen, NetState};
use crate::model::ModelConfig;
use crate::nn::real::{gemm, Layout};
use crate::nn::{Dims, Real, Tape, Tensor};

/// Output samples of both branches released by one call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamChunk<T> {
    pub time: Vec<T>,
    pub freq: Vec<T>,
}

impl<T> StreamChunk<T> {
    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    fn extend(&mut self, other: StreamChunk<T>) {
        self.time.extend(other.time);
        self.freq.extend(other.freq);
    }
}

#[derive(Clone, Debug)]
struct Live<T> {
    cfg: ModelConfig,
    net: NetState<T>,
    /// Input samples from the start of the next frame; always shorter than N.
    backlog: Vec<T>,
    /// Unreleased output sums and window sums, from the emission cursor on.
    acc: [Vec<T>; 2],
    wsum: [Vec<T>; 2],
    windows: [Vec<T>; 2],
    consumed: usize,
    frames: usize,
    emitted: usize,
    finished: bool,
}

/// Per-stream state. The `Default` value is uninitialized and rejected by
/// [`forward_streaming`].
#[derive(Clone, Debug, Default)]
pub struct StreamState<T> {
    live: Option<Live<T>>,
}

impl<T: Real> StreamState<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        let n = cfg.frame_len;
        StreamState {
            live: Some(Live {
                cfg: cfg.clone(),
                net: NetState::new(cfg),
                backlog: Vec::with_capacity(n),
                acc: [vec![T::zero(); n], vec![T::zero(); n]],
                wsum: [vec![T::zero(); n], vec![T::zero(); n]],
                windows: [window(WindowKind::Rectangular, n), window(WindowKind::Hamming, n)],
                consumed: 0,
                frames: 0,
                emitted: 0,
                finished: false,
            }),
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.live.is_some()
    }

    /// Back to the cold-start state for the same configuration.
    pub fn reset(&mut self) {
        if let Some(l) = &self.live {
            *self = StreamState::new(&l.cfg);
        }
    }

    pub fn samples_in(&self) -> usize {
        self.live.as_ref().map_or(0, |l| l.consumed)
    }

    pub fn samples_out(&self) -> usize {
        self.live.as_ref().map_or(0, |l| l.emitted)
    }

    /// Scalars held by the state; independent of how much has been streamed.
    pub fn footprint(&self) -> usize {
        self.live.as_ref().map_or(0, |l| {
            l.net.footprint()
                + l.backlog.capacity().max(l.cfg.frame_len)
                + l.acc.iter().chain(&l.wsum).map(Vec::len).sum::<usize>()
        })
    }

    fn live_for(&mut self, model: &Frozen<T>) -> Result<&mut Live<T>> {
        let live = self.live.as_mut().ok_or_else(|| Error::Stream("stream state is not initialized".into()))?;
        if live.cfg != model.net.cfg {
            return Err(Error::Stream("stream state was created for a different model configuration".into()));
        }
        if live.finished {
            return Err(Error::Stream("stream already flushed; reset it first".into()));
        }
        Ok(live)
    }
}

impl<T: Real> Live<T> {
    fn process_frame(&mut self, model: &Frozen<T>) -> Result<()> {
        let n = self.cfg.frame_len;
        let view = &mut model.view();
        let srs = model.srs_tensor();
        let d = Dims::new(1, 1, 1, n);
        let frame = &self.backlog[..n];
        let ham: Vec<T> = frame.iter().zip(&self.windows[1]).map(|(&x, &w)| x * w).collect();
        let mut coeffs = vec![T::zero(); n];
        gemm(1, n, n, &ham, Layout::Normal, srs.data(), Layout::Transposed, &mut coeffs, false);
        let mut tape = Tape::inference();
        let xt = tape.constant(Tensor::from_vec(d, frame.to_vec())?);
        let xf = tape.constant(Tensor::from_vec(d, coeffs)?);
        let [yt, yf] = forward_frames(&mut tape, view, [&xt, &xf], &mut self.net, Branches::Both)?;
        let yt = yt.expect("time branch active");
        let yf = yf.expect("freq branch active");
        let mut yf_time = vec![T::zero(); n];
        gemm(1, n, n, yf.value().data(), Layout::Normal, srs.data(), Layout::Transposed, &mut yf_time, false);
        for (k, y) in [yt.value().data(), &yf_time[..]].into_iter().enumerate() {
            for i in 0..n {
                self.acc[k][i] += y[i];
                self.wsum[k][i] += self.windows[k][i];
            }
        }
        self.frames += 1;
        Ok(())
    }

    /// Releases `count` finished samples and advances the cursor.
    fn emit(&mut self, count: usize) -> StreamChunk<T> {
        let floor = T::lit(OLA_FLOOR);
        let mut out = [Vec::with_capacity(count), Vec::with_capacity(count)];
        for k in 0..2 {
            for i in 0..count {
                out[k].push(self.acc[k][i] / self.wsum[k][i].max(floor));
            }
            self.acc[k].drain(..count);
            self.acc[k].resize(self.cfg.frame_len, T::zero());
            self.wsum[k].drain(..count);
            self.wsum[k].resize(self.cfg.frame_len, T::zero());
        }
        self.emitted += count;
        let [time, freq] = out;
        StreamChunk { time, freq }
    }
}

/// Consumes an arbitrary chunk and returns the samples completed by it:
/// one hop per frame, the first after `frame_len` samples have arrived.
pub fn forward_streaming<T: Real>(state: &mut StreamState<T>, model: &Frozen<T>, chunk: &[T]) -> Result<StreamChunk<T>> {
    let live = state.live_for(model)?;
    let (n, hop) = (live.cfg.frame_len, live.cfg.hop);
    let mut out = StreamChunk { time: Vec::new(), freq: Vec::new() };
    let mut rest = chunk;
    while !rest.is_empty() {
        let take = (n - live.backlog.len()).min(rest.len());
        live.backlog.extend_from_slice(&rest[..take]);
        live.consumed += take;
        rest = &rest[take..];
        if live.backlog.len() == n {
            live.process_frame(model)?;
            out.extend(live.emit(hop));
            live.backlog.drain(..hop);
        }
    }
    Ok(out)
}

/// Ends the stream: zero-pads the last partial frame and releases every
/// remaining sample, so the total output length equals the input length.
pub fn flush_streaming<T: Real>(state: &mut StreamState<T>, model: &Frozen<T>) -> Result<StreamChunk<T>> {
    let live = state.live_for(model)?;
    let (n, hop) = (live.cfg.frame_len, live.cfg.hop);
    let mut out = StreamChunk::default();
    if live.consumed > 0 {
        let total = frame_count(live.consumed, n, hop);
        while live.frames < total {
            live.backlog.resize(n, T::zero());
            live.process_frame(model)?;
            live.backlog.drain(..hop);
            if live.frames < total {
                out.extend(live.emit(hop));
            }
        }
        let remaining = live.consumed - live.emitted;
        out.extend(live.emit(remaining));
    }
    live.finished = true;
    Ok(out)
}
