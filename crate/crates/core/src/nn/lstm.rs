//! Unidirectional LSTM over the frame axis with gate order (input, forget,
//! cell, output):
//!
//! ```text
//! z_t = W_ih x_t + W_hh h_{t-1} + b
//! i, f, o = σ(z_i), σ(z_f), σ(z_o);  g = tanh(z_g)
//! c_t = f ⊙ c_{t-1} + i ⊙ g;  h_t = o ⊙ tanh(c_t)
//! ```

use crate::error::{Error, Result};
use crate::nn::real::{gemm, Layout};
use crate::nn::{Dims, Real, Tensor};

/// Recurrent state, `batch × hidden` row-major for both `h` and `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub batch: usize,
    pub hidden: usize,
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState { batch, hidden, h: vec![T::zero(); batch * hidden], c: vec![T::zero(); batch * hidden] }
    }
}

/// Weight views: `w_ih` is `(1, 1, 4H, in)`, `w_hh` is `(1, 1, 4H, H)`, `bias` holds `4H` values.
pub struct LstmWeights<'a, T> {
    pub w_ih: &'a Tensor<T>,
    pub w_hh: &'a Tensor<T>,
    pub bias: &'a Tensor<T>,
}

impl<T: Real> LstmWeights<'_, T> {
    pub fn hidden(&self) -> usize {
        self.w_hh.dims().features
    }

    pub fn input(&self) -> usize {
        self.w_ih.dims().features
    }

    fn check(&self, x: Dims) -> Result<()> {
        let h = self.hidden();
        if self.w_ih.dims().frames != 4 * h || self.w_hh.dims().frames != 4 * h || self.bias.numel() != 4 * h {
            return Err(Error::dim(format!(
                "inconsistent LSTM weights {:?} / {:?} / {:?}",
                self.w_ih.dims(),
                self.w_hh.dims(),
                self.bias.dims()
            )));
        }
        if x.channels != 1 || x.features != self.input() {
            return Err(Error::dim(format!("LSTM expects [B, 1, T, {}], got {x:?}", self.input())));
        }
        Ok(())
    }
}

/// Saved activations for backpropagation through time.
#[derive(Clone, Debug)]
pub(crate) struct LstmCache<T> {
    /// Post-activation gates, `[B, T, 4H]`.
    gates: Vec<T>,
    /// Cell states, `[B, T, H]`.
    cells: Vec<T>,
    init: LstmState<T>,
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Runs the sequence `x: [B, 1, T, in]` and returns `h: [B, 1, T, H]`, the
/// final state and (optionally) the cache needed by [`lstm_backward`].
pub(crate) fn lstm_forward<T: Real>(
    x: &Tensor<T>,
    w: &LstmWeights<'_, T>,
    init: Option<&LstmState<T>>,
    keep_cache: bool,
) -> Result<(Tensor<T>, LstmState<T>, Option<LstmCache<T>>)> {
    let xd = x.dims();
    w.check(xd)?;
    let (bsz, steps, nin, hid) = (xd.batch, xd.frames, xd.features, w.hidden());
    let init = match init {
        Some(s) if s.batch == bsz && s.hidden == hid => s.clone(),
        Some(s) => {
            return Err(Error::dim(format!(
                "LSTM state ({}×{}) does not match batch {bsz} hidden {hid}",
                s.batch, s.hidden
            )))
        }
        None => LstmState::zeros(bsz, hid),
    };
    let g4 = 4 * hid;
    // Input projection for every (b, t) at once.
    let mut gates = vec![T::zero(); bsz * steps * g4];
    gemm(bsz * steps, nin, g4, x.data(), Layout::Normal, w.w_ih.data(), Layout::Transposed, &mut gates, false);
    let bias = w.bias.data();
    for row in gates.chunks_mut(g4) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    let mut out = Tensor::zeros(Dims::new(bsz, 1, steps, hid));
    let mut cells = if keep_cache { vec![T::zero(); bsz * steps * hid] } else { Vec::new() };
    let mut h = init.h.clone();
    let mut c = init.c.clone();
    let mut rec = vec![T::zero(); bsz * g4];
    for t in 0..steps {
        gemm(bsz, hid, g4, &h, Layout::Normal, w.w_hh.data(), Layout::Transposed, &mut rec, false);
        for b in 0..bsz {
            let z = &mut gates[(b * steps + t) * g4..(b * steps + t + 1) * g4];
            let r = &rec[b * g4..(b + 1) * g4];
            for j in 0..hid {
                let i = sigmoid(z[j] + r[j]);
                let f = sigmoid(z[hid + j] + r[hid + j]);
                let g = (z[2 * hid + j] + r[2 * hid + j]).tanh();
                let o = sigmoid(z[3 * hid + j] + r[3 * hid + j]);
                z[j] = i;
                z[hid + j] = f;
                z[2 * hid + j] = g;
                z[3 * hid + j] = o;
                let cc = f * c[b * hid + j] + i * g;
                c[b * hid + j] = cc;
                h[b * hid + j] = o * cc.tanh();
            }
            let row = out.offset(b, 0, t, 0);
            out.data_mut()[row..row + hid].copy_from_slice(&h[b * hid..(b + 1) * hid]);
            if keep_cache {
                let k = (b * steps + t) * hid;
                cells[k..k + hid].copy_from_slice(&c[b * hid..(b + 1) * hid]);
            }
        }
    }
    let last = LstmState { batch: bsz, hidden: hid, h, c };
    let cache = keep_cache.then_some(LstmCache { gates, cells, init });
    Ok((out, last, cache))
}

/// Returns `(dx, dW_ih, dW_hh, dbias)`.
pub(crate) fn lstm_backward<T: Real>(
    x: &Tensor<T>,
    out: &Tensor<T>,
    w: &LstmWeights<'_, T>,
    cache: &LstmCache<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>) {
    let xd = x.dims();
    let (bsz, steps, nin, hid) = (xd.batch, xd.frames, xd.features, w.hidden());
    let g4 = 4 * hid;
    let mut dz = vec![T::zero(); bsz * steps * g4];
    let mut dh_next = vec![T::zero(); bsz * hid];
    let mut dc_next = vec![T::zero(); bsz * hid];
    let mut dz_t = vec![T::zero(); bsz * g4];
    let mut h_prev = vec![T::zero(); bsz * hid];
    let mut dw_hh = Tensor::zeros(w.w_hh.dims());
    let one = T::one();
    for t in (0..steps).rev() {
        for b in 0..bsz {
            let gi = (b * steps + t) * g4;
            let ci = (b * steps + t) * hid;
            let gates = &cache.gates[gi..gi + g4];
            for j in 0..hid {
                let (i, f, g, o) = (gates[j], gates[hid + j], gates[2 * hid + j], gates[3 * hid + j]);
                let c = cache.cells[ci + j];
                let c_prev = if t == 0 { cache.init.c[b * hid + j] } else { cache.cells[ci - hid + j] };
                let dh = dy.at(b, 0, t, j) + dh_next[b * hid + j];
                let tc = c.tanh();
                let d_o = dh * tc;
                let dc = dh * o * (one - tc * tc) + dc_next[b * hid + j];
                let di = dc * g;
                let dg = dc * i;
                let df = dc * c_prev;
                dc_next[b * hid + j] = dc * f;
                let z = &mut dz_t[b * g4..(b + 1) * g4];
                z[j] = di * i * (one - i);
                z[hid + j] = df * f * (one - f);
                z[2 * hid + j] = dg * (one - g * g);
                z[3 * hid + j] = d_o * o * (one - o);
            }
            dz[gi..gi + g4].copy_from_slice(&dz_t[b * g4..(b + 1) * g4]);
            if t == 0 {
                h_prev[b * hid..(b + 1) * hid].copy_from_slice(&cache.init.h[b * hid..(b + 1) * hid]);
            } else {
                let row = out.offset(b, 0, t - 1, 0);
                h_prev[b * hid..(b + 1) * hid].copy_from_slice(&out.data()[row..row + hid]);
            }
        }
        gemm(bsz, g4, hid, &dz_t, Layout::Normal, w.w_hh.data(), Layout::Normal, &mut dh_next, false);
        gemm(g4, bsz, hid, &dz_t, Layout::Transposed, &h_prev, Layout::Normal, dw_hh.data_mut(), true);
    }
    let mut dx = Tensor::zeros(xd);
    gemm(bsz * steps, g4, nin, &dz, Layout::Normal, w.w_ih.data(), Layout::Normal, dx.data_mut(), false);
    let mut dw_ih = Tensor::zeros(w.w_ih.dims());
    gemm(g4, bsz * steps, nin, &dz, Layout::Transposed, x.data(), Layout::Normal, dw_ih.data_mut(), false);
    let mut db = Tensor::zeros(w.bias.dims());
    for row in dz.chunks(g4) {
        for (acc, &v) in db.data_mut().iter_mut().zip(row) {
            *acc += v;
        }
    }
    (dx, dw_ih, dw_hh, db)
}
