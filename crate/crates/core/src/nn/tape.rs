//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Operations are recorded on a [`Tape`] as they execute. A [`Var`] holds its
//! value by reference count; with recording disabled, or when no input needs
//! a gradient, nothing is appended and intermediates are freed as soon as the
//! caller drops them.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::conv::{self, ConvGeom};
use crate::nn::lstm::{self, LstmCache, LstmState, LstmWeights};
use crate::nn::norm::{self, BnMode};
use crate::nn::{Axis, BnStats, Dims, ParamId, ParamStore, Real, Tensor};

#[derive(Clone)]
pub struct Var<T> {
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    /// An untracked value, usable on any tape.
    pub fn from_tensor(value: Tensor<T>) -> Self {
        Var { id: None, value: Rc::new(value) }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn dims(&self) -> Dims {
        self.value.dims()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    pub fn shared(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(id={:?}, {:?})", self.id, self.value)
    }
}

/// Backward rule for operations defined outside this module.
pub trait Backward<T> {
    /// Gradient with respect to each recorded input, given the output gradient.
    fn backward(&self, dy: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

type Src = Option<usize>;

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Src, Src),
    Sub(Src, Src),
    Mul { a: Src, b: Src, av: Rc<Tensor<T>>, bv: Rc<Tensor<T>> },
    Scale(Src, T),
    Sum(Src, Dims),
    Sigmoid(Src, Rc<Tensor<T>>),
    Tanh(Src, Rc<Tensor<T>>),
    Elu(Src, Rc<Tensor<T>>),
    Conv { x: Src, w: Src, b: Src, xv: Rc<Tensor<T>>, wv: Rc<Tensor<T>>, geom: ConvGeom },
    Deconv { x: Src, w: Src, b: Src, xv: Rc<Tensor<T>>, wv: Rc<Tensor<T>>, stride: (usize, usize) },
    Gated(Box<GatedSaved<T>>),
    BatchNorm { x: Src, gamma: Src, beta: Src, xhat: Tensor<T>, inv_std: Vec<T>, gv: Rc<Tensor<T>>, mode: BnMode },
    Concat { srcs: Vec<Src>, sizes: Vec<usize>, axis: Axis },
    Slice { a: Src, axis: Axis, start: usize, in_dims: Dims },
    FeatureMatmul { x: Src, m: Src, xv: Rc<Tensor<T>>, mv: Rc<Tensor<T>> },
    MergeChannels(Src, Dims),
    SplitChannels(Src),
    Permute(Src, Vec<usize>),
    Lstm(Box<LstmSaved<T>>),
    Custom(Vec<Src>, Box<dyn Backward<T>>),
}

struct GatedSaved<T> {
    x: Src,
    w1: Src,
    b1: Src,
    w2: Src,
    b2: Src,
    xv: Rc<Tensor<T>>,
    w1v: Rc<Tensor<T>>,
    w2v: Rc<Tensor<T>>,
    lin: Tensor<T>,
    gate: Tensor<T>,
    kind: GatedKind,
}

#[derive(Clone, Copy)]
enum GatedKind {
    Conv(ConvGeom),
    Deconv((usize, usize)),
}

struct LstmSaved<T> {
    x: Src,
    w_ih: Src,
    w_hh: Src,
    bias: Src,
    xv: Rc<Tensor<T>>,
    out: Rc<Tensor<T>>,
    wv: [Rc<Tensor<T>>; 3],
    cache: LstmCache<T>,
}

struct Node<T> {
    op: Op<T>,
    dims: Dims,
}

/// Parameters of a gated (de)convolution, `y = (x*W1 + b1) ⊙ σ(x*W2 + b2)`.
pub struct GatedVars<'a, T> {
    pub w1: &'a Var<T>,
    pub b1: &'a Var<T>,
    pub w2: &'a Var<T>,
    pub b2: &'a Var<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.dims(), data).expect("same dims")
}

fn same_dims<T: Real>(a: &Var<T>, b: &Var<T>, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    /// A tape that records operations for differentiation.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recording: true }
    }

    /// A tape that never records; every [`Var`] is a plain value.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, srcs: &[Src], op: impl FnOnce() -> Op<T>) -> Var<T> {
        let id = if self.recording && srcs.iter().any(Option::is_some) {
            self.nodes.push(Node { op: op(), dims: value.dims() });
            Some(self.nodes.len() - 1)
        } else {
            None
        };
        Var { id, value: Rc::new(value) }
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var<T> {
        Var { id: None, value: Rc::new(value) }
    }

    /// A value whose gradient is tracked (but not written to any store).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var<T> {
        if !self.recording {
            return self.constant(value);
        }
        self.nodes.push(Node { op: Op::Leaf, dims: value.dims() });
        Var { id: Some(self.nodes.len() - 1), value: Rc::new(value) }
    }

    /// Registers a stored parameter; its gradient lands in the store on [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var<T> {
        let value = store.get(id).value.clone();
        if !self.recording {
            return self.constant(value);
        }
        self.nodes.push(Node { op: Op::Param(id), dims: value.dims() });
        Var { id: Some(self.nodes.len() - 1), value: Rc::new(value) }
    }

    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_dims(a, b, "add")?;
        let v = zip_map(&a.value, &b.value, |x, y| x + y);
        Ok(self.push(v, &[a.id, b.id], || Op::Add(a.id, b.id)))
    }

    pub fn sub(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_dims(a, b, "sub")?;
        let v = zip_map(&a.value, &b.value, |x, y| x - y);
        Ok(self.push(v, &[a.id, b.id], || Op::Sub(a.id, b.id)))
    }

    pub fn mul(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_dims(a, b, "mul")?;
        let v = zip_map(&a.value, &b.value, |x, y| x * y);
        Ok(self.push(v, &[a.id, b.id], || Op::Mul { a: a.id, b: b.id, av: a.shared(), bv: b.shared() }))
    }

    pub fn scale(&mut self, a: &Var<T>, k: T) -> Var<T> {
        let v = a.value.map(|x| x * k);
        self.push(v, &[a.id], || Op::Scale(a.id, k))
    }

    /// Sum of all elements as a `[1, 1, 1, 1]` scalar.
    pub fn sum(&mut self, a: &Var<T>) -> Var<T> {
        let v = Tensor::scalar(a.value.sum());
        self.push(v, &[a.id], || Op::Sum(a.id, a.dims()))
    }

    pub fn sigmoid(&mut self, a: &Var<T>) -> Var<T> {
        let y = Rc::new(a.value.map(sigmoid));
        let out = Var { id: None, value: Rc::clone(&y) };
        self.attach(out, &[a.id], || Op::Sigmoid(a.id, y))
    }

    pub fn tanh(&mut self, a: &Var<T>) -> Var<T> {
        let y = Rc::new(a.value.map(|x| x.tanh()));
        let out = Var { id: None, value: Rc::clone(&y) };
        self.attach(out, &[a.id], || Op::Tanh(a.id, y))
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, a: &Var<T>) -> Var<T> {
        let y = Rc::new(a.value.map(|x| if x > T::zero() { x } else { x.exp_m1() }));
        let out = Var { id: None, value: Rc::clone(&y) };
        self.attach(out, &[a.id], || Op::Elu(a.id, y))
    }

    fn attach(&mut self, mut out: Var<T>, srcs: &[Src], op: impl FnOnce() -> Op<T>) -> Var<T> {
        if self.recording && srcs.iter().any(Option::is_some) {
            self.nodes.push(Node { op: op(), dims: out.dims() });
            out.id = Some(self.nodes.len() - 1);
        }
        out
    }

    pub fn conv2d(&mut self, x: &Var<T>, w: &Var<T>, b: &Var<T>, geom: ConvGeom) -> Result<Var<T>> {
        let y = conv::conv2d(&x.value, &w.value, &b.value, &geom)?;
        Ok(self.push(y, &[x.id, w.id, b.id], || Op::Conv {
            x: x.id,
            w: w.id,
            b: b.id,
            xv: x.shared(),
            wv: w.shared(),
            geom,
        }))
    }

    pub fn conv_transpose2d(&mut self, x: &Var<T>, w: &Var<T>, b: &Var<T>, stride: (usize, usize)) -> Result<Var<T>> {
        let y = conv::conv_transpose2d(&x.value, &w.value, &b.value, stride)?;
        Ok(self.push(y, &[x.id, w.id, b.id], || Op::Deconv {
            x: x.id,
            w: w.id,
            b: b.id,
            xv: x.shared(),
            wv: w.shared(),
            stride,
        }))
    }

    pub fn gated_conv(&mut self, x: &Var<T>, p: GatedVars<'_, T>, geom: ConvGeom) -> Result<Var<T>> {
        if p.w1.dims() != p.w2.dims() {
            return Err(Error::dim(format!("gate kernels differ: {:?} vs {:?}", p.w1.dims(), p.w2.dims())));
        }
        let mut out = conv::conv2d_shared(&x.value, &[(&p.w1.value, &p.b1.value), (&p.w2.value, &p.b2.value)], &geom)?;
        let pre = out.pop().expect("two kernels");
        let lin = out.pop().expect("two kernels");
        Ok(self.gate(x, p, lin, pre, GatedKind::Conv(geom)))
    }

    pub fn gated_deconv(&mut self, x: &Var<T>, p: GatedVars<'_, T>, stride: (usize, usize)) -> Result<Var<T>> {
        if p.w1.dims() != p.w2.dims() {
            return Err(Error::dim(format!("gate kernels differ: {:?} vs {:?}", p.w1.dims(), p.w2.dims())));
        }
        let lin = conv::conv_transpose2d(&x.value, &p.w1.value, &p.b1.value, stride)?;
        let pre = conv::conv_transpose2d(&x.value, &p.w2.value, &p.b2.value, stride)?;
        Ok(self.gate(x, p, lin, pre, GatedKind::Deconv(stride)))
    }

    fn gate(&mut self, x: &Var<T>, p: GatedVars<'_, T>, lin: Tensor<T>, pre: Tensor<T>, kind: GatedKind) -> Var<T> {
        let gate = pre.map(sigmoid);
        let y = zip_map(&lin, &gate, |a, g| a * g);
        let srcs = [x.id, p.w1.id, p.b1.id, p.w2.id, p.b2.id];
        self.push(y, &srcs, || {
            Op::Gated(Box::new(GatedSaved {
                x: x.id,
                w1: p.w1.id,
                b1: p.b1.id,
                w2: p.w2.id,
                b2: p.b2.id,
                xv: x.shared(),
                w1v: p.w1.shared(),
                w2v: p.w2.shared(),
                lin,
                gate,
                kind,
            }))
        })
    }

    pub fn batch_norm(
        &mut self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        stats: &mut BnStats<T>,
        mode: BnMode,
    ) -> Result<Var<T>> {
        let f = norm::batch_norm_forward(&x.value, &gamma.value, &beta.value, stats, mode)?;
        Ok(self.push(f.y, &[x.id, gamma.id, beta.id], || Op::BatchNorm {
            x: x.id,
            gamma: gamma.id,
            beta: beta.id,
            xhat: f.xhat,
            inv_std: f.inv_std,
            gv: gamma.shared(),
            mode,
        }))
    }

    /// Batch norm in inference mode without mutable statistics.
    pub fn batch_norm_infer(&mut self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, stats: &BnStats<T>) -> Result<Var<T>> {
        let mut s = stats.clone();
        self.batch_norm(x, gamma, beta, &mut s, BnMode::Infer)
    }

    pub fn concat(&mut self, parts: &[&Var<T>], axis: Axis) -> Result<Var<T>> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let y = Tensor::concat(&vals, axis)?;
        let srcs: Vec<Src> = parts.iter().map(|p| p.id).collect();
        let sizes = parts.iter().map(|p| p.dims().get(axis)).collect();
        Ok(self.push(y, &srcs.clone(), || Op::Concat { srcs, sizes, axis }))
    }

    pub fn slice(&mut self, a: &Var<T>, axis: Axis, start: usize, len: usize) -> Result<Var<T>> {
        let y = a.value.slice(axis, start, len)?;
        Ok(self.push(y, &[a.id], || Op::Slice { a: a.id, axis, start, in_dims: a.dims() }))
    }

    /// `y[b, c, t, :] = M · x[b, c, t, :]` with `M` stored as `(1, 1, F_out, F_in)`.
    pub fn feature_matmul(&mut self, x: &Var<T>, m: &Var<T>) -> Result<Var<T>> {
        let xd = x.dims();
        let md = m.dims();
        if md.features != xd.features || md.batch != 1 || md.channels != 1 {
            return Err(Error::dim(format!("feature map {md:?} cannot act on {xd:?}")));
        }
        let rows = xd.batch * xd.channels * xd.frames;
        let mut y = Tensor::zeros(xd.with(Axis::Feature, md.frames));
        crate::nn::real::gemm(
            rows,
            xd.features,
            md.frames,
            x.value.data(),
            crate::nn::real::Layout::Normal,
            m.value.data(),
            crate::nn::real::Layout::Transposed,
            y.data_mut(),
            false,
        );
        Ok(self.push(y, &[x.id, m.id], || Op::FeatureMatmul { x: x.id, m: m.id, xv: x.shared(), mv: m.shared() }))
    }

    /// `[B, C, T, F]` → `[B, 1, T, C·F]` with flat index `c·F + f`.
    pub fn merge_channels(&mut self, a: &Var<T>) -> Var<T> {
        let d = a.dims();
        let y = merge(&a.value);
        self.push(y, &[a.id], || Op::MergeChannels(a.id, d))
    }

    /// Inverse of [`Tape::merge_channels`].
    pub fn split_channels(&mut self, a: &Var<T>, channels: usize) -> Result<Var<T>> {
        let d = a.dims();
        if d.channels != 1 || channels == 0 || !d.features.is_multiple_of(channels) {
            return Err(Error::dim(format!("cannot split {d:?} into {channels} channels")));
        }
        let out = Dims::new(d.batch, channels, d.frames, d.features / channels);
        let y = split(&a.value, out);
        Ok(self.push(y, &[a.id], || Op::SplitChannels(a.id)))
    }

    /// `y[..., j] = x[..., perm[j]]` along the feature axis.
    pub fn permute_features(&mut self, a: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
        let d = a.dims();
        if perm.len() != d.features {
            return Err(Error::dim(format!("permutation of {} applied to {d:?}", perm.len())));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::dim("feature permutation is not a bijection"));
            }
        }
        let mut y = Tensor::zeros(d);
        for (src, dst) in a.value.data().chunks(d.features).zip(y.data_mut().chunks_mut(d.features)) {
            for (j, &p) in perm.iter().enumerate() {
                dst[j] = src[p];
            }
        }
        let perm = perm.to_vec();
        Ok(self.push(y, &[a.id], || Op::Permute(a.id, perm)))
    }

    /// LSTM over the frame axis of `x: [B, 1, T, in]`; returns `[B, 1, T, H]` and the final state.
    pub fn lstm(
        &mut self,
        x: &Var<T>,
        w_ih: &Var<T>,
        w_hh: &Var<T>,
        bias: &Var<T>,
        init: Option<&LstmState<T>>,
    ) -> Result<(Var<T>, LstmState<T>)> {
        let srcs = [x.id, w_ih.id, w_hh.id, bias.id];
        let track = self.recording && srcs.iter().any(Option::is_some);
        let weights = LstmWeights { w_ih: w_ih.value(), w_hh: w_hh.value(), bias: bias.value() };
        let (y, last, cache) = lstm::lstm_forward(&x.value, &weights, init, track)?;
        let y = Rc::new(y);
        let out = Var { id: None, value: Rc::clone(&y) };
        let out = self.attach(out, &srcs, || {
            Op::Lstm(Box::new(LstmSaved {
                x: x.id,
                w_ih: w_ih.id,
                w_hh: w_hh.id,
                bias: bias.id,
                xv: x.shared(),
                out: y,
                wv: [w_ih.shared(), w_hh.shared(), bias.shared()],
                cache: cache.expect("cache kept when tracking"),
            }))
        });
        Ok((out, last))
    }

    /// Records an externally defined operation.
    pub fn custom(&mut self, value: Tensor<T>, inputs: &[&Var<T>], op: Box<dyn Backward<T>>) -> Var<T> {
        let srcs: Vec<Src> = inputs.iter().map(|v| v.id).collect();
        self.push(value, &srcs.clone(), move || Op::Custom(srcs, op))
    }

    /// Backpropagates from a scalar, accumulating parameter gradients into `store`.
    pub fn backward(&self, loss: &Var<T>, store: &mut ParamStore<T>) -> Result<()> {
        let root = loss.id.ok_or_else(|| Error::Graph("loss was not produced by a recorded graph".into()))?;
        if loss.value.numel() != 1 {
            return Err(Error::Graph(format!("backward needs a scalar, got {:?}", loss.dims())));
        }
        let mut grads = self.gradients(root)?;
        for (i, node) in self.nodes.iter().enumerate().take(root + 1) {
            if let Op::Param(pid) = node.op {
                if let Some(g) = grads[i].take() {
                    store.accumulate_grad(pid, &g);
                }
            }
        }
        Ok(())
    }

    /// Gradient of a scalar with respect to a [`Tape::leaf`] variable.
    pub fn grad_of(&self, loss: &Var<T>, wrt: &Var<T>) -> Result<Tensor<T>> {
        let root = loss.id.ok_or_else(|| Error::Graph("loss was not produced by a recorded graph".into()))?;
        let target = wrt.id.ok_or_else(|| Error::Graph("variable is not tracked".into()))?;
        let mut grads = self.gradients(root)?;
        Ok(grads[target].take().unwrap_or_else(|| Tensor::zeros(wrt.dims())))
    }

    fn gradients(&self, root: usize) -> Result<Vec<Option<Tensor<T>>>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::full(self.nodes[root].dims, T::one()));
        for i in (0..=root).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let keep = matches!(self.nodes[i].op, Op::Leaf | Op::Param(_));
            for (src, g) in self.node_backward(&self.nodes[i], &dy) {
                if let (Some(s), Some(g)) = (src, g) {
                    match &mut grads[s] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
            if keep {
                grads[i] = Some(dy);
            }
        }
        Ok(grads)
    }

    fn node_backward(&self, node: &Node<T>, dy: &Tensor<T>) -> Vec<(Src, Option<Tensor<T>>)> {
        match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Add(a, b) => vec![(*a, Some(dy.clone())), (*b, Some(dy.clone()))],
            Op::Sub(a, b) => vec![(*a, Some(dy.clone())), (*b, Some(dy.map(|v| -v)))],
            Op::Mul { a, b, av, bv } => vec![
                (*a, a.map(|_| zip_map(dy, bv, |g, y| g * y))),
                (*b, b.map(|_| zip_map(dy, av, |g, x| g * x))),
            ],
            Op::Scale(a, k) => vec![(*a, Some(dy.map(|v| v * *k)))],
            Op::Sum(a, d) => vec![(*a, Some(Tensor::full(*d, dy.data()[0])))],
            Op::Sigmoid(a, y) => vec![(*a, Some(zip_map(dy, y, |g, s| g * s * (T::one() - s))))],
            Op::Tanh(a, y) => vec![(*a, Some(zip_map(dy, y, |g, t| g * (T::one() - t * t))))],
            Op::Elu(a, y) => {
                vec![(*a, Some(zip_map(dy, y, |g, v| if v > T::zero() { g } else { g * (v + T::one()) })))]
            }
            Op::Conv { x, w, b, xv, wv, geom } => {
                let (dx, mut gw) = conv::conv2d_backward(xv, &[wv], &[dy], geom);
                let (dw, db) = gw.pop().expect("one kernel");
                vec![(*x, Some(dx)), (*w, Some(dw)), (*b, Some(db))]
            }
            Op::Deconv { x, w, b, xv, wv, stride } => {
                let (dx, mut gw) = conv::conv_transpose2d_backward(xv, &[wv], &[dy], *stride);
                let (dw, db) = gw.pop().expect("one kernel");
                vec![(*x, Some(dx)), (*w, Some(dw)), (*b, Some(db))]
            }
            Op::Gated(s) => {
                let dlin = zip_map(dy, &s.gate, |g, s| g * s);
                let mut dpre = zip_map(dy, &s.lin, |g, l| g * l);
                for (d, &g) in dpre.data_mut().iter_mut().zip(s.gate.data()) {
                    *d *= g * (T::one() - g);
                }
                let ws = [s.w1v.as_ref(), s.w2v.as_ref()];
                let (dx, mut gw) = match s.kind {
                    GatedKind::Conv(geom) => conv::conv2d_backward(&s.xv, &ws, &[&dlin, &dpre], &geom),
                    GatedKind::Deconv(stride) => conv::conv_transpose2d_backward(&s.xv, &ws, &[&dlin, &dpre], stride),
                };
                let (dw2, db2) = gw.pop().expect("gate kernel");
                let (dw1, db1) = gw.pop().expect("linear kernel");
                vec![
                    (s.x, Some(dx)),
                    (s.w1, Some(dw1)),
                    (s.b1, Some(db1)),
                    (s.w2, Some(dw2)),
                    (s.b2, Some(db2)),
                ]
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, gv, mode } => {
                let (dx, dg, db) = norm::batch_norm_backward(xhat, inv_std, gv, dy, *mode);
                vec![(*x, Some(dx)), (*gamma, Some(dg)), (*beta, Some(db))]
            }
            Op::Concat { srcs, sizes, axis } => {
                let mut out = Vec::with_capacity(srcs.len());
                let mut start = 0;
                for (s, &n) in srcs.iter().zip(sizes) {
                    out.push((*s, s.map(|_| dy.slice(*axis, start, n).expect("concat slice"))));
                    start += n;
                }
                out
            }
            Op::Slice { a, axis, start, in_dims } => {
                let (outer, n, inner) = in_dims.split_at(*axis);
                let len = dy.dims().get(*axis);
                let mut g = Tensor::zeros(*in_dims);
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    g.data_mut()[dst..dst + len * inner].copy_from_slice(&dy.data()[src..src + len * inner]);
                }
                vec![(*a, Some(g))]
            }
            Op::FeatureMatmul { x, m, xv, mv } => {
                use crate::nn::real::{gemm, Layout};
                let xd = xv.dims();
                let md = mv.dims();
                let rows = xd.batch * xd.channels * xd.frames;
                let dx = x.map(|_| {
                    let mut dx = Tensor::zeros(xd);
                    gemm(rows, md.frames, md.features, dy.data(), Layout::Normal, mv.data(), Layout::Normal, dx.data_mut(), false);
                    dx
                });
                let dm = m.map(|_| {
                    let mut dm = Tensor::zeros(md);
                    gemm(md.frames, rows, md.features, dy.data(), Layout::Transposed, xv.data(), Layout::Normal, dm.data_mut(), false);
                    dm
                });
                vec![(*x, dx), (*m, dm)]
            }
            Op::MergeChannels(a, d) => vec![(*a, Some(split(dy, *d)))],
            Op::SplitChannels(a) => vec![(*a, Some(merge(dy)))],
            Op::Permute(a, perm) => {
                let d = dy.dims();
                let mut g = Tensor::zeros(d);
                for (src, dst) in dy.data().chunks(d.features).zip(g.data_mut().chunks_mut(d.features)) {
                    for (j, &p) in perm.iter().enumerate() {
                        dst[p] += src[j];
                    }
                }
                vec![(*a, Some(g))]
            }
            Op::Lstm(s) => {
                let w = LstmWeights { w_ih: &s.wv[0], w_hh: &s.wv[1], bias: &s.wv[2] };
                let (dx, dwi, dwh, db) = lstm::lstm_backward(&s.xv, &s.out, &w, &s.cache, dy);
                vec![(s.x, Some(dx)), (s.w_ih, Some(dwi)), (s.w_hh, Some(dwh)), (s.bias, Some(db))]
            }
            Op::Custom(srcs, op) => srcs.iter().copied().zip(op.backward(dy)).collect(),
        }
    }
}

fn merge<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let d = x.dims();
    let mut y = Tensor::zeros(Dims::new(d.batch, 1, d.frames, d.channels * d.features));
    for b in 0..d.batch {
        for c in 0..d.channels {
            for t in 0..d.frames {
                let src = x.offset(b, c, t, 0);
                let dst = y.offset(b, 0, t, c * d.features);
                y.data_mut()[dst..dst + d.features].copy_from_slice(&x.data()[src..src + d.features]);
            }
        }
    }
    y
}

fn split<T: Real>(x: &Tensor<T>, out: Dims) -> Tensor<T> {
    let mut y = Tensor::zeros(out);
    for b in 0..out.batch {
        for c in 0..out.channels {
            for t in 0..out.frames {
                let src = x.offset(b, 0, t, c * out.features);
                let dst = y.offset(b, c, t, 0);
                y.data_mut()[dst..dst + out.features].copy_from_slice(&x.data()[src..src + out.features]);
            }
        }
    }
    y
}
