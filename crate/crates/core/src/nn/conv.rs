//! 2-D convolution and transposed convolution over (frame, feature) via
//! im2col + GEMM. Time padding is past-only so that frame `t` of the output
//! never sees input frames after `t`.

use crate::error::{Error, Result};
use crate::nn::real::{gemm, Layout};
use crate::nn::{Dims, Real, Tensor};

/// Geometry of a forward convolution: `stride = (frames, features)`,
/// `pad = (past frames, features on both sides)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeom {
    pub fn new(stride: (usize, usize), pad: (usize, usize)) -> Self {
        ConvGeom { stride, pad }
    }

    /// Causal geometry for a `(kt, kf)` kernel: `kt - 1` past frames and
    /// symmetric `kf / 2` feature padding.
    pub fn causal(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        ConvGeom { stride, pad: (kernel.0.saturating_sub(1), kernel.1 / 2) }
    }
}

/// Block-to-column geometry shared by both directions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Patch {
    pub c: usize,
    pub in_t: usize,
    pub in_f: usize,
    pub out_t: usize,
    pub out_f: usize,
    pub kt: usize,
    pub kf: usize,
    pub st: usize,
    pub sf: usize,
    pub pad_t: usize,
    pub pad_f: usize,
}

impl Patch {
    pub fn rows(&self) -> usize {
        self.c * self.kt * self.kf
    }

    pub fn cols(&self) -> usize {
        self.out_t * self.out_f
    }
}

/// Output feature range `[lo, hi)` whose tap `b` lands inside the input.
fn valid_range(p: &Patch, b: usize) -> (usize, usize) {
    let lo = if p.pad_f > b { (p.pad_f - b).div_ceil(p.sf) } else { 0 };
    let hi = (p.in_f + p.pad_f).saturating_sub(b).div_ceil(p.sf).min(p.out_f);
    (lo, hi.max(lo))
}

/// `dst[(c,a,b), (to,fo)] = src[c, to*st + a - pad_t, fo*sf + b - pad_f]` (zero outside).
pub(crate) fn im2col<T: Real>(src: &[T], p: &Patch, dst: &mut [T]) {
    let ncol = p.cols();
    let mut row = 0;
    for ci in 0..p.c {
        let plane = &src[ci * p.in_t * p.in_f..(ci + 1) * p.in_t * p.in_f];
        for a in 0..p.kt {
            for b in 0..p.kf {
                let (lo, hi) = valid_range(p, b);
                let out_row = &mut dst[row * ncol..(row + 1) * ncol];
                for to in 0..p.out_t {
                    let seg = &mut out_row[to * p.out_f..(to + 1) * p.out_f];
                    let ti = (to * p.st + a) as isize - p.pad_t as isize;
                    if ti < 0 || ti as usize >= p.in_t {
                        seg.fill(T::zero());
                        continue;
                    }
                    let line = &plane[ti as usize * p.in_f..(ti as usize + 1) * p.in_f];
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    if lo < hi {
                        let first = lo * p.sf + b - p.pad_f;
                        if p.sf == 1 {
                            seg[lo..hi].copy_from_slice(&line[first..first + hi - lo]);
                        } else {
                            for (v, &x) in seg[lo..hi].iter_mut().zip(line[first..].iter().step_by(p.sf)) {
                                *v = x;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the source grid.
pub(crate) fn col2im<T: Real>(cols: &[T], p: &Patch, dst: &mut [T]) {
    let ncol = p.cols();
    let mut row = 0;
    for ci in 0..p.c {
        let plane = &mut dst[ci * p.in_t * p.in_f..(ci + 1) * p.in_t * p.in_f];
        for a in 0..p.kt {
            for b in 0..p.kf {
                let (lo, hi) = valid_range(p, b);
                let in_row = &cols[row * ncol..(row + 1) * ncol];
                for to in 0..p.out_t {
                    let ti = (to * p.st + a) as isize - p.pad_t as isize;
                    if ti < 0 || ti as usize >= p.in_t || lo >= hi {
                        continue;
                    }
                    let seg = &in_row[to * p.out_f + lo..to * p.out_f + hi];
                    let line = &mut plane[ti as usize * p.in_f..(ti as usize + 1) * p.in_f];
                    let first = lo * p.sf + b - p.pad_f;
                    for (x, &v) in line[first..].iter_mut().step_by(p.sf).zip(seg) {
                        *x += v;
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_stride(stride: (usize, usize)) -> Result<()> {
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::config(format!("stride must be positive, got {stride:?}")));
    }
    Ok(())
}

fn check_bias<T: Real>(b: &Tensor<T>, channels: usize) -> Result<()> {
    if b.numel() != channels {
        return Err(Error::dim(format!("bias {:?} does not match {channels} output channels", b.dims())));
    }
    Ok(())
}

/// Patch for a forward convolution of `x` with kernel `(kt, kf)`.
pub(crate) fn conv_patch(x: Dims, kernel: (usize, usize), g: &ConvGeom) -> Result<Patch> {
    check_stride(g.stride)?;
    let (kt, kf) = kernel;
    let span_t = x.frames + g.pad.0;
    let span_f = x.features + 2 * g.pad.1;
    if kt == 0 || kf == 0 || span_t < kt || span_f < kf {
        return Err(Error::dim(format!("kernel {kernel:?} larger than padded input {x:?}")));
    }
    Ok(Patch {
        c: x.channels,
        in_t: x.frames,
        in_f: x.features,
        out_t: (span_t - kt) / g.stride.0 + 1,
        out_f: (span_f - kf) / g.stride.1 + 1,
        kt,
        kf,
        st: g.stride.0,
        sf: g.stride.1,
        pad_t: g.pad.0,
        pad_f: g.pad.1,
    })
}

/// Patch over the *output* grid of a transposed convolution. Output extents
/// are `frames * st` and `features * sf`; the trailing overhang of the full
/// transposed result (future frames, last feature) is trimmed.
pub(crate) fn deconv_patch(x: Dims, cout: usize, kernel: (usize, usize), stride: (usize, usize)) -> Result<Patch> {
    check_stride(stride)?;
    let (kt, kf) = kernel;
    if kt == 0 || kf == 0 {
        return Err(Error::dim(format!("empty kernel {kernel:?}")));
    }
    Ok(Patch {
        c: cout,
        in_t: x.frames * stride.0,
        in_f: x.features * stride.1,
        out_t: x.frames,
        out_f: x.features,
        kt,
        kf,
        st: stride.0,
        sf: stride.1,
        pad_t: 0,
        pad_f: 0,
    })
}

fn add_bias<T: Real>(y: &mut [T], bias: &[T], plane: usize) {
    for (c, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[c % bias.len()];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let d = dy.dims();
    let plane = d.frames * d.features;
    let mut g = vec![T::zero(); d.channels];
    for (i, chunk) in dy.data().chunks(plane).enumerate() {
        g[i % d.channels] += chunk.iter().copied().sum();
    }
    Tensor::from_vec(Dims::new(1, d.channels, 1, 1), g).expect("bias dims")
}

/// Kernel `(Cout, Cin, kt, kf)`; bias `Cout` values.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, g: &ConvGeom) -> Result<Tensor<T>> {
    Ok(conv2d_shared(x, &[(w, b)], g)?.pop().expect("one kernel"))
}

/// Several same-shaped kernels over one input, sharing the column buffer.
pub(crate) fn conv2d_shared<T: Real>(x: &Tensor<T>, kernels: &[(&Tensor<T>, &Tensor<T>)], g: &ConvGeom) -> Result<Vec<Tensor<T>>> {
    let xd = x.dims();
    let wd = kernels[0].0.dims();
    for (w, b) in kernels {
        if w.dims() != wd {
            return Err(Error::dim(format!("kernels differ: {wd:?} vs {:?}", w.dims())));
        }
        check_bias(b, wd.batch)?;
    }
    if wd.channels != xd.channels {
        return Err(Error::dim(format!("kernel {wd:?} expects {} input channels, got {xd:?}", wd.channels)));
    }
    let p = conv_patch(xd, (wd.frames, wd.features), g)?;
    let out = Dims::new(xd.batch, wd.batch, p.out_t, p.out_f);
    let mut ys: Vec<Tensor<T>> = kernels.iter().map(|_| Tensor::zeros(out)).collect();
    let mut cols = vec![T::zero(); p.rows() * p.cols()];
    let in_sz = xd.channels * xd.frames * xd.features;
    let out_sz = out.channels * p.cols();
    for bi in 0..xd.batch {
        im2col(&x.data()[bi * in_sz..(bi + 1) * in_sz], &p, &mut cols);
        for ((w, b), y) in kernels.iter().zip(ys.iter_mut()) {
            let yb = &mut y.data_mut()[bi * out_sz..(bi + 1) * out_sz];
            gemm(wd.batch, p.rows(), p.cols(), w.data(), Layout::Normal, &cols, Layout::Normal, yb, false);
            add_bias(yb, b.data(), p.cols());
        }
    }
    Ok(ys)
}

/// Gradients of [`conv2d`] for a list of kernels sharing the same input.
/// Returns `(dx, [(dw, db)])`.
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    ws: &[&Tensor<T>],
    dys: &[&Tensor<T>],
    g: &ConvGeom,
) -> (Tensor<T>, Vec<(Tensor<T>, Tensor<T>)>) {
    let xd = x.dims();
    let wd = ws[0].dims();
    let p = conv_patch(xd, (wd.frames, wd.features), g).expect("geometry checked in forward");
    let mut cols = vec![T::zero(); p.rows() * p.cols()];
    let mut dcols = vec![T::zero(); p.rows() * p.cols()];
    let mut dx = Tensor::zeros(xd);
    let mut dws: Vec<Tensor<T>> = ws.iter().map(|w| Tensor::zeros(w.dims())).collect();
    let in_sz = xd.channels * xd.frames * xd.features;
    let out_sz = wd.batch * p.cols();
    for bi in 0..xd.batch {
        im2col(&x.data()[bi * in_sz..(bi + 1) * in_sz], &p, &mut cols);
        for (i, (w, dy)) in ws.iter().zip(dys).enumerate() {
            let dyb = &dy.data()[bi * out_sz..(bi + 1) * out_sz];
            gemm(wd.batch, p.cols(), p.rows(), dyb, Layout::Normal, &cols, Layout::Transposed, dws[i].data_mut(), true);
            gemm(p.rows(), wd.batch, p.cols(), w.data(), Layout::Transposed, dyb, Layout::Normal, &mut dcols, i > 0);
        }
        col2im(&dcols, &p, &mut dx.data_mut()[bi * in_sz..(bi + 1) * in_sz]);
    }
    let grads = dws.into_iter().zip(dys).map(|(dw, dy)| (dw, bias_grad(dy))).collect();
    (dx, grads)
}

/// Kernel `(Cin, Cout, kt, kf)`. Output has `frames * stride.0` frames and
/// `features * stride.1` features; frame `t` depends on input frames `<= t`.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    let xd = x.dims();
    let wd = w.dims();
    if wd.batch != xd.channels {
        return Err(Error::dim(format!("kernel {wd:?} expects {} input channels, got {xd:?}", wd.batch)));
    }
    check_bias(b, wd.channels)?;
    let p = deconv_patch(xd, wd.channels, (wd.frames, wd.features), stride)?;
    let out = Dims::new(xd.batch, wd.channels, p.in_t, p.in_f);
    let mut y = Tensor::zeros(out);
    let mut cols = vec![T::zero(); p.rows() * p.cols()];
    let in_sz = xd.channels * p.cols();
    let out_sz = out.channels * out.frames * out.features;
    for bi in 0..xd.batch {
        let xb = &x.data()[bi * in_sz..(bi + 1) * in_sz];
        gemm(p.rows(), xd.channels, p.cols(), w.data(), Layout::Transposed, xb, Layout::Normal, &mut cols, false);
        let yb = &mut y.data_mut()[bi * out_sz..(bi + 1) * out_sz];
        col2im(&cols, &p, yb);
        add_bias(yb, b.data(), out.frames * out.features);
    }
    Ok(y)
}

/// Gradients of [`conv_transpose2d`] for kernels sharing the same input.
pub(crate) fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    ws: &[&Tensor<T>],
    dys: &[&Tensor<T>],
    stride: (usize, usize),
) -> (Tensor<T>, Vec<(Tensor<T>, Tensor<T>)>) {
    let xd = x.dims();
    let wd = ws[0].dims();
    let p = deconv_patch(xd, wd.channels, (wd.frames, wd.features), stride).expect("geometry checked in forward");
    let mut dcols = vec![T::zero(); p.rows() * p.cols()];
    let mut dx = Tensor::zeros(xd);
    let mut dws: Vec<Tensor<T>> = ws.iter().map(|w| Tensor::zeros(w.dims())).collect();
    let in_sz = xd.channels * p.cols();
    let out_sz = wd.channels * p.in_t * p.in_f;
    for bi in 0..xd.batch {
        let xb = &x.data()[bi * in_sz..(bi + 1) * in_sz];
        for (i, (w, dy)) in ws.iter().zip(dys).enumerate() {
            im2col(&dy.data()[bi * out_sz..(bi + 1) * out_sz], &p, &mut dcols);
            let dxb = &mut dx.data_mut()[bi * in_sz..(bi + 1) * in_sz];
            gemm(xd.channels, p.rows(), p.cols(), w.data(), Layout::Normal, &dcols, Layout::Normal, dxb, true);
            gemm(xd.channels, p.cols(), p.rows(), xb, Layout::Normal, &dcols, Layout::Transposed, dws[i].data_mut(), true);
        }
    }
    let grads = dws.into_iter().zip(dys).map(|(dw, dy)| (dw, bias_grad(dy))).collect();
    (dx, grads)
}
