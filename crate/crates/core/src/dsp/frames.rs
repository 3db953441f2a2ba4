use crate::dsp::{window, WindowKind, OLA_FLOOR};
use crate::error::{Error, Result};
use crate::nn::Real;

/// `frames × len` windowed frames, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix<T> {
    pub frames: usize,
    pub len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub data: Vec<T>,
}

impl<T: Real> FrameMatrix<T> {
    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.len..(t + 1) * self.len]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.data[t * self.len..(t + 1) * self.len]
    }

    /// Samples spanned by all frames: `(frames − 1)·hop + len`.
    pub fn span(&self) -> usize {
        if self.frames == 0 {
            0
        } else {
            (self.frames - 1) * self.hop + self.len
        }
    }
}

/// Frames covering `len` samples once the tail is zero-padded to complete
/// the last frame; signals shorter than one frame get a single frame.
pub fn frame_count(len: usize, n: usize, hop: usize) -> usize {
    if len <= n {
        1
    } else {
        (len - n).div_ceil(hop) + 1
    }
}

pub fn padded_len(len: usize, n: usize, hop: usize) -> usize {
    (frame_count(len, n, hop) - 1) * hop + n
}

fn check_geometry(n: usize, hop: usize) -> Result<()> {
    if n == 0 || hop == 0 || hop > n {
        return Err(Error::Signal(format!("invalid framing: frame {n}, hop {hop}")));
    }
    Ok(())
}

/// Frame `t` covers samples `[t·hop, t·hop + n)`; `floor((L − n)/hop) + 1` frames.
pub fn frame_signal<T: Real>(x: &[T], kind: WindowKind, n: usize, hop: usize) -> Result<FrameMatrix<T>> {
    check_geometry(n, hop)?;
    if x.len() < n {
        return Err(Error::Signal(format!("signal of {} samples is shorter than one frame ({n})", x.len())));
    }
    let frames = (x.len() - n) / hop + 1;
    Ok(build(x, kind, n, hop, frames))
}

/// Like [`frame_signal`] but zero-pads the tail so every sample is covered.
pub fn frame_padded<T: Real>(x: &[T], kind: WindowKind, n: usize, hop: usize) -> Result<FrameMatrix<T>> {
    check_geometry(n, hop)?;
    let frames = frame_count(x.len(), n, hop);
    Ok(build(x, kind, n, hop, frames))
}

fn build<T: Real>(x: &[T], kind: WindowKind, n: usize, hop: usize, frames: usize) -> FrameMatrix<T> {
    let w: Vec<T> = window(kind, n);
    let mut data = vec![T::zero(); frames * n];
    for t in 0..frames {
        let start = t * hop;
        let avail = x.len().saturating_sub(start).min(n);
        let dst = &mut data[t * n..(t + 1) * n];
        for i in 0..avail {
            dst[i] = x[start + i] * w[i];
        }
    }
    FrameMatrix { frames, len: n, hop, window: kind, data }
}

/// Pointwise sum of the shifted analysis windows over `span` samples,
/// floored so it can be used as a divisor.
pub fn overlap_sum<T: Real>(kind: WindowKind, n: usize, hop: usize, frames: usize) -> Vec<T> {
    let w: Vec<T> = window(kind, n);
    let span = if frames == 0 { 0 } else { (frames - 1) * hop + n };
    let mut acc = vec![T::zero(); span];
    for t in 0..frames {
        for (i, &v) in w.iter().enumerate() {
            acc[t * hop + i] += v;
        }
    }
    let floor = T::lit(OLA_FLOOR);
    acc.iter_mut().for_each(|v| *v = v.max(floor));
    acc
}

/// Sums frames at hop offsets, divides by the window overlap-sum and
/// truncates to `out_len`.
pub fn overlap_add<T: Real>(frames: &FrameMatrix<T>, out_len: usize) -> Result<Vec<T>> {
    let span = frames.span();
    let min_len = if frames.frames == 0 { 0 } else { (frames.frames - 1) * frames.hop + 1 };
    if out_len > span || out_len < min_len {
        return Err(Error::Signal(format!(
            "output length {out_len} inconsistent with {} frames (span {span})",
            frames.frames
        )));
    }
    let norm: Vec<T> = overlap_sum(frames.window, frames.len, frames.hop, frames.frames);
    let mut out = vec![T::zero(); span];
    for t in 0..frames.frames {
        let base = t * frames.hop;
        for (o, &v) in out[base..base + frames.len].iter_mut().zip(frames.frame(t)) {
            *o += v;
        }
    }
    out.truncate(out_len);
    for (o, &d) in out.iter_mut().zip(&norm) {
        *o /= d;
    }
    Ok(out)
}
