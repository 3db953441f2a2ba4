//! Per-channel batch normalization over (batch, frame, feature).

use crate::error::{Error, Result};
use crate::nn::{BnStats, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only; frame-local and therefore streaming-safe.
    Infer,
}

pub(crate) struct BnForward<T> {
    pub y: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn for_channel<T: Real>(x: &Tensor<T>, c: usize, mut f: impl FnMut(&[T])) {
    let d = x.dims();
    let plane = d.frames * d.features;
    for b in 0..d.batch {
        let off = (b * d.channels + c) * plane;
        f(&x.data()[off..off + plane]);
    }
}

pub(crate) fn batch_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut BnStats<T>,
    mode: BnMode,
) -> Result<BnForward<T>> {
    let d = x.dims();
    let count = d.batch * d.frames * d.features;
    if count == 0 {
        return Err(Error::dim(format!("batch norm over empty batch {d:?}")));
    }
    if gamma.numel() != d.channels || beta.numel() != d.channels || stats.channels() != d.channels {
        return Err(Error::dim(format!(
            "batch norm for {} channels applied to {d:?}",
            gamma.numel()
        )));
    }
    let n = T::from_usize(count).expect("count");
    let mut inv_std = vec![T::zero(); d.channels];
    let mut shift = vec![T::zero(); d.channels];
    for c in 0..d.channels {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut s = T::zero();
                for_channel(x, c, |p| s += p.iter().copied().sum::<T>());
                let mean = s / n;
                let mut q = T::zero();
                for_channel(x, c, |p| q += p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>());
                let var = q / n;
                let m = stats.momentum;
                let unbiased = if count > 1 { q / T::from_usize(count - 1).expect("count") } else { var };
                stats.mean[c] = (T::one() - m) * stats.mean[c] + m * mean;
                stats.var[c] = (T::one() - m) * stats.var[c] + m * unbiased;
                (mean, var)
            }
            BnMode::Infer => (stats.mean[c], stats.var[c]),
        };
        inv_std[c] = T::one() / (var + stats.eps).sqrt();
        shift[c] = mean;
    }
    let plane = d.frames * d.features;
    let mut xhat = Tensor::zeros(d);
    let mut y = Tensor::zeros(d);
    let (g, bt) = (gamma.data(), beta.data());
    for (i, (src, (xh, out))) in x
        .data()
        .chunks(plane)
        .zip(xhat.data_mut().chunks_mut(plane).zip(y.data_mut().chunks_mut(plane)))
        .enumerate()
    {
        let c = i % d.channels;
        for ((&v, h), o) in src.iter().zip(xh.iter_mut()).zip(out.iter_mut()) {
            *h = (v - shift[c]) * inv_std[c];
            *o = *h * g[c] + bt[c];
        }
    }
    Ok(BnForward { y, xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_backward<T: Real>(
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    mode: BnMode,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = xhat.dims();
    let plane = d.frames * d.features;
    let n = T::from_usize(d.batch * plane).expect("count");
    let mut dgamma = vec![T::zero(); d.channels];
    let mut dbeta = vec![T::zero(); d.channels];
    for (i, (xh, g)) in xhat.data().chunks(plane).zip(dy.data().chunks(plane)).enumerate() {
        let c = i % d.channels;
        for (&h, &gy) in xh.iter().zip(g) {
            dgamma[c] += gy * h;
            dbeta[c] += gy;
        }
    }
    let gam = gamma.data();
    let mut dx = Tensor::zeros(d);
    for (i, ((xh, g), out)) in xhat
        .data()
        .chunks(plane)
        .zip(dy.data().chunks(plane))
        .zip(dx.data_mut().chunks_mut(plane))
        .enumerate()
    {
        let c = i % d.channels;
        let k = gam[c] * inv_std[c];
        match mode {
            BnMode::Train => {
                let mb = dbeta[c] / n;
                let mg = dgamma[c] / n;
                for ((&h, &gy), o) in xh.iter().zip(g).zip(out.iter_mut()) {
                    *o = k * (gy - mb - h * mg);
                }
            }
            BnMode::Infer => {
                for (&gy, o) in g.iter().zip(out.iter_mut()) {
                    *o = k * gy;
                }
            }
        }
    }
    let cd = gamma.dims();
    (
        dx,
        Tensor::from_vec(cd, dgamma).expect("gamma dims"),
        Tensor::from_vec(cd, dbeta).expect("beta dims"),
    )
}
