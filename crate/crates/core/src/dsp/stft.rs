use crate::dsp::{frame_signal, WindowKind};
use crate::error::Result;
use crate::nn::real::{gemm, Layout};
use crate::nn::Real;

/// One-sided DFT as a dense `N × 2K` matrix (`K = N/2 + 1`): columns
/// `0..K` give the real part, `K..2K` the imaginary part.
#[derive(Clone, Debug)]
pub struct DftBasis<T> {
    n: usize,
    bins: usize,
    matrix: Vec<T>,
}

impl<T: Real> DftBasis<T> {
    pub fn new(n: usize) -> Self {
        let bins = n / 2 + 1;
        let mut matrix = vec![T::zero(); n * 2 * bins];
        for i in 0..n {
            for k in 0..bins {
                // Reduce the phase index exactly so bins 0 and N/2 get sin = 0.
                let m = (i * k) % n;
                let (s, c) = if m == 0 {
                    (0.0, 1.0)
                } else if 2 * m == n {
                    (0.0, -1.0)
                } else {
                    (2.0 * std::f64::consts::PI * m as f64 / n as f64).sin_cos()
                };
                matrix[i * 2 * bins + k] = T::lit(c);
                matrix[i * 2 * bins + bins + k] = T::lit(-s);
            }
        }
        DftBasis { n, bins, matrix }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// `rows × N` frames → `rows × 2K` spectra.
    pub fn apply(&self, frames: &[T], out: &mut [T]) {
        let rows = frames.len() / self.n;
        gemm(rows, self.n, 2 * self.bins, frames, Layout::Normal, &self.matrix, Layout::Normal, out, false);
    }

    /// Adjoint of [`DftBasis::apply`]: `rows × 2K` → `rows × N`.
    pub fn apply_adjoint(&self, spec: &[T], out: &mut [T]) {
        let rows = spec.len() / (2 * self.bins);
        gemm(rows, 2 * self.bins, self.n, spec, Layout::Normal, &self.matrix, Layout::Transposed, out, false);
    }
}

/// Real and imaginary parts, each `frames × bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpec<T> {
    pub frames: usize,
    pub bins: usize,
    pub fft_size: usize,
    pub window: WindowKind,
    pub re: Vec<T>,
    pub im: Vec<T>,
}

impl<T: Real> ComplexSpec<T> {
    pub fn magnitude(&self, t: usize, k: usize) -> T {
        let i = t * self.bins + k;
        self.re[i].hypot(self.im[i])
    }
}

/// Hamming-windowed N-point DFT per frame, bins `0..=N/2`.
pub fn stft<T: Real>(x: &[T], n: usize, hop: usize) -> Result<ComplexSpec<T>> {
    let frames = frame_signal(x, WindowKind::Hamming, n, hop)?;
    let basis = DftBasis::new(n);
    let bins = basis.bins();
    let mut spec = vec![T::zero(); frames.frames * 2 * bins];
    basis.apply(&frames.data, &mut spec);
    let mut re = Vec::with_capacity(frames.frames * bins);
    let mut im = Vec::with_capacity(frames.frames * bins);
    for row in spec.chunks(2 * bins) {
        re.extend_from_slice(&row[..bins]);
        im.extend_from_slice(&row[bins..]);
    }
    Ok(ComplexSpec { frames: frames.frames, bins, fft_size: n, window: WindowKind::Hamming, re, im })
}
