use crate::error::{Error, Result};
use crate::nn::{ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates per parameter, indexed like the [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let m: Vec<Vec<T>> = store.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
        AdamState { config, step: 0, v: m.clone(), m }
    }

    /// One bias-corrected Adam update from the gradients held in `store`.
    /// Frozen parameters are left untouched and keep zero moments.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (i, p) in store.iter().enumerate() {
            if self.m[i].len() != p.value.numel() || p.grad.numel() != p.value.numel() {
                return Err(Error::dim(format!("optimizer state shape mismatch for {}", p.name)));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = T::lit(1.0 - c.beta2.powf(self.step as f64));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        for (i, p) in store.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dims, Tensor};

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(Dims::new(1, 1, 1, vals.len()), vals.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[0.5, -1.5, 2.0]);
        let before = s.get(s.id("w").unwrap()).value.clone();
        let mut adam = AdamState::new(&s, AdamConfig::default());
        for _ in 0..3 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.by_name("w").unwrap().value, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store(&[0.5, -1.5, 2.0]);
        let id = s.id("w").unwrap();
        s.get_mut(id).grad.data_mut().copy_from_slice(&[3.0, -0.25, 1e-3]);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s).unwrap();
        let after = s.get(id).value.data();
        for ((a, b), g) in after.iter().zip([0.5, -1.5, 2.0]).zip([3.0f64, -0.25, 1e-3]) {
            let delta = a - b;
            assert!((delta + 1e-3 * g.signum()).abs() < 1e-6, "delta {delta}");
        }
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut s = store(&[1.0]);
        let id = s.id("w").unwrap();
        s.get_mut(id).frozen = true;
        s.get_mut(id).grad.data_mut()[0] = 1.0;
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s).unwrap();
        assert_eq!(s.get(id).value.data()[0], 1.0);
    }
}
