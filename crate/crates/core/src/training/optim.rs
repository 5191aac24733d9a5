use alloc::vec;
use alloc::vec::Vec;

use super::TrainingError;
use crate::numerics::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments for every array of one parameter store.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParameterStore, config: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self { config, step: 0, v: m.clone(), m }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`. Frozen arrays are
    /// left untouched. Any non-finite gradient aborts before anything changes.
    pub fn step(&mut self, store: &mut ParameterStore, lr: f64) -> Result<(), TrainingError> {
        if self.m.len() != store.len() {
            return Err(TrainingError::Optimizer(alloc::format!(
                "optimizer tracks {} arrays, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (_, p) in store.iter() {
            if p.frozen {
                continue;
            }
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(TrainingError::NonFiniteGradient { name: p.name.clone(), index: i, value: p.grad[i] });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let c2 = 1.0 - libm::pow(beta2, t as f64);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.frozen {
                continue;
            }
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = ParameterStore::new();
        s.add("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let before = s.fingerprint();
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s, 0.1).unwrap();
        assert_eq!(s.fingerprint(), before);
    }

    #[test]
    fn first_step_on_square_moves_by_lr() {
        let mut s = ParameterStore::new();
        let id = s.add("x", Tensor::scalar(1.0)).unwrap();
        s.get_mut(id).grad[0] = 2.0; // d(x²)/dx at 1
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s, 0.1).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert_eq!(s.value(id).data()[0], expected);
        assert!((expected - 0.9).abs() < 1e-8);
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut s = ParameterStore::new();
        let a = s.add("a", Tensor::scalar(1.0)).unwrap();
        let b = s.add("b", Tensor::scalar(1.0)).unwrap();
        s.get_mut(a).grad[0] = 1.0;
        s.get_mut(b).grad[0] = f64::NAN;
        let mut adam = Adam::new(&s, AdamConfig::default());
        let err = adam.step(&mut s, 0.1).unwrap_err();
        assert!(matches!(err, TrainingError::NonFiniteGradient { ref name, .. } if name == "b"));
        assert_eq!(s.value(a).data()[0], 1.0);
    }

    #[test]
    fn frozen_arrays_do_not_move() {
        let mut s = ParameterStore::new();
        let a = s.add("vision.w", Tensor::scalar(1.0)).unwrap();
        s.get_mut(a).grad[0] = f64::NAN;
        s.set_frozen_prefix("vision.", true);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s, 0.1).unwrap();
        assert_eq!(s.value(a).data()[0], 1.0);
    }
}
