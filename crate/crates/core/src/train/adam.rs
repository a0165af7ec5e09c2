use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one slot per parameter scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| alloc::vec![0.0; p.tensor.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update from the gradients accumulated on `params`.
    ///
    /// A parameter without a gradient slot is treated as having zero gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet, cfg: &AdamConfig) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer state holds {} tensors, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.tensor.len() != m.len() {
                return Err(Error::InvalidArgument(format!("optimizer state shape mismatch for `{}`", p.name)));
            }
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient { name: p.name.clone() });
                }
            }
        }
        self.t += 1;
        let t = self.t as f64;
        let c1 = 1.0 - libm::pow(cfg.beta1, t);
        let c2 = 1.0 - libm::pow(cfg.beta2, t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad: Vec<f64> = match p.tensor.grad() {
                Some(g) => g.to_vec(),
                None => alloc::vec![0.0; m.len()],
            };
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
            }
        }
        Ok(())
    }
}
