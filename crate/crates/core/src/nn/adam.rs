use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    u: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { config, step: 0, m: zeros.clone(), u: zeros }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.u[index]
    }

    /// Updates every parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<(), NnError> {
        self.step_masked(store, grads, &vec![true; store.len()])
    }

    /// Updates only parameters whose mask entry is `true`; the others and
    /// their moments are left untouched.
    ///
    /// `m ← β1·m + (1−β1)·g`, `u ← β2·u + (1−β2)·g²`,
    /// `θ ← θ − lr·m̂/(√û + ε)` with `m̂ = m/(1−β1ᵗ)`, `û = u/(1−β2ᵗ)`.
    pub fn step_masked(&mut self, store: &mut ParamStore, grads: &[Tensor], mask: &[bool]) -> Result<(), NnError> {
        if grads.len() != store.len() || mask.len() != store.len() {
            return Err(NnError::GradientCount { expected: store.len(), got: grads.len().min(mask.len()) });
        }
        for id in store.ids() {
            if mask[id.index()] && !grads[id.index()].is_finite() {
                return Err(NnError::NonFiniteGradient { name: store.name(id).to_string() });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for id in store.ids() {
            let i = id.index();
            if !mask[i] {
                continue;
            }
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let u = self.u[i].data_mut();
            let theta = store.get_mut(id).data_mut();
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                u[j] = beta2 * u[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let u_hat = u[j] / c2;
                theta[j] -= lr * m_hat / (u_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
