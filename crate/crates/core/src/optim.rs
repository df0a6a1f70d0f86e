//! Adam optimizer and the warmup / inverse-square-root learning-rate schedule.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Grads, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |_| Vec::new();
        AdamState {
            config,
            first: (0..store.len()).map(zeros).collect(),
            second: (0..store.len()).map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn first_moment(&self, index: usize) -> &[T] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[T] {
        &self.second[index]
    }

    /// One update of every trainable parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape("adam_step", &[store.len()], &[grads.len()]));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let step_size = T::of(lr / bc1);
        let bc2_sqrt = T::of(libm::sqrt(bc2));
        let eps = T::of(eps);
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id).data_mut();
            if g.len() != p.len() {
                return Err(Error::shape("adam_step", &[p.len()], &[g.len()]));
            }
            let i = id.index();
            if self.first[i].is_empty() {
                self.first[i] = alloc::vec![T::zero(); p.len()];
                self.second[i] = alloc::vec![T::zero(); p.len()];
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                p[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup over the first `warmup` steps to `peak`, then
/// `peak · sqrt(warmup / step)` decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: u64,
}

impl LrSchedule {
    /// Warmup covering 10% of `total_steps`.
    pub fn for_run(peak: f64, total_steps: u64) -> Self {
        LrSchedule {
            peak,
            warmup: (total_steps / 10).max(1),
        }
    }

    /// Rate for the 1-based update index `step`.
    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        if s <= w {
            self.peak * s / w
        } else {
            self.peak * libm::sqrt(w / s)
        }
    }
}
