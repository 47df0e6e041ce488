//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for one parameter.
#[derive(Debug, Clone)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Optimizer state: per-parameter moments keyed by name plus a step counter.
pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments<T>> {
        &self.moments
    }

    /// Restores state from a checkpoint.
    pub fn restore(cfg: AdamConfig, step: u64, moments: BTreeMap<String, Moments<T>>) -> Self {
        Adam { cfg, step, moments }
    }

    /// One Adam update over all parameters. Every parameter must carry a
    /// gradient; if any is missing the step is rejected before touching
    /// anything. Each updated parameter is replaced by a fresh leaf tensor.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor<T>)]) -> Result<()> {
        let mut grads: Vec<Vec<T>> = Vec::with_capacity(params.len());
        for (name, tensor) in params.iter() {
            match tensor.grad() {
                Some(g) => grads.push(g),
                None => return Err(Error::MissingGrad(name.clone())),
            }
        }

        self.step += 1;
        let t = self.step;
        let lr = T::from_f64(self.cfg.lr);
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let eps = T::from_f64(self.cfg.eps);
        let corr1 = T::from_f64(1.0 - self.cfg.beta1.powi(t as i32));
        let corr2 = T::from_f64(1.0 - self.cfg.beta2.powi(t as i32));

        for ((name, tensor), grad) in params.iter_mut().zip(&grads) {
            let n = tensor.len();
            let entry = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            });
            if entry.m.len() != n {
                return Err(Error::Checkpoint(format!(
                    "moment buffers for `{name}` hold {} values, parameter has {n}",
                    entry.m.len()
                )));
            }
            let mut data = tensor.data().to_vec();
            for i in 0..n {
                let g = grad[i];
                entry.m[i] = b1 * entry.m[i] + (T::one() - b1) * g;
                entry.v[i] = b2 * entry.v[i] + (T::one() - b2) * g * g;
                let m_hat = entry.m[i] / corr1;
                let v_hat = entry.v[i] / corr2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            **tensor = Tensor::param(data, tensor.shape())?;
        }
        Ok(())
    }
}
