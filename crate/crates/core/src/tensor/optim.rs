use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::{Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Standard Adam bias correction. Off reproduces the BertAdam variant.
    pub bias_correction: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
            weight_decay: 0.01,
            bias_correction: true,
        }
    }
}

/// First/second moment buffers, one per parameter in store order.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl OptimizerState {
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: OptimizerState::default(),
        }
    }

    /// Apply one update to every trainable parameter using its stored grad.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let c = self.config;
        if self.state.m.len() != store.len() {
            self.state.m = store.iter().map(|(_, p)| vec![0.0; p.tensor().numel()]).collect();
            self.state.v = self.state.m.clone();
        }
        for (id, p) in store.iter() {
            if p.trainable() && p.tensor().grad().is_none() {
                return Err(TensorError::MissingGrad(p.name().to_string()));
            }
            if self.state.m[id.index()].len() != p.tensor().numel() {
                return Err(TensorError::Shape {
                    op: "adam",
                    lhs: p.tensor().shape().to_vec(),
                    rhs: vec![self.state.m[id.index()].len()],
                });
            }
        }
        self.state.t += 1;
        let t = self.state.t as i32;
        let (bc1, bc2) = if c.bias_correction {
            (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t))
        } else {
            (1.0, 1.0)
        };
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let param = store.get_mut(id);
            if !param.trainable() {
                continue;
            }
            let m = &mut self.state.m[id.index()];
            let v = &mut self.state.v[id.index()];
            let tensor = param.tensor_mut();
            let grad = tensor.grad().expect("checked above").to_vec();
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                let gi = grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= c.lr * (mhat / (vhat.sqrt() + c.epsilon) + c.weight_decay * *w);
            }
        }
        Ok(())
    }
}
