use serde::{Deserialize, Serialize};

use super::{Mlp, MlpGrads, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn for_mlp(config: AdamConfig, net: &Mlp) -> Self {
        Self::new(config, net.parameter_count())
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update with learning rate `lr` (overrides the configured rate,
    /// for schedules).
    pub fn step_slice_with_lr(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Dimension {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        let (c1, c2) = self.begin_step();
        for i in 0..params.len() {
            params[i] -= self.update(i, grads[i], c1, c2, lr);
        }
        Ok(())
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        let lr = self.config.lr;
        self.step_slice_with_lr(params, grads, lr)
    }

    pub fn step_mlp_with_lr(&mut self, net: &mut Mlp, grads: &MlpGrads, lr: f64) -> Result<(), NnError> {
        if net.parameter_count() != self.m.len() {
            return Err(NnError::Dimension {
                expected: self.m.len(),
                got: net.parameter_count(),
            });
        }
        grads.check_matches(net)?;
        let (c1, c2) = self.begin_step();
        let mut i = 0;
        net.zip_parameters_mut(grads, |p, g| {
            *p -= self.update(i, g, c1, c2, lr);
            i += 1;
        })
    }

    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &MlpGrads) -> Result<(), NnError> {
        let lr = self.config.lr;
        self.step_mlp_with_lr(net, grads, lr)
    }

    fn begin_step(&mut self) -> (f64, f64) {
        self.step += 1;
        let t = self.step as i32;
        (
            1.0 - self.config.beta1.powi(t),
            1.0 - self.config.beta2.powi(t),
        )
    }

    #[inline]
    fn update(&mut self, i: usize, g: f64, c1: f64, c2: f64, lr: f64) -> f64 {
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
        self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
        let m_hat = self.m[i] / c1;
        let v_hat = self.v[i] / c2;
        lr * m_hat / (v_hat.sqrt() + eps)
    }
}
