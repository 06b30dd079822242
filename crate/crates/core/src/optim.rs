//! Adam optimizer over a fixed list of flat parameter groups.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    /// Per-group learning-rate multipliers.
    lr_scale: Vec<f64>,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, group_sizes: &[usize]) -> Self {
        Self {
            config,
            lr_scale: vec![1.0; group_sizes.len()],
            t: 0,
            m: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn with_lr_scale(mut self, group: usize, scale: f64) -> Self {
        self.lr_scale[group] = scale;
        self
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update. `params[g]` and `grads[g]` must match the sizes given at
    /// construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        for (g, (p, grad)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), self.m[g].len());
            let step = lr * self.lr_scale[g];
            for i in 0..p.len() {
                let gi = grad[i];
                self.m[g][i] = beta1 * self.m[g][i] + (1.0 - beta1) * gi;
                self.v[g][i] = beta2 * self.v[g][i] + (1.0 - beta2) * gi * gi;
                let m_hat = self.m[g][i] / bc1;
                let v_hat = self.v[g][i] / bc2;
                p[i] -= step * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
