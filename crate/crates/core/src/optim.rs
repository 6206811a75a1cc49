//! Bias-corrected Adam, shared by the penalty attack and victim training.

use serde::{Deserialize, Serialize};

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
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    u: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            u: vec![0.0; len],
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.u
    }

    /// Consumes gradient `g` and returns the step `-lr * m_hat / (sqrt(u_hat) + eps)`.
    pub fn update(&mut self, g: &[f64]) -> Vec<f64> {
        assert_eq!(
            g.len(),
            self.m.len(),
            "gradient length must match the optimizer state"
        );
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        self.m
            .iter_mut()
            .zip(self.u.iter_mut())
            .zip(g)
            .map(|((m, u), &g)| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *u = beta2 * *u + (1.0 - beta2) * g * g;
                -lr * (*m / bc1) / ((*u / bc2).sqrt() + eps)
            })
            .collect()
    }

    /// Applies [`update`](Self::update) to `params` in place.
    pub fn step(&mut self, params: &mut [f64], g: &[f64]) {
        for (p, d) in params.iter_mut().zip(self.update(g)) {
            *p += d;
        }
    }
}
