use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter in the
/// order the parameters were given at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of steps taken.
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::arg(format!("invalid Adam settings {config:?}")));
        }
        Ok(Self {
            config,
            t: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        })
    }

    /// One update from the accumulated gradients, which are then cleared.
    pub fn step(&mut self, params: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer holds {} moments but got {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if !p.has_grad() {
                return Err(Error::contract(format!("parameter {i} {:?} has no gradient", p.shape())));
            }
            if p.numel() != self.m[i].len() {
                return Err(Error::contract(format!("parameter {i} changed size")));
            }
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        for ((p, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad().expect("checked above");
            p.update_data(|data| {
                for i in 0..data.len() {
                    m[i] = b1 * m[i] + (one - b1) * g[i];
                    v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
            p.zero_grad();
        }
        Ok(())
    }
}

/// Global L2 norm of all present gradients.
pub fn grad_norm<T: Scalar>(params: &[Tensor<T>]) -> f64 {
    params
        .iter()
        .map(|p| {
            p.with_grad(|g| g.map_or(0.0, |g| g.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>()))
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &[Tensor<T>], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for p in params {
            p.with_grad(|g| {
                if let Some(g) = g {
                    g.iter_mut().for_each(|v| *v *= s);
                }
            });
        }
    }
    norm
}
