use alloc::string::ToString;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
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

/// Bias-corrected Adam moments for an ordered parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        let zeros = |p: &&Tensor| Tensor::zeros(p.rows(), p.cols());
        Self {
            config,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    /// One update using the `grad` field of every parameter.
    ///
    /// Parameters without a gradient are treated as having zero gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], names: &[&str]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(dim_err(
                "adam parameter count",
                self.first.len(),
                params.len(),
            ));
        }
        for (k, p) in params.iter().enumerate() {
            if p.len() != self.first[k].len() {
                return Err(dim_err(
                    "adam parameter shape",
                    self.first[k].dims(),
                    p.dims(),
                ));
            }
            if let Some(g) = &p.grad {
                if g.len() != p.len() {
                    return Err(dim_err("adam gradient shape", p.len(), g.len()));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    let param = names
                        .get(k)
                        .map_or_else(|| alloc::format!("#{k}"), |n| n.to_string());
                    return Err(Error::NonFiniteGradient { param });
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - math::powf(beta1, t);
        let c2 = 1.0 - math::powf(beta2, t);
        for (k, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad.take() else { continue };
            let m = self.first[k].values_mut();
            let v = self.second[k].values_mut();
            let (m, v): (&mut [f64], &mut [f64]) = (m, v);
            let vals = p.values_mut();
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                vals[i] -= lr * mhat / (math::sqrt(vhat) + eps);
            }
            p.grad = Some(g);
        }
        Ok(())
    }
}

/// Applies one Adam step to `params` given explicit gradients.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    names: &[&str],
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(dim_err("adam gradient count", params.len(), grads.len()));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        p.grad = Some(g.values().to_vec());
    }
    state.step(params, names)
}
