use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::math;
use crate::rng::Rng;
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => math::tanh(x),
            Self::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[1, out]`
    pub bias: Tensor,
    pub activation: Activation,
}

/// Fully connected network; row-per-sample inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. Hidden layers use `hidden`,
    /// the last layer is identity.
    pub fn new(widths: &[usize], hidden: Activation, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "bad layer widths {widths:?}"
            )));
        }
        let n_layers = widths.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                let weight =
                    Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit));
                Dense {
                    weight,
                    bias: Tensor::zeros(1, fan_out),
                    activation: if l + 1 == n_layers {
                        Activation::Identity
                    } else {
                        hidden
                    },
                }
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    /// Builds a network from explicit layers, checking width consistency.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let mut widths = Vec::with_capacity(layers.len() + 1);
        for (l, d) in layers.iter().enumerate() {
            let (i, o) = d.weight.dims();
            if d.bias.dims() != (1, o) {
                return Err(dim_err(&format!("layer {l} bias"), (1, o), d.bias.dims()));
            }
            if let Some(&prev) = widths.last() {
                if prev != i {
                    return Err(dim_err(&format!("layer {l} input"), prev, i));
                }
            } else {
                widths.push(i);
            }
            widths.push(o);
        }
        Ok(Self { widths, layers })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Records every parameter on `tape`, in [`Mlp::params`] order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p)).collect()
    }

    /// Taped forward pass; `vars` comes from [`Mlp::register`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let cols = tape.value(x)?.cols();
        if cols != self.input_width() {
            return Err(dim_err("mlp layer 0 input", self.input_width(), cols));
        }
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, vars[2 * l])?;
            let z = tape.add_row(z, vars[2 * l + 1])?;
            h = match layer.activation {
                Activation::Relu => tape.relu(z)?,
                Activation::Tanh => tape.tanh(z)?,
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Untaped forward pass.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_width() {
            return Err(dim_err("mlp layer 0 input", self.input_width(), x.cols()));
        }
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            if h.cols() != layer.weight.rows() {
                return Err(dim_err(
                    &format!("mlp layer {l} input"),
                    layer.weight.rows(),
                    h.cols(),
                ));
            }
            let mut z = h.matmul(&layer.weight)?;
            let out = z.cols();
            let b = layer.bias.values();
            for (k, v) in z.values_mut().iter_mut().enumerate() {
                *v = layer.activation.apply(*v + b[k % out]);
            }
            h = z;
        }
        Ok(h)
    }
}

/// Taped forward pass of `net` on `x`, returning the tape and output handle.
pub fn mlp_forward(net: &Mlp, x: &Tensor) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    let vars = net.register(&mut tape);
    let xv = tape.constant(x.clone());
    let out = net.forward(&mut tape, &vars, xv)?;
    Ok((tape, out))
}
