use rand::Rng;
use selfex_autodiff::{ParameterSet, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer layout of a fully connected tanh network with a linear output.
///
/// Parameters live in a [`ParameterSet`] under `{prefix}.l{i}.w` (shape
/// `in x out`) and `{prefix}.l{i}.b` (shape `1 x out`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub prefix: String,
    pub sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            prefix: prefix.into(),
            sizes,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.b", self.prefix)
    }

    /// Adds Xavier-uniform weights and zero biases to `params`; the output
    /// layer's weights are additionally scaled by `output_gain`.
    pub fn init(&self, params: &mut ParameterSet, rng: &mut impl Rng, output_gain: f64) -> Result<()> {
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let gain = if l + 1 == self.n_layers() { output_gain } else { 1.0 };
            let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| if limit > 0.0 { rng.random_range(-limit..limit) } else { 0.0 })
                .collect();
            params.insert(self.weight_name(l), Tensor::matrix(fan_in, fan_out, w)?)?;
            params.insert(self.bias_name(l), Tensor::zeros(1, fan_out))?;
        }
        Ok(())
    }

    pub fn init_zeros(&self, params: &mut ParameterSet) -> Result<()> {
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            params.insert(self.weight_name(l), Tensor::zeros(fan_in, fan_out))?;
            params.insert(self.bias_name(l), Tensor::zeros(1, fan_out))?;
        }
        Ok(())
    }

    /// Checks that `params` holds every layer with the expected shape.
    pub fn check(&self, params: &ParameterSet) -> Result<()> {
        for l in 0..self.n_layers() {
            let expect = [
                (self.weight_name(l), [self.sizes[l], self.sizes[l + 1]]),
                (self.bias_name(l), [1, self.sizes[l + 1]]),
            ];
            for (name, shape) in expect {
                let t = params
                    .get(&name)
                    .ok_or_else(|| Error::DimensionMismatch(format!("missing parameter {name}")))?;
                if t.shape() != shape {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Indices of this network's tensors inside `params`, as `(w, b)` pairs.
    pub fn slots(&self, params: &ParameterSet) -> Vec<(usize, usize)> {
        let names: Vec<&str> = params.names().collect();
        let find = |n: String| names.iter().position(|x| *x == n).expect("layer present");
        (0..self.n_layers())
            .map(|l| (find(self.weight_name(l)), find(self.bias_name(l))))
            .collect()
    }

    /// Forward pass on recorded parameters; `slots` comes from [`Mlp::slots`].
    pub fn forward<'t>(&self, vars: &[Var<'t>], slots: &[(usize, usize)], x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (l, &(w, b)) in slots.iter().enumerate() {
            h = h.matmul(vars[w])?.add_row(vars[b])?;
            if l + 1 < slots.len() {
                h = h.tanh();
            }
        }
        Ok(h)
    }
}
