use rand::Rng;
use selfex_autodiff::{ParameterSet, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::Mlp;

/// Tanh MLP estimating the value of one UE observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    net: Mlp,
    params: ParameterSet,
}

impl Critic {
    pub fn new(obs_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let net = Self::layout(obs_dim, hidden)?;
        let mut params = ParameterSet::new();
        net.init(&mut params, rng, 1.0)?;
        Ok(Self { net, params })
    }

    fn layout(obs_dim: usize, hidden: &[usize]) -> Result<Mlp> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Mlp::new("critic", sizes)
    }

    pub fn from_params(obs_dim: usize, hidden: &[usize], params: ParameterSet) -> Result<Self> {
        let net = Self::layout(obs_dim, hidden)?;
        net.check(&params)?;
        if params.len() != 2 * net.n_layers() {
            return Err(Error::DimensionMismatch("unexpected critic tensors".into()));
        }
        Ok(Self { net, params })
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let s = &self.net.sizes;
        s[1..s.len() - 1].to_vec()
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Values `B x 1` on the tape.
    pub fn value_on<'t>(&self, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let slots = self.net.slots(&self.params);
        self.net.forward(vars, &slots, x)
    }

    pub fn values(&self, xs: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = self.params.record(&tape);
        let x = tape.constant(xs.clone());
        Ok(self.value_on(&vars, x)?.value().data().to_vec())
    }
}
