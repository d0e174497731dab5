//! The biased self-explaining actor.
//!
//! The conceptizer is the identity, so concepts are the raw observation
//! features. A parametrizer MLP maps `x` (length n) to a relevance matrix
//! `θ(x)` (m x n, one row per action) and the aggregator forms
//!
//! ```text
//! logits_i = θ_i(x) · x + b_i
//! ```
//!
//! Effects `E_i = θ_i(x) ⊙ x` therefore decompose every logit exactly:
//! `logits_i = Σ_j E_ij + b_i`.

use rand::Rng;
use selfex_autodiff::{ParameterSet, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::Mlp;

pub const BIAS_NAME: &str = "aggregator.bias";
pub const PARAMETRIZER_PREFIX: &str = "parametrizer";

/// Anything that maps a batch of observations to action logits on a tape.
pub trait PolicyModel {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn params(&self) -> &ParameterSet;
    fn params_mut(&mut self) -> &mut ParameterSet;

    fn is_trainable(&self, _name: &str) -> bool {
        true
    }

    /// Logits `B x m` for inputs `B x n`; `vars` are `params()` recorded on
    /// `tape` in iteration order.
    fn logits<'t>(&self, tape: &'t Tape, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>>;

    /// Logits for plain values, without keeping the tape.
    fn logits_batch(&self, xs: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.params().record(&tape);
        let x = tape.constant(xs.clone());
        Ok((*self.logits(&tape, &vars, x)?.value()).clone())
    }

    fn logits_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.obs_dim())?;
        Ok(self.logits_batch(&Tensor::row(x.to_vec())?)?.into_data())
    }
}

pub(crate) fn check_len(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::InputLength {
            expected: n,
            actual: x.len(),
        });
    }
    Ok(())
}

/// Identity conceptizer: concepts are the inputs themselves.
pub fn concept(x: &[f64], n: usize) -> Result<Vec<f64>> {
    check_len(x, n)?;
    Ok(x.to_vec())
}

/// Conceptizer reconstruction loss; identically zero for the identity
/// conceptizer.
pub fn conceptizer_loss(x: &[f64]) -> f64 {
    let h = x;
    x.iter().zip(h).map(|(a, b)| (a - b).powi(2)).sum()
}

/// `[I I ... I]`: copies an n-vector into each of m blocks.
fn tile_matrix(n: usize, m: usize) -> Tensor {
    let mut t = Tensor::zeros(n, m * n);
    let d = t.data_mut();
    for i in 0..m {
        for j in 0..n {
            d[j * (m * n) + i * n + j] = 1.0;
        }
    }
    t
}

/// Sums each block of n consecutive columns: `(m·n) x m`.
fn group_matrix(n: usize, m: usize) -> Tensor {
    let mut t = Tensor::zeros(m * n, m);
    let d = t.data_mut();
    for i in 0..m {
        for j in 0..n {
            d[(i * n + j) * m + i] = 1.0;
        }
    }
    t
}

/// Selects block `i` of a flattened relevance matrix: `(m·n) x n`.
fn block_selector(n: usize, m: usize, i: usize) -> Tensor {
    let mut t = Tensor::zeros(m * n, n);
    let d = t.data_mut();
    for j in 0..n {
        d[(i * n + j) * n + j] = 1.0;
    }
    t
}

/// Effects `θ_i ⊙ x` for a batch, flattened row-major as `B x (m·n)`.
pub fn effects_on<'t>(tape: &'t Tape, theta: Var<'t>, x: Var<'t>, m: usize) -> Result<Var<'t>> {
    let n = x.cols();
    let tiled = x.matmul(tape.constant(tile_matrix(n, m)))?;
    Ok(theta.mul(tiled)?)
}

/// Row-wise inner product of relevance and input plus the optional bias.
pub fn aggregate<'t>(
    tape: &'t Tape,
    theta: Var<'t>,
    x: Var<'t>,
    bias: Option<Var<'t>>,
    m: usize,
) -> Result<Var<'t>> {
    let n = x.cols();
    let effects = effects_on(tape, theta, x, m)?;
    let logits = effects.matmul(tape.constant(group_matrix(n, m)))?;
    Ok(match bias {
        Some(b) => logits.add_row(b)?,
        None => logits,
    })
}

/// Per-sample robustness penalty `‖∇x f(x) − θ(x)‖_F` (identity conceptizer
/// Jacobian), as a `B x 1` value that stays differentiable with respect to
/// everything `theta` depends on.
///
/// `x` must be the recorded input that `theta` and `logits` were computed
/// from; `theta` is `B x (m·n)` and `logits` is `B x m`.
pub fn robustness_penalty<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    theta: Var<'t>,
    logits: Var<'t>,
) -> Result<Var<'t>> {
    let (b, n) = (x.rows(), x.cols());
    let m = logits.cols();
    let mut sq: Option<Var<'t>> = None;
    for i in 0..m {
        let mut pick = Tensor::zeros(b, m);
        for r in 0..b {
            pick.data_mut()[r * m + i] = 1.0;
        }
        let fi = logits.mul(tape.constant(pick))?.sum();
        let grad_x = tape.grad(fi, &[x])?[0];
        let theta_i = theta.matmul(tape.constant(block_selector(n, m, i)))?;
        let term = grad_x.sub(theta_i)?.square().sum_cols();
        sq = Some(match sq {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    Ok(sq.ok_or(Error::EmptyBatch)?.sqrt())
}

/// Relevance scores, effects and logits behind one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub observation: Vec<f64>,
    /// `m x n`, row i weighting the features for action i.
    pub relevance: Vec<Vec<f64>>,
    pub effects: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub bias: Vec<f64>,
    pub action: usize,
}

impl LocalExplanation {
    /// Builds the explanation, deriving effects from relevance and input.
    pub fn new(observation: Vec<f64>, relevance: Vec<Vec<f64>>, logits: Vec<f64>, bias: Vec<f64>, action: usize) -> Result<Self> {
        let n = observation.len();
        if relevance.len() != logits.len() || relevance.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "relevance must be {} x {n}",
                logits.len()
            )));
        }
        if action >= logits.len() {
            return Err(Error::UnknownAction {
                action,
                n_actions: logits.len(),
            });
        }
        let effects = relevance
            .iter()
            .map(|row| row.iter().zip(&observation).map(|(t, x)| t * x).collect())
            .collect();
        Ok(Self {
            observation,
            relevance,
            effects,
            logits,
            bias,
            action,
        })
    }

    /// Largest deviation between `logits` and effect row-sums plus bias.
    pub fn decomposition_error(&self) -> f64 {
        self.effects
            .iter()
            .zip(&self.logits)
            .zip(&self.bias)
            .map(|((e, l), b)| (e.iter().sum::<f64>() + b - l).abs())
            .fold(0.0, f64::max)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SennPolicy {
    n: usize,
    m: usize,
    parametrizer: Mlp,
    biased: bool,
    params: ParameterSet,
}

impl SennPolicy {
    /// Fresh policy: random parametrizer with a small output layer and a
    /// zero aggregator bias (absent when `biased` is false).
    pub fn new(n: usize, m: usize, hidden: &[usize], biased: bool, rng: &mut impl Rng) -> Result<Self> {
        let parametrizer = Self::layout(n, m, hidden)?;
        let mut params = ParameterSet::new();
        parametrizer.init(&mut params, rng, 0.01)?;
        if biased {
            params.insert(BIAS_NAME, Tensor::zeros(1, m))?;
        }
        Ok(Self {
            n,
            m,
            parametrizer,
            biased,
            params,
        })
    }

    fn layout(n: usize, m: usize, hidden: &[usize]) -> Result<Mlp> {
        let mut sizes = vec![n];
        sizes.extend_from_slice(hidden);
        sizes.push(m * n);
        Mlp::new(PARAMETRIZER_PREFIX, sizes)
    }

    /// Rebuilds a policy from stored parameters, validating every shape.
    pub fn from_params(n: usize, m: usize, hidden: &[usize], biased: bool, params: ParameterSet) -> Result<Self> {
        let parametrizer = Self::layout(n, m, hidden)?;
        parametrizer.check(&params)?;
        let expected = parametrizer.n_layers() * 2 + usize::from(biased);
        if params.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} parameter tensors, found {}",
                params.len()
            )));
        }
        if biased {
            match params.get(BIAS_NAME) {
                Some(b) if b.shape() == [1, m] => {}
                _ => {
                    return Err(Error::DimensionMismatch(format!(
                        "{BIAS_NAME} must have shape [1, {m}]"
                    )))
                }
            }
        }
        Ok(Self {
            n,
            m,
            parametrizer,
            biased,
            params,
        })
    }

    /// A policy whose relevance matrix is `theta` (m x n) for every input:
    /// hidden weights are zero and the parametrizer output bias holds `theta`.
    pub fn with_constant_relevance(theta: &Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        let (m, n) = (theta.rows(), theta.cols());
        let parametrizer = Self::layout(n, m, &[1])?;
        let mut params = ParameterSet::new();
        parametrizer.init_zeros(&mut params)?;
        params.replace(&parametrizer.bias_name(1), theta.reshaped(1, m * n)?)?;
        let biased = bias.is_some();
        if let Some(b) = bias {
            if b.len() != m {
                return Err(Error::DimensionMismatch(format!("bias must have length {m}")));
            }
            params.insert(BIAS_NAME, Tensor::row(b)?)?;
        }
        Ok(Self {
            n,
            m,
            parametrizer,
            biased,
            params,
        })
    }

    pub fn is_biased(&self) -> bool {
        self.biased
    }

    pub fn parametrizer(&self) -> &Mlp {
        &self.parametrizer
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let s = &self.parametrizer.sizes;
        s[1..s.len() - 1].to_vec()
    }

    /// Aggregator bias; zeros when the policy is unbiased.
    pub fn bias(&self) -> Vec<f64> {
        self.params
            .get(BIAS_NAME)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; self.m])
    }

    fn bias_slot(&self) -> Option<usize> {
        self.params.names().position(|n| n == BIAS_NAME)
    }

    /// Flattened relevance `B x (m·n)` on the tape.
    pub fn relevance_on<'t>(&self, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let slots = self.parametrizer.slots(&self.params);
        self.parametrizer.forward(vars, &slots, x)
    }

    /// Logits computed from an already recorded relevance value.
    pub fn aggregate_on<'t>(&self, tape: &'t Tape, vars: &[Var<'t>], theta: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
        aggregate(tape, theta, x, self.bias_slot().map(|i| vars[i]), self.m)
    }

    pub fn concept(&self, x: &[f64]) -> Result<Vec<f64>> {
        concept(x, self.n)
    }

    /// `θ(x)` as an m x n matrix.
    pub fn relevance(&self, x: &[f64]) -> Result<Tensor> {
        check_len(x, self.n)?;
        let tape = Tape::new();
        let vars = self.params.record(&tape);
        let xv = tape.constant(Tensor::row(x.to_vec())?);
        let theta = self.relevance_on(&vars, xv)?;
        Ok(theta.value().reshaped(self.m, self.n)?)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.logits_one(x)
    }

    /// `E_i = θ_i(x) ⊙ x` as an m x n matrix.
    pub fn effects(&self, x: &[f64]) -> Result<Tensor> {
        let theta = self.relevance(x)?;
        let mut e = theta;
        let n = self.n;
        for (k, v) in e.data_mut().iter_mut().enumerate() {
            *v *= x[k % n];
        }
        Ok(e)
    }

    /// Relevance, effects, logits and the greedy action for one input.
    pub fn explain(&self, x: &[f64]) -> Result<LocalExplanation> {
        check_len(x, self.n)?;
        let tape = Tape::new();
        let vars = self.params.record(&tape);
        let xv = tape.constant(Tensor::row(x.to_vec())?);
        let theta = self.relevance_on(&vars, xv)?;
        let logits = self.aggregate_on(&tape, &vars, theta, xv)?.value().data().to_vec();
        let theta = theta.value();
        let relevance = (0..self.m)
            .map(|i| theta.data()[i * self.n..(i + 1) * self.n].to_vec())
            .collect();
        let action = argmax(&logits);
        LocalExplanation::new(x.to_vec(), relevance, logits, self.bias(), action)
    }

    /// Robustness penalty at a single input.
    pub fn robustness_loss(&self, x: &[f64]) -> Result<f64> {
        check_len(x, self.n)?;
        Ok(self.robustness_batch(&Tensor::row(x.to_vec())?)?[0])
    }

    pub fn robustness_batch(&self, xs: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = self.params.record(&tape);
        let xv = tape.leaf(xs.clone());
        let theta = self.relevance_on(&vars, xv)?;
        let logits = self.aggregate_on(&tape, &vars, theta, xv)?;
        Ok(robustness_penalty(&tape, xv, theta, logits)?.value().data().to_vec())
    }
}

impl PolicyModel for SennPolicy {
    fn obs_dim(&self) -> usize {
        self.n
    }

    fn n_actions(&self) -> usize {
        self.m
    }

    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn logits<'t>(&self, tape: &'t Tape, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let theta = self.relevance_on(vars, x)?;
        self.aggregate_on(tape, vars, theta, x)
    }
}

/// Plain MLP actor producing logits directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnPolicy {
    net: Mlp,
    params: ParameterSet,
}

impl DnnPolicy {
    pub fn new(n: usize, m: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let net = Self::layout(n, m, hidden)?;
        let mut params = ParameterSet::new();
        net.init(&mut params, rng, 0.01)?;
        Ok(Self { net, params })
    }

    fn layout(n: usize, m: usize, hidden: &[usize]) -> Result<Mlp> {
        let mut sizes = vec![n];
        sizes.extend_from_slice(hidden);
        sizes.push(m);
        Mlp::new("policy", sizes)
    }

    pub fn from_params(n: usize, m: usize, hidden: &[usize], params: ParameterSet) -> Result<Self> {
        let net = Self::layout(n, m, hidden)?;
        net.check(&params)?;
        if params.len() != 2 * net.n_layers() {
            return Err(Error::DimensionMismatch("unexpected parameter tensors".into()));
        }
        Ok(Self { net, params })
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let s = &self.net.sizes;
        s[1..s.len() - 1].to_vec()
    }
}

impl PolicyModel for DnnPolicy {
    fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn logits<'t>(&self, _tape: &'t Tape, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let slots = self.net.slots(&self.params);
        self.net.forward(vars, &slots, x)
    }
}

/// Which actor architecture to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorKind {
    /// SENN with a trainable aggregator bias.
    Senn,
    /// SENN with the bias pinned at zero.
    SennNobias,
    /// Plain MLP logits.
    Dnn,
}

impl std::str::FromStr for ActorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "senn" => Ok(Self::Senn),
            "senn-nobias" => Ok(Self::SennNobias),
            "dnn" => Ok(Self::Dnn),
            other => Err(Error::InvalidArgument(format!("unknown actor kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ActorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Senn => "senn",
            Self::SennNobias => "senn-nobias",
            Self::Dnn => "dnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Actor {
    Senn(SennPolicy),
    Dnn(DnnPolicy),
}

impl Actor {
    pub fn new(kind: ActorKind, n: usize, m: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Ok(match kind {
            ActorKind::Senn => Self::Senn(SennPolicy::new(n, m, hidden, true, rng)?),
            ActorKind::SennNobias => Self::Senn(SennPolicy::new(n, m, hidden, false, rng)?),
            ActorKind::Dnn => Self::Dnn(DnnPolicy::new(n, m, hidden, rng)?),
        })
    }

    pub fn kind(&self) -> ActorKind {
        match self {
            Self::Senn(p) if p.is_biased() => ActorKind::Senn,
            Self::Senn(_) => ActorKind::SennNobias,
            Self::Dnn(_) => ActorKind::Dnn,
        }
    }

    pub fn as_senn(&self) -> Option<&SennPolicy> {
        match self {
            Self::Senn(p) => Some(p),
            Self::Dnn(_) => None,
        }
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        match self {
            Self::Senn(p) => p.hidden_sizes(),
            Self::Dnn(p) => p.hidden_sizes(),
        }
    }

    fn inner(&self) -> &dyn PolicyDyn {
        match self {
            Self::Senn(p) => p,
            Self::Dnn(p) => p,
        }
    }
}

// Object-safe view used to forward the trait through the enum.
trait PolicyDyn {
    fn obs_dim_dyn(&self) -> usize;
    fn n_actions_dyn(&self) -> usize;
    fn params_dyn(&self) -> &ParameterSet;
    fn logits_dyn<'t>(&self, tape: &'t Tape, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>>;
}

impl<P: PolicyModel> PolicyDyn for P {
    fn obs_dim_dyn(&self) -> usize {
        self.obs_dim()
    }
    fn n_actions_dyn(&self) -> usize {
        self.n_actions()
    }
    fn params_dyn(&self) -> &ParameterSet {
        self.params()
    }
    fn logits_dyn<'t>(&self, tape: &'t Tape, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        self.logits(tape, vars, x)
    }
}

impl PolicyModel for Actor {
    fn obs_dim(&self) -> usize {
        self.inner().obs_dim_dyn()
    }

    fn n_actions(&self) -> usize {
        self.inner().n_actions_dyn()
    }

    fn params(&self) -> &ParameterSet {
        self.inner().params_dyn()
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        match self {
            Self::Senn(p) => p.params_mut(),
            Self::Dnn(p) => p.params_mut(),
        }
    }

    fn logits<'t>(&self, tape: &'t Tape, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        self.inner().logits_dyn(tape, vars, x)
    }
}
