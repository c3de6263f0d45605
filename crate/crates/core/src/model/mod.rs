//! Series, Parallel and Hybrid belief-net wirings.
//!
//! Every encoder, conditional prior, likelihood and prediction head is its own
//! [`DenseNet`]. Conditioning on `t`, `y` or upstream latents is by column
//! concatenation onto the network input. Gaussian networks emit
//! `[mean | log-variance]`.

mod io;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Activation, DenseNet, Graph, NetOutput, ParamStore, Tensor, Var};
use crate::data::{Dataset, FeatureSchema, Standardizer};
use crate::distributions::GaussianNode;
use crate::error::{Error, Result};

pub use io::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Series,
    Parallel,
    #[default]
    Hybrid,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Series => "series",
            ModelKind::Parallel => "parallel",
            ModelKind::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeType {
    #[default]
    Real,
    Binary,
}

/// Importance weights on the factual loss: population-based (inverse marginal
/// treatment probability) or context-aware (propensity learned from Z₅).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    #[default]
    Pb,
    Ca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Latent {
    Z1,
    Z2,
    Z3,
    Z4,
    Z5,
    Z6,
    Z7,
}

impl Latent {
    pub const ALL: [Latent; 7] = [
        Latent::Z1,
        Latent::Z2,
        Latent::Z3,
        Latent::Z4,
        Latent::Z5,
        Latent::Z6,
        Latent::Z7,
    ];

    pub fn number(self) -> usize {
        self as usize + 1
    }
}

impl fmt::Display for Latent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "z{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Width of every latent variable unless overridden in `latent_dims`.
    pub latent_dim: usize,
    pub latent_dims: BTreeMap<Latent, usize>,
    pub hidden_width: usize,
    /// Hidden layers per network.
    pub depth: usize,
    pub outcome: OutcomeType,
    pub weight_scheme: WeightScheme,
    /// Posterior draws averaged at prediction time; 0 uses posterior means.
    pub posterior_samples: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Hybrid,
            latent_dim: 20,
            latent_dims: BTreeMap::new(),
            hidden_width: 200,
            depth: 3,
            outcome: OutcomeType::Real,
            weight_scheme: WeightScheme::Pb,
            posterior_samples: 0,
        }
    }
}

impl ModelConfig {
    pub fn dim(&self, z: Latent) -> usize {
        self.latent_dims.get(&z).copied().unwrap_or(self.latent_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight_scheme == WeightScheme::Ca && self.kind != ModelKind::Hybrid {
            return Err(Error::Config(format!(
                "context-aware weights need the hybrid model, not {}",
                self.kind
            )));
        }
        if self.latent_dim == 0 || self.latent_dims.values().any(|&d| d == 0) {
            return Err(Error::Config("latent dimensions must be at least 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        Ok(())
    }
}

/// What a network models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Posterior(Latent),
    Prior(Latent),
    Likelihood,
    /// Arm-specific outcome head, 0 or 1.
    Outcome(u8),
    /// q(t | z₃).
    Treatment,
    /// Propensity head on z₅ used for context-aware weights.
    Propensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    X,
    T,
    Y,
    Z(Latent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    Gaussian(Latent),
    Features,
    Logit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub role: Role,
    pub inputs: Vec<Input>,
    pub output: Output,
}

fn spec(role: Role, inputs: &[Input], output: Output) -> NetSpec {
    NetSpec {
        role,
        inputs: inputs.to_vec(),
        output,
    }
}

/// Networks of each model in construction order.
pub fn wiring(kind: ModelKind) -> Vec<NetSpec> {
    use Input::*;
    use Latent::*;
    match kind {
        ModelKind::Series => vec![
            spec(Role::Posterior(Z1), &[X, T], Output::Gaussian(Z1)),
            spec(Role::Posterior(Z2), &[Y, Z(Z1)], Output::Gaussian(Z2)),
            spec(Role::Prior(Z1), &[Y, Z(Z2)], Output::Gaussian(Z1)),
            spec(Role::Likelihood, &[Z(Z1), T], Output::Features),
            spec(Role::Outcome(0), &[Z(Z1)], Output::Logit),
            spec(Role::Outcome(1), &[Z(Z1)], Output::Logit),
        ],
        ModelKind::Parallel => vec![
            spec(Role::Posterior(Z1), &[X, T], Output::Gaussian(Z1)),
            spec(Role::Posterior(Z2), &[Y, Z(Z1)], Output::Gaussian(Z2)),
            spec(Role::Posterior(Z3), &[X, Y], Output::Gaussian(Z3)),
            spec(Role::Posterior(Z4), &[T, Z(Z3)], Output::Gaussian(Z4)),
            spec(Role::Prior(Z1), &[Y, Z(Z2)], Output::Gaussian(Z1)),
            spec(Role::Prior(Z3), &[T, Z(Z4)], Output::Gaussian(Z3)),
            spec(Role::Likelihood, &[Z(Z1), Z(Z3)], Output::Features),
            spec(Role::Outcome(0), &[Z(Z1)], Output::Logit),
            spec(Role::Outcome(1), &[Z(Z1)], Output::Logit),
            spec(Role::Treatment, &[Z(Z3)], Output::Logit),
        ],
        ModelKind::Hybrid => vec![
            spec(Role::Posterior(Z7), &[X, T], Output::Gaussian(Z7)),
            spec(Role::Posterior(Z1), &[Z(Z7)], Output::Gaussian(Z1)),
            spec(Role::Posterior(Z5), &[Z(Z7)], Output::Gaussian(Z5)),
            spec(Role::Posterior(Z2), &[Y, Z(Z1)], Output::Gaussian(Z2)),
            spec(Role::Posterior(Z6), &[Y, Z(Z5)], Output::Gaussian(Z6)),
            spec(Role::Posterior(Z3), &[X, Y], Output::Gaussian(Z3)),
            spec(Role::Posterior(Z4), &[T, Z(Z3)], Output::Gaussian(Z4)),
            spec(Role::Prior(Z1), &[Y, Z(Z2)], Output::Gaussian(Z1)),
            spec(Role::Prior(Z3), &[T, Z(Z4)], Output::Gaussian(Z3)),
            spec(Role::Prior(Z5), &[Y, Z(Z6)], Output::Gaussian(Z5)),
            spec(Role::Prior(Z7), &[Z(Z1), Z(Z5)], Output::Gaussian(Z7)),
            spec(Role::Likelihood, &[Z(Z3), Z(Z7)], Output::Features),
            spec(Role::Outcome(0), &[Z(Z1), Z(Z5)], Output::Logit),
            spec(Role::Outcome(1), &[Z(Z1), Z(Z5)], Output::Logit),
            spec(Role::Treatment, &[Z(Z3)], Output::Logit),
            spec(Role::Propensity, &[Z(Z5)], Output::Logit),
        ],
    }
}

fn describe_inputs(inputs: &[Input]) -> String {
    inputs
        .iter()
        .map(|i| match i {
            Input::X => "x".to_string(),
            Input::T => "t".to_string(),
            Input::Y => "y".to_string(),
            Input::Z(z) => z.to_string(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl NetSpec {
    /// Name of the modeled distribution, e.g. `q(z1|x,t)`.
    pub fn label(&self) -> String {
        let args = describe_inputs(&self.inputs);
        match self.role {
            Role::Posterior(z) => format!("q({z}|{args})"),
            Role::Prior(z) => format!("p({z}|{args})"),
            Role::Likelihood => format!("p(x|{args})"),
            Role::Outcome(arm) => format!("q(y|{args})[t={arm}]"),
            Role::Treatment => format!("q(t|{args})"),
            Role::Propensity => format!("ca(t|{args})"),
        }
    }

    /// The distribution this network realizes; both outcome heads map to one
    /// `q(y|·)`, the propensity head to none.
    pub fn distribution(&self) -> Option<String> {
        match self.role {
            Role::Outcome(_) => Some(format!("q(y|{})", describe_inputs(&self.inputs))),
            Role::Propensity => None,
            _ => Some(self.label()),
        }
    }
}

/// Source of the standard-normal draws used by reparameterized sampling.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Noise {
    Seeded(ChaCha8Rng),
    Zero,
}

impl Noise {
    pub fn seeded(seed: u64) -> Self {
        Noise::Seeded(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn draw(&mut self, rows: usize, cols: usize) -> Tensor {
        match self {
            Noise::Seeded(rng) => Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng)),
            Noise::Zero => Array2::zeros((rows, cols)),
        }
    }
}

/// What the probe feeds encoders whose inputs include other latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeUpstream {
    /// Posterior means the upstream encoders produce for the probe vector.
    #[default]
    PosteriorMeans,
    /// Zero vectors; encoders fed only by latents then see a constant input.
    Zeros,
}

/// A mini-batch in model space (standardized covariates and outcome).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBatch {
    pub x: Tensor,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
}

impl ModelBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn arm_indices(&self) -> [Vec<usize>; 2] {
        let mut arms = [Vec::new(), Vec::new()];
        for (i, &t) in self.t.iter().enumerate() {
            arms[t as usize].push(i);
        }
        arms
    }
}

/// Graph handles for every quantity the objective needs from one batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub kind: ModelKind,
    pub x: Var,
    pub t: Var,
    pub y: Var,
    pub t_bits: Vec<u8>,
    pub posteriors: BTreeMap<Latent, GaussianNode>,
    pub samples: BTreeMap<Latent, Var>,
    /// Learned conditional priors; latents absent here have a unit Gaussian prior.
    pub priors: BTreeMap<Latent, GaussianNode>,
    /// Per-feature Gaussian means or Bernoulli logits.
    pub reconstruction: Var,
    /// Factual-arm outcome head output (n×1): a prediction for real outcomes,
    /// a logit for binary ones.
    pub outcome: Var,
    pub treatment_logits: Option<Var>,
    pub propensity_logits: Option<Var>,
}

impl ForwardTrace {
    /// (posterior, conditional prior or `None` for N(0, I)) per latent.
    pub fn kl_pairs(&self) -> Vec<(Latent, GaussianNode, Option<GaussianNode>)> {
        self.posteriors
            .iter()
            .map(|(z, q)| (*z, *q, self.priors.get(z).copied()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub scaler: Standardizer,
    pub params: ParamStore,
    pub nets: BTreeMap<Role, DenseNet>,
    specs: Vec<NetSpec>,
}

impl ModelGraph {
    pub fn build(config: ModelConfig, schema: FeatureSchema, seed: u64) -> Result<Self> {
        config.validate()?;
        if schema.width() == 0 {
            return Err(Error::Schema("at least one covariate is required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut nets = BTreeMap::new();
        let specs = wiring(config.kind);
        for spec in &specs {
            let input = spec
                .inputs
                .iter()
                .map(|i| match i {
                    Input::X => schema.width(),
                    Input::T | Input::Y => 1,
                    Input::Z(z) => config.dim(*z),
                })
                .sum();
            let output = match spec.output {
                Output::Gaussian(z) => 2 * config.dim(z),
                Output::Features => schema.width(),
                Output::Logit => 1,
            };
            let net = DenseNet::new(
                &mut params,
                spec.label(),
                input,
                config.hidden_width,
                config.depth,
                output,
                Activation::Elu,
                &mut rng,
            );
            nets.insert(spec.role, net);
        }
        Ok(ModelGraph {
            scaler: Standardizer::identity(schema.width()),
            config,
            schema,
            params,
            nets,
            specs,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn specs(&self) -> &[NetSpec] {
        &self.specs
    }

    pub fn net(&self, role: Role) -> Option<&DenseNet> {
        self.nets.get(&role)
    }

    /// Distinct distributions realized by networks (the outcome heads count once).
    pub fn distributions(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for d in self.specs.iter().filter_map(NetSpec::distribution) {
            if !out.contains(&d) {
                out.push(d);
            }
        }
        out
    }

    /// Latent variables of the model in index order.
    pub fn latents(&self) -> Vec<Latent> {
        let mut out: Vec<Latent> = self
            .specs
            .iter()
            .filter_map(|s| match s.role {
                Role::Posterior(z) => Some(z),
                _ => None,
            })
            .collect();
        out.sort();
        out
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if schema.width() != self.schema.width() {
            return Err(Error::Schema(format!(
                "model expects {} covariates, data has {}",
                self.schema.width(),
                schema.width()
            )));
        }
        if schema.kinds != self.schema.kinds {
            return Err(Error::Schema("covariate kinds differ from the model's schema".into()));
        }
        Ok(())
    }

    /// Standardizes rows `indices` of `data` into a model-space batch.
    pub fn prepare_batch(&self, data: &Dataset, indices: &[usize]) -> Result<ModelBatch> {
        self.check_schema(&data.schema)?;
        let raw = data.x.select(ndarray::Axis(0), indices);
        Ok(ModelBatch {
            x: self.scaler.transform_x(&raw),
            t: indices.iter().map(|&i| data.t[i]).collect(),
            y: indices
                .iter()
                .map(|&i| match self.config.outcome {
                    OutcomeType::Real => self.scaler.transform_y(data.y[i]),
                    OutcomeType::Binary => data.y[i],
                })
                .collect(),
        })
    }

    pub fn prepare_all(&self, data: &Dataset) -> Result<ModelBatch> {
        let idx: Vec<usize> = (0..data.len()).collect();
        self.prepare_batch(data, &idx)
    }

    fn run(&self, g: &mut Graph, role: Role, inputs: &[Var]) -> Result<NetOutput> {
        let net = self
            .nets
            .get(&role)
            .ok_or_else(|| Error::Config(format!("{} model has no {role:?} network", self.kind())))?;
        let input = if inputs.len() == 1 {
            inputs[0]
        } else {
            g.concat(inputs)?
        };
        net.forward_traced(g, input)
    }

    fn gaussian(&self, g: &mut Graph, z: Latent, role: Role, inputs: &[Var]) -> Result<GaussianNode> {
        let out = self.run(g, role, inputs)?.output;
        GaussianNode::from_params(g, out, self.config.dim(z))
    }

    fn posterior_sample(
        &self,
        g: &mut Graph,
        noise: &mut Noise,
        z: Latent,
        inputs: &[Var],
        trace: &mut ForwardTrace,
    ) -> Result<Var> {
        let q = self.gaussian(g, z, Role::Posterior(z), inputs)?;
        let (n, d) = g.shape(q.mean);
        let eps = g.constant(noise.draw(n, d));
        let sample = q.rsample(g, eps)?;
        trace.posteriors.insert(z, q);
        trace.samples.insert(z, sample);
        Ok(sample)
    }

    fn prior(&self, g: &mut Graph, z: Latent, inputs: &[Var], trace: &mut ForwardTrace) -> Result<()> {
        let p = self.gaussian(g, z, Role::Prior(z), inputs)?;
        trace.priors.insert(z, p);
        Ok(())
    }

    /// Factual head output: each row goes through the head of its own arm.
    fn factual_outcome(&self, g: &mut Graph, input: Var, t: &[u8]) -> Result<Var> {
        let mut parts = Vec::new();
        for arm in [0u8, 1] {
            let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] == arm).collect();
            if idx.is_empty() {
                continue;
            }
            let rows = g.gather_rows(input, &idx)?;
            let out = self.run(g, Role::Outcome(arm), &[rows])?.output;
            parts.push((out, idx));
        }
        g.scatter_rows(&parts, t.len())
    }

    /// One training pass over `batch`: samples every latent once, evaluates
    /// conditional priors, the likelihood and all heads.
    pub fn forward_train(&self, g: &mut Graph, batch: &ModelBatch, noise: &mut Noise) -> Result<ForwardTrace> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if batch.x.ncols() != self.schema.width() {
            return Err(Error::Schema(format!(
                "batch has {} covariates, model expects {}",
                batch.x.ncols(),
                self.schema.width()
            )));
        }
        let n = batch.len();
        let x = g.constant(batch.x.clone());
        let t = g.constant(Array2::from_shape_fn((n, 1), |(i, _)| batch.t[i] as f64));
        let y = g.constant(Array2::from_shape_vec((n, 1), batch.y.clone()).expect("n rows"));
        let mut trace = ForwardTrace {
            kind: self.kind(),
            x,
            t,
            y,
            t_bits: batch.t.clone(),
            posteriors: BTreeMap::new(),
            samples: BTreeMap::new(),
            priors: BTreeMap::new(),
            reconstruction: x,
            outcome: y,
            treatment_logits: None,
            propensity_logits: None,
        };
        use Latent::*;
        match self.kind() {
            ModelKind::Series => {
                let z1 = self.posterior_sample(g, noise, Z1, &[x, t], &mut trace)?;
                let z2 = self.posterior_sample(g, noise, Z2, &[y, z1], &mut trace)?;
                self.prior(g, Z1, &[y, z2], &mut trace)?;
                trace.reconstruction = self.run(g, Role::Likelihood, &[z1, t])?.output;
                trace.outcome = self.factual_outcome(g, z1, &batch.t)?;
            }
            ModelKind::Parallel => {
                let z1 = self.posterior_sample(g, noise, Z1, &[x, t], &mut trace)?;
                let z2 = self.posterior_sample(g, noise, Z2, &[y, z1], &mut trace)?;
                let z3 = self.posterior_sample(g, noise, Z3, &[x, y], &mut trace)?;
                let z4 = self.posterior_sample(g, noise, Z4, &[t, z3], &mut trace)?;
                self.prior(g, Z1, &[y, z2], &mut trace)?;
                self.prior(g, Z3, &[t, z4], &mut trace)?;
                trace.reconstruction = self.run(g, Role::Likelihood, &[z1, z3])?.output;
                trace.outcome = self.factual_outcome(g, z1, &batch.t)?;
                trace.treatment_logits = Some(self.run(g, Role::Treatment, &[z3])?.output);
            }
            ModelKind::Hybrid => {
                let z7 = self.posterior_sample(g, noise, Z7, &[x, t], &mut trace)?;
                let z1 = self.posterior_sample(g, noise, Z1, &[z7], &mut trace)?;
                let z5 = self.posterior_sample(g, noise, Z5, &[z7], &mut trace)?;
                let z2 = self.posterior_sample(g, noise, Z2, &[y, z1], &mut trace)?;
                let z6 = self.posterior_sample(g, noise, Z6, &[y, z5], &mut trace)?;
                let z3 = self.posterior_sample(g, noise, Z3, &[x, y], &mut trace)?;
                let z4 = self.posterior_sample(g, noise, Z4, &[t, z3], &mut trace)?;
                self.prior(g, Z1, &[y, z2], &mut trace)?;
                self.prior(g, Z3, &[t, z4], &mut trace)?;
                self.prior(g, Z5, &[y, z6], &mut trace)?;
                self.prior(g, Z7, &[z1, z5], &mut trace)?;
                trace.reconstruction = self.run(g, Role::Likelihood, &[z3, z7])?.output;
                let z15 = g.concat(&[z1, z5])?;
                trace.outcome = self.factual_outcome(g, z15, &batch.t)?;
                trace.treatment_logits = Some(self.run(g, Role::Treatment, &[z3])?.output);
                trace.propensity_logits = Some(self.run(g, Role::Propensity, &[z5])?.output);
            }
        }
        Ok(trace)
    }

    /// Posterior mean, or one reparameterized draw when `noise` is given.
    fn encode(&self, g: &mut Graph, z: Latent, inputs: &[Var], noise: Option<&mut Noise>) -> Result<Var> {
        let q = self.gaussian(g, z, Role::Posterior(z), inputs)?;
        match noise {
            None => Ok(q.mean),
            Some(noise) => {
                let (n, d) = g.shape(q.mean);
                let eps = g.constant(noise.draw(n, d));
                q.rsample(g, eps)
            }
        }
    }

    /// Head output for arm `arm` on model-space covariates; never touches
    /// networks that condition on `y`.
    fn arm_head(&self, g: &mut Graph, x: Var, arm: u8, mut noise: Option<&mut Noise>) -> Result<Var> {
        let n = g.shape(x).0;
        let t = g.constant(Array2::from_elem((n, 1), arm as f64));
        let head_input = match self.kind() {
            ModelKind::Series | ModelKind::Parallel => self.encode(g, Latent::Z1, &[x, t], noise)?,
            ModelKind::Hybrid => {
                let z7 = self.encode(g, Latent::Z7, &[x, t], noise.as_deref_mut())?;
                let z1 = self.encode(g, Latent::Z1, &[z7], noise.as_deref_mut())?;
                let z5 = self.encode(g, Latent::Z5, &[z7], noise)?;
                g.concat(&[z1, z5])?
            }
        };
        Ok(self.run(g, Role::Outcome(arm), &[head_input])?.output)
    }

    /// Model-space head outputs `(arm 0, arm 1)` as logits or standardized values.
    pub fn predict_model_space(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.ncols() != self.schema.width() {
            return Err(Error::Schema(format!(
                "expected {} covariates, got {}",
                self.schema.width(),
                x.ncols()
            )));
        }
        let n = x.nrows();
        let samples = self.config.posterior_samples;
        let mut arms = [vec![0.0; n], vec![0.0; n]];
        for (arm, acc) in arms.iter_mut().enumerate() {
            if samples == 0 {
                let mut g = Graph::with_params(&self.params);
                let xv = g.constant(x.clone());
                let out = self.arm_head(&mut g, xv, arm as u8, None)?;
                for (a, v) in acc.iter_mut().zip(g.value(out).column(0)) {
                    *a = *v;
                }
            } else {
                let mut noise = Noise::seeded(arm as u64);
                for _ in 0..samples {
                    let mut g = Graph::with_params(&self.params);
                    let xv = g.constant(x.clone());
                    let out = self.arm_head(&mut g, xv, arm as u8, Some(&mut noise))?;
                    for (a, v) in acc.iter_mut().zip(g.value(out).column(0)) {
                        *a += v / samples as f64;
                    }
                }
            }
        }
        let [y0, y1] = arms;
        Ok((y0, y1))
    }

    /// Predicted potential outcomes `(ŷ⁰, ŷ¹)` for raw covariates, in original
    /// outcome units (probabilities for binary outcomes).
    pub fn predict_outcomes(&self, x_raw: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        if x_raw.ncols() != self.schema.width() {
            return Err(Error::Schema(format!(
                "expected {} covariates, got {}",
                self.schema.width(),
                x_raw.ncols()
            )));
        }
        let x = self.scaler.transform_x(x_raw);
        let (h0, h1) = self.predict_model_space(&x)?;
        let back = |v: Vec<f64>| -> Vec<f64> {
            match self.config.outcome {
                OutcomeType::Real => v.into_iter().map(|y| self.scaler.inverse_y(y)).collect(),
                OutcomeType::Binary => v.into_iter().map(sigmoid).collect(),
            }
        };
        Ok((back(h0), back(h1)))
    }

    /// Rectified last-hidden-layer activations of every latent encoder for the
    /// covariate vector `v`, fed directly as the network's `x`, with upstream
    /// latents propagated as posterior means.
    pub fn probe_activations(&self, v: &[f64]) -> Result<BTreeMap<Latent, Vec<f64>>> {
        self.probe_activations_with(v, ProbeUpstream::PosteriorMeans)
    }

    /// As [`ModelGraph::probe_activations`]; `t` and `y` inputs are always zero
    /// and `upstream` decides what encoders reading other latents receive.
    pub fn probe_activations_with(&self, v: &[f64], upstream: ProbeUpstream) -> Result<BTreeMap<Latent, Vec<f64>>> {
        if v.len() != self.schema.width() {
            return Err(Error::Schema(format!(
                "probe vector has {} entries, model expects {}",
                v.len(),
                self.schema.width()
            )));
        }
        let mut g = Graph::with_params(&self.params);
        let x = g.constant(Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector"));
        let zero = g.constant(Array2::zeros((1, 1)));
        let mut means: BTreeMap<Latent, Var> = BTreeMap::new();
        let zeros: BTreeMap<Latent, Var> = self
            .latents()
            .into_iter()
            .map(|z| (z, g.constant(Array2::zeros((1, self.config.dim(z))))))
            .collect();
        let mut out = BTreeMap::new();
        for spec in &self.specs {
            let Role::Posterior(z) = spec.role else { continue };
            let inputs: Vec<Var> = spec
                .inputs
                .iter()
                .map(|i| match i {
                    Input::X => x,
                    Input::T | Input::Y => zero,
                    Input::Z(u) => match upstream {
                        ProbeUpstream::PosteriorMeans => means[u],
                        ProbeUpstream::Zeros => zeros[u],
                    },
                })
                .collect();
            let traced = self.run(&mut g, spec.role, &inputs)?;
            let hidden = match traced.last_pre_activation {
                Some(pre) => g.relu(pre),
                None => g.relu(traced.output),
            };
            out.insert(z, g.value(hidden).row(0).to_vec());
            let q = GaussianNode::from_params(&mut g, traced.output, self.config.dim(z))?;
            means.insert(z, q.mean);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        io::save(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        io::load(path.as_ref())
    }

    /// Loads a model and checks it against the covariate schema of `schema`.
    pub fn load_for(path: impl AsRef<std::path::Path>, schema: &FeatureSchema) -> Result<Self> {
        let model = Self::load(path)?;
        model.check_schema(schema)?;
        Ok(model)
    }
}
