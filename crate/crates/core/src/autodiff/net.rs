use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamKind, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Elu => g.elu(v),
            Activation::Relu => g.relu(v),
            Activation::Identity => v,
        }
    }
}

/// One affine layer `x W + b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// A fully connected network: `depth` hidden layers of `hidden` units followed
/// by a linear output layer. `depth == 0` is a single affine map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseNet {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub layers: Vec<Linear>,
}

/// Output of a traced forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NetOutput {
    pub output: Var,
    /// Activations of the last hidden layer; `None` for a depth-0 network.
    pub last_hidden: Option<Var>,
    /// Pre-activation of the last hidden layer.
    pub last_pre_activation: Option<Var>,
}

impl DenseNet {
    /// Registers all layer parameters in `store`. Weights are drawn from
    /// N(0, 2 / (fan_in + fan_out)); biases start at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: impl Into<String>,
        input: usize,
        hidden: usize,
        depth: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let name = name.into();
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, depth));
        widths.push(output);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng));
                Linear {
                    weight: store.insert(format!("{name}.{i}.weight"), ParamKind::Weight, weight),
                    bias: store.insert(
                        format!("{name}.{i}.bias"),
                        ParamKind::Bias,
                        Array2::zeros((1, fan_out)),
                    ),
                    fan_in,
                    fan_out,
                }
            })
            .collect();
        DenseNet {
            name,
            input,
            output,
            hidden,
            activation,
            layers,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    pub fn weights(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().map(|l| l.weight)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(self.forward_traced(g, x)?.output)
    }

    pub fn forward_traced(&self, g: &mut Graph, x: Var) -> Result<NetOutput> {
        let width = g.shape(x).1;
        if width != self.input {
            return Err(Error::Config(format!(
                "network `{}` expects input width {}, got {}",
                self.name, self.input, width
            )));
        }
        let mut h = x;
        let mut last_hidden = None;
        let mut last_pre_activation = None;
        let n_layers = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(layer.weight);
            let b = g.param(layer.bias);
            let z = g.matmul(h, w)?;
            let z = g.add_bias(z, b)?;
            if i + 1 < n_layers {
                h = self.activation.apply(g, z);
                last_pre_activation = Some(z);
                last_hidden = Some(h);
            } else {
                h = z;
            }
        }
        Ok(NetOutput {
            output: h,
            last_hidden,
            last_pre_activation,
        })
    }

    /// Value-level forward pass, without keeping a tape.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::with_params(store);
        let v = g.constant(x.clone());
        let out = self.forward(&mut g, v)?;
        Ok(g.value(out).clone())
    }
}
