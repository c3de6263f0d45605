//! Minimal reverse-mode automatic differentiation over dense `f64` matrices,
//! with the fully connected layers and the optimizer the models are built from.

mod adam;
mod graph;
mod net;
mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{elu, sigmoid, softplus, Bandwidth, Graph, Var};
pub(crate) use graph::pairwise_sq_dists;
pub use net::{Activation, DenseNet, Linear, NetOutput};
pub use params::{ParamId, ParamKind, ParamStore};

use crate::error::Result;

pub type Tensor = ndarray::Array2<f64>;

/// Sum of squared weights of `nets`; biases are excluded.
pub fn l2_penalty<'a>(
    g: &mut Graph,
    nets: impl IntoIterator<Item = &'a DenseNet>,
) -> Result<Var> {
    let mut total = g.scalar(0.0);
    for net in nets {
        for w in net.weights() {
            let w = g.param(w);
            let sq = g.square(w);
            let s = g.sum(sq);
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}
