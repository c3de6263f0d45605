//! Variational auto-encoders for treatment-effect estimation from
//! observational data with a binary treatment.
//!
//! Three belief-net wirings are provided ([`model::ModelKind`]): Series,
//! Parallel and Hybrid. Each is trained on a weighted factual-outcome loss, an
//! MMD balance penalty on the outcome representation, a β-weighted ELBO and an
//! L2 penalty. The crate also ships the synthetic benchmark generator with
//! known instrumental/confounder/adjustment factor blocks, PEHE and ATE-bias
//! metrics, Welch's t-test and the factor-decomposition probe.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod model;
pub mod objectives;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
