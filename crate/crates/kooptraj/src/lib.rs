//! Goal-conditioned Koopman trajectory forecasting.
//!
//! The pipeline has two stages: a mixture-density goal estimator proposes
//! plausible long-horizon targets, and a lifted linear (Koopman) model
//! conditioned on the chosen goal refines the path toward it. Spectral
//! analysis of the fitted transition matrix provides stability
//! diagnostics and per-mode trajectory decompositions, and a benchmark
//! harness reports best-of-K displacement errors and inference latency.

pub mod data;
pub mod edmd;
pub mod error;
pub mod forecaster;
pub mod geom;
pub mod mdn;
pub mod metrics;
pub mod observables;
pub mod pipeline;
pub mod spectral;
pub mod svg;

pub use error::{Error, Result};
