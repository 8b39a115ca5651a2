//! Bayesian inference for partially-pooled panel vector autoregressions with
//! exogenous covariates.
//!
//! The crate covers the whole pipeline: ingesting raw country series into a
//! weekly [`PanelDataset`], the log posterior of the hierarchical VAR and its
//! gradient, a multi-chain No-U-Turn sampler, convergence diagnostics,
//! structural impulse responses, PSIS-LOO model comparison, one-step
//! forecasting, post-hoc analyses of the country intercepts and a synthetic
//! panel generator used to validate all of the above.

pub mod dataset;
pub mod diagnostics;
mod error;
pub mod evaluation;
pub mod fit;
pub mod io;
pub mod irf;
pub mod model;
pub mod posthoc;
mod response;
pub mod sampler;
pub mod synth;

pub use dataset::PanelDataset;
pub use error::{Error, Result};
pub use model::{ModelSpec, ParameterVector, PriorConfig};
pub use response::{Response, N_RESPONSES};
pub use sampler::{PosteriorDraws, SamplerConfig};
