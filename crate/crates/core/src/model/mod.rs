//! The hierarchical panel VAR: specification, parameters and log posterior.
//!
//! For country `c` and week `t`
//!
//! ```text
//! Y[t,c] ~ MVN(μ_c + Σ_k Φ_k Y[t-k,c] + λ·x[t,c] + δ·Δx[t,c] + ν·Ψ[t,c] + ψ·vacc[t,c], Σ_u)
//! ```
//!
//! with `Σ_u = D Ω D`, `D = diag(σ)`. Slope coefficients share a `N(0, τ²)`
//! prior, country intercepts are `N(0, σ_μ²)`, `σ_μ` and the residual scales
//! are half-Cauchy and `Ω` is LKJ(ξ).

pub mod corr;
mod density;
mod layout;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Response, Result, N_RESPONSES};

pub use density::{linear_predictor, log_posterior, grad_log_posterior, Design, PanelModel};
pub use layout::{Block, ParameterLayout, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Standard deviation of the normal prior on all slope coefficients.
    pub tau: f64,
    /// Scale of the half-Cauchy prior on the intercept SD and residual scales.
    pub sigma_scale: f64,
    /// LKJ concentration for the residual correlation matrix.
    pub lkj_xi: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            tau: 1.0,
            sigma_scale: 2.0,
            lkj_xi: 2.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.sigma_scale > 0.0) {
            return Err(Error::InvalidInput("prior scales must be positive".into()));
        }
        if !(self.lkj_xi >= 1.0) {
            return Err(Error::InvalidInput("LKJ concentration must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which regressors enter the model and with what priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub n_responses: usize,
    /// VAR lag order `p`.
    pub lags: usize,
    /// OxCGRT ids of the NPI regressors, matching the panel's columns.
    pub npi_names: Vec<String>,
    pub include_levels: bool,
    pub include_changes: bool,
    pub include_vaccination: bool,
    pub include_variants: bool,
    /// Responses removed as predictors from every equation but their own.
    pub excluded_predictors: BTreeSet<Response>,
    pub priors: PriorConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            n_responses: N_RESPONSES,
            lags: 1,
            npi_names: crate::dataset::transforms::default_npi_ids(),
            include_levels: true,
            include_changes: true,
            include_vaccination: true,
            include_variants: true,
            excluded_predictors: BTreeSet::new(),
            priors: PriorConfig::default(),
        }
    }
}

impl ModelSpec {
    /// A spec for a VAR without any exogenous covariate.
    pub fn var_only() -> Self {
        ModelSpec {
            npi_names: Vec::new(),
            include_levels: false,
            include_changes: false,
            include_vaccination: false,
            include_variants: false,
            ..ModelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_responses != N_RESPONSES {
            return Err(Error::InvalidInput(format!(
                "the model has exactly {N_RESPONSES} responses, spec says {}",
                self.n_responses
            )));
        }
        if self.lags < 1 {
            return Err(Error::InvalidInput("lag order must be >= 1".into()));
        }
        self.priors.validate()
    }

    /// Whether lagged `predictor` enters the equation of `equation`.
    pub fn phi_active(&self, equation: usize, predictor: usize) -> bool {
        equation == predictor
            || !Response::from_index(predictor)
                .is_some_and(|r| self.excluded_predictors.contains(&r))
    }

    pub fn n_npi_regressors(&self) -> usize {
        let k = self.npi_names.len();
        k * (self.include_levels as usize + self.include_changes as usize)
    }

    /// Check that the panel carries the NPI columns this spec refers to.
    pub fn check_panel(&self, panel: &crate::PanelDataset) -> Result<()> {
        if self.n_npi_regressors() > 0 && panel.npi_names != self.npi_names {
            return Err(Error::Dimension(format!(
                "spec NPIs {:?} differ from panel NPIs {:?}",
                self.npi_names, panel.npi_names
            )));
        }
        Ok(())
    }
}
