//! Fitting a model spec to a panel with the sampler.

use log::info;

use crate::model::PanelModel;
use crate::sampler::run_sampling;
use crate::{Error, ModelSpec, PanelDataset, ParameterVector, PosteriorDraws, Result, SamplerConfig};

/// Posterior draws together with the model they were drawn from.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: PanelModel,
    pub draws: PosteriorDraws,
}

impl Fit {
    /// Every draw decoded into structured parameters.
    pub fn parameters(&self) -> Result<Vec<ParameterVector>> {
        draws_to_parameters(&self.model, &self.draws)
    }
}

/// Samples the posterior of `spec` given `panel`.
pub fn fit_model(panel: &PanelDataset, spec: &ModelSpec, config: &SamplerConfig) -> Result<Fit> {
    fit_target(PanelModel::new(panel, spec)?, config)
}

/// Samples `model`, whose density may have been wrapped or altered.
pub fn fit_target(model: PanelModel, config: &SamplerConfig) -> Result<Fit> {
    info!(
        "sampling {} parameters from {} observations: {} chains x ({} warmup + {} draws)",
        model.dim(),
        model.design.n_obs(),
        config.chains,
        config.warmup,
        config.iterations
    );
    let draws = run_sampling(&model, config)?;
    Ok(Fit { model, draws })
}

/// Decodes constrained draws into [`ParameterVector`]s of `model`'s layout.
pub fn draws_to_parameters(model: &PanelModel, draws: &PosteriorDraws) -> Result<Vec<ParameterVector>> {
    check_names(model, draws)?;
    draws
        .draws()
        .map(|d| model.layout.parameters_from_constrained(d))
        .collect()
}

/// Draw columns must be exactly the model's parameters, in order.
pub fn check_names(model: &PanelModel, draws: &PosteriorDraws) -> Result<()> {
    let names = model.layout.names();
    if draws.names != names {
        let first = names
            .iter()
            .zip(&draws.names)
            .position(|(a, b)| a != b)
            .unwrap_or(names.len().min(draws.names.len()));
        return Err(Error::Dimension(format!(
            "draws have {} columns, model has {} parameters; first difference at column {first}",
            draws.names.len(),
            names.len()
        )));
    }
    Ok(())
}
