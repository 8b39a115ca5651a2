use serde::{Deserialize, Serialize};

use crate::diagnostics::{summarize, ParamSummary};
use crate::fit::fit_model;
use crate::{Error, ModelSpec, PanelDataset, Result, SamplerConfig};

/// Lag-coefficient summaries of a refit without one country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocoResult {
    pub excluded: String,
    pub summaries: Vec<ParamSummary>,
}

/// Refits the model once per country with that country left out. Refits run
/// one after another; each uses the sampler's own chain parallelism.
pub fn loco_sensitivity(data: &PanelDataset, spec: &ModelSpec, config: &SamplerConfig) -> Result<Vec<LocoResult>> {
    if data.n_countries() < 3 {
        return Err(Error::InvalidInput(format!(
            "leave-one-country-out needs at least 3 countries, got {}",
            data.n_countries()
        )));
    }
    data.country_names()
        .into_iter()
        .map(|country| {
            let run = || -> Result<LocoResult> {
                let panel = data.without_country(&country)?;
                let fit = fit_model(&panel, spec, config)?;
                let summaries = summarize(&fit.draws)?
                    .into_iter()
                    .filter(|s| s.name.starts_with("phi"))
                    .collect();
                Ok(LocoResult { excluded: country.clone(), summaries })
            };
            log::info!("refitting without {country}");
            run().map_err(|e| e.context(format!("without {country}")))
        })
        .collect()
}
