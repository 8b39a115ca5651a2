use std::path::Path;

use panelvar_core::dataset::DataConfig;
use panelvar_core::{io, ModelSpec, Result, SamplerConfig};
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with; one JSON document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    pub sampler: SamplerConfig,
    pub irf: IrfConfig,
    pub posthoc: PosthocConfig,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrfConfig {
    /// `oirf` or `girf`.
    pub kind: String,
    pub horizon: usize,
}

impl Default for IrfConfig {
    fn default() -> Self {
        IrfConfig { kind: "oirf".into(), horizon: panelvar_core::irf::DEFAULT_HORIZON }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosthocConfig {
    pub clusters: usize,
    pub restarts: usize,
    /// Principal components written to the loadings table.
    pub components: usize,
}

impl Default for PosthocConfig {
    fn default() -> Self {
        PosthocConfig { clusters: 3, restarts: 50, components: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub countries: usize,
    pub weeks: usize,
    /// `zero` or `pandemic`.
    pub scenario: String,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { countries: 25, weeks: 104, scenario: "pandemic".into() }
    }
}

impl RunConfig {
    /// The explicit file if given, else `fallback` if it exists, else defaults.
    pub fn load(explicit: Option<&Path>, fallback: Option<&Path>) -> Result<RunConfig> {
        match (explicit, fallback) {
            (Some(p), _) => io::read_json(p),
            (None, Some(p)) if p.exists() => io::read_json(p),
            _ => Ok(RunConfig::default()),
        }
    }
}
