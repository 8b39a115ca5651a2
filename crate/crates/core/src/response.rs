use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Number of endogenous response variables.
pub const N_RESPONSES: usize = 4;

/// The endogenous variables, in the fixed order used everywhere in the crate.
///
/// The order is also the Cholesky identification ordering for orthogonalised
/// impulse responses: transmission first, then mortality, GDP and mobility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    LogR,
    LogEd,
    DGdp,
    DTransit,
}

impl Response {
    pub const ALL: [Response; N_RESPONSES] =
        [Response::LogR, Response::LogEd, Response::DGdp, Response::DTransit];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Response> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Response::LogR => "log_r",
            Response::LogEd => "log_ed",
            Response::DGdp => "d_gdp",
            Response::DTransit => "d_transit",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Response::LogR => "log R",
            Response::LogEd => "log ED",
            Response::DGdp => "ΔGDP",
            Response::DTransit => "ΔTransit",
        }
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Response {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "logr" | "r" | "rt" => Ok(Response::LogR),
            "loged" | "ed" | "excessdeaths" => Ok(Response::LogEd),
            "dgdp" | "δgdp" | "deltagdp" | "gdp" => Ok(Response::DGdp),
            "dtransit" | "δtransit" | "deltatransit" | "transit" => Ok(Response::DTransit),
            _ => Err(Error::InvalidInput(format!("unknown response variable '{s}'"))),
        }
    }
}
