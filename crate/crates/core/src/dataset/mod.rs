//! Raw inputs, transforms and the aligned weekly panel.

mod ingest;
pub mod transforms;

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, N_RESPONSES};

pub use ingest::{
    load_characteristics, load_panel, read_borders, DataConfig, DroppedCountry, PanelLoad,
};
pub use transforms::{
    build_npi_features, build_variant_dummies, compute_trend_growth, downsample_weekly,
    transform_excess_deaths, transform_gdp, transform_transit, NpiFeatures, Variant,
};

/// Monday of the ISO week containing `date`.
pub fn week_start(date: NaiveDate) -> NaiveDate {
    date - Duration::days(date.weekday().num_days_from_monday() as i64)
}

/// Dated observations of one source column for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub country: String,
    pub points: Vec<(NaiveDate, f64)>,
}

impl RawSeries {
    /// Dates must be strictly increasing.
    pub fn new(country: impl Into<String>, points: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let country = country.into();
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::Data(format!(
                "{country}: dates not strictly increasing at {} -> {}",
                w[0].0, w[1].0
            )));
        }
        Ok(RawSeries { country, points })
    }
}

/// Week-keyed values; keys are Mondays in increasing order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeeklySeries(Vec<(NaiveDate, f64)>);

impl WeeklySeries {
    pub fn new(points: Vec<(NaiveDate, f64)>) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0].0 < w[1].0));
        WeeklySeries(points)
    }

    pub fn get(&self, week: NaiveDate) -> Option<f64> {
        self.0
            .binary_search_by_key(&week, |p| p.0)
            .ok()
            .map(|i| self.0[i].1)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|p| p.1).collect()
    }

    pub fn points(&self) -> &[(NaiveDate, f64)] {
        &self.0
    }
}

/// One country's contiguous block of weekly rows.
///
/// Row `t` holds the responses of week `t` and the exogenous regressors that
/// enter the equation for week `t` (NPI columns are already lagged).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryPanel {
    pub country: String,
    /// Monday of each week.
    pub weeks: Vec<NaiveDate>,
    /// Responses in the order `(log R, log ED, ΔGDP, ΔTransit)`.
    pub y: Vec<[f64; N_RESPONSES]>,
    pub x_level: Vec<Vec<f64>>,
    pub x_change: Vec<Vec<f64>>,
    /// Vaccine doses per capita.
    pub vacc: Vec<f64>,
    /// `[WT, Alpha, Delta, Omicron]` indicators.
    pub variants: Vec<[f64; 4]>,
}

impl CountryPanel {
    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }
}

/// Ragged weekly panel of all countries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    /// Ids of the NPI columns in `x_level` / `x_change`.
    pub npi_names: Vec<String>,
    pub countries: Vec<CountryPanel>,
}

impl PanelDataset {
    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_npis(&self) -> usize {
        self.npi_names.len()
    }

    pub fn country_names(&self) -> Vec<String> {
        self.countries.iter().map(|c| c.country.clone()).collect()
    }

    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries.iter().position(|c| c.country == code)
    }

    /// The panel without one country.
    pub fn without_country(&self, code: &str) -> Result<PanelDataset> {
        let idx = self
            .country_index(code)
            .ok_or_else(|| Error::InvalidInput(format!("country '{code}' not in panel")))?;
        let mut out = self.clone();
        out.countries.remove(idx);
        Ok(out)
    }

    /// Check the structural invariants of the panel.
    pub fn validate(&self) -> Result<()> {
        let k = self.npi_names.len();
        let mut seen = std::collections::HashSet::new();
        for c in &self.countries {
            let name = &c.country;
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("country {name} appears twice")));
            }
            let n = c.weeks.len();
            if c.y.len() != n
                || c.x_level.len() != n
                || c.x_change.len() != n
                || c.vacc.len() != n
                || c.variants.len() != n
            {
                return Err(Error::Dimension(format!("{name}: column lengths differ")));
            }
            if let Some(w) = c.weeks.windows(2).find(|w| (w[1] - w[0]).num_days() != 7) {
                return Err(Error::Data(format!(
                    "{name}: weeks not contiguous at {} -> {}",
                    w[0], w[1]
                )));
            }
            for (t, row) in c.y.iter().enumerate() {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("{name}: non-finite response in week {}", c.weeks[t])));
                }
            }
            for t in 0..n {
                if c.x_level[t].len() != k || c.x_change[t].len() != k {
                    return Err(Error::Dimension(format!(
                        "{name}: week {} has NPI rows of the wrong width",
                        c.weeks[t]
                    )));
                }
                let exo = c.x_level[t]
                    .iter()
                    .chain(&c.x_change[t])
                    .chain(std::iter::once(&c.vacc[t]))
                    .chain(&c.variants[t]);
                if exo.into_iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "{name}: non-finite covariate in week {}",
                        c.weeks[t]
                    )));
                }
                let v = c.variants[t];
                if v[0] != 1.0 || v[1] > v[0] || v[2] > v[1] || v[3] > v[2] {
                    return Err(Error::Data(format!(
                        "{name}: variant indicators not monotone in week {}",
                        c.weeks[t]
                    )));
                }
            }
            for t in 1..n {
                for j in 0..k {
                    let d = c.x_level[t][j] - c.x_level[t - 1][j];
                    if (d - c.x_change[t][j]).abs() > 1e-9 {
                        return Err(Error::Data(format!(
                            "{name}: NPI change column {} disagrees with level difference in week {}",
                            self.npi_names[j], c.weeks[t]
                        )));
                    }
                }
            }
            for t in 0..n {
                if c.y[t][2].abs() >= 10.0 || c.y[t][3].abs() >= 10.0 {
                    log::warn!(
                        "{name}: |ΔGDP| or |ΔTransit| >= 10 in week {}; check input scaling",
                        c.weeks[t]
                    );
                    break;
                }
            }
        }
        Ok(())
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<PanelDataset> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let panel: PanelDataset = serde_json::from_reader(f)?;
        panel.validate()?;
        Ok(panel)
    }
}

/// Static country-level features (health expenditure, governance indices, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryCharacteristics {
    pub country: String,
    /// Same order as [`CharacteristicsTable::features`]; `None` marks a missing entry.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicsTable {
    pub features: Vec<String>,
    pub countries: Vec<CountryCharacteristics>,
}

impl CharacteristicsTable {
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    /// Value of `feature` for `country`, if both exist and the entry is present.
    pub fn value(&self, country: &str, feature: usize) -> Option<f64> {
        self.countries
            .iter()
            .find(|c| c.country == country)
            .and_then(|c| c.values.get(feature).copied().flatten())
    }
}

/// Fill `weeks` of one country by the border-length weighted mean of its
/// neighbours' values. `neighbors` holds `(country, border km)` pairs;
/// neighbours without a value in a week are skipped, and a week no
/// neighbour covers is an error.
pub fn impute_border_weighted<F>(
    country: &str,
    weeks: &[NaiveDate],
    neighbors: &[(String, f64)],
    value: F,
) -> Result<Vec<f64>>
where
    F: Fn(&str, NaiveDate) -> Option<f64>,
{
    weeks
        .iter()
        .map(|&w| {
            let covered: Vec<(f64, f64)> = neighbors
                .iter()
                .filter_map(|(nb, km)| value(nb, w).map(|x| (*km, x)))
                .collect();
            transforms::border_weighted_mean(&covered).map_err(|e| match e {
                Error::Data(_) => {
                    Error::Data(format!("{country}: no neighbour covers the week of {w}"))
                }
                other => other,
            })
        })
        .collect()
}
