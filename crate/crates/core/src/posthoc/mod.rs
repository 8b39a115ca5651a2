//! Analyses of the fitted country intercepts: correlations between them and
//! with country characteristics, PCA and k-means of the characteristics, and
//! leave-one-country-out refits.

mod kmeans;
mod loco;
mod pca;

use serde::{Deserialize, Serialize};

use crate::dataset::CharacteristicsTable;
use crate::diagnostics::quantile;
use crate::{Error, PosteriorDraws, Response, Result};

pub use kmeans::{kmeans, KMeansResult};
pub use loco::{loco_sensitivity, LocoResult};
pub use pca::{pca, pca_characteristics, PcaResult};

/// Posterior of a Pearson correlation computed once per draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPosterior {
    pub label: String,
    pub n_countries: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    pub cri_low: f64,
    pub cri_high: f64,
    pub cri80_low: f64,
    pub cri80_high: f64,
}

impl CorrelationPosterior {
    fn new(label: String, n_countries: usize, values: Vec<f64>) -> Self {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let q = |p| quantile(&sorted, p);
        CorrelationPosterior {
            label,
            n_countries,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            cri_low: q(0.025),
            cri_high: q(0.975),
            cri80_low: q(0.1),
            cri80_high: q(0.9),
            values,
        }
    }

    /// The 95% interval excludes zero.
    pub fn significant_95(&self) -> bool {
        self.cri_low > 0.0 || self.cri_high < 0.0
    }

    /// The 80% interval excludes zero.
    pub fn significant_80(&self) -> bool {
        self.cri80_low > 0.0 || self.cri80_high < 0.0
    }
}

/// Sample Pearson correlation; `None` when either input has no spread.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Country names and per-draw intercepts of `var`, draw-major.
pub fn intercept_draws(draws: &PosteriorDraws, var: Response) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let prefix = format!("mu[{},", var.name());
    let (cols, countries): (Vec<usize>, Vec<String>) = draws
        .names
        .iter()
        .enumerate()
        .filter_map(|(i, n)| {
            n.strip_prefix(&prefix)
                .and_then(|r| r.strip_suffix(']'))
                .map(|c| (i, c.to_string()))
        })
        .unzip();
    if cols.is_empty() {
        return Err(Error::InvalidInput(format!("draws have no intercepts for {var}")));
    }
    let values = draws.draws().map(|d| cols.iter().map(|&i| d[i]).collect()).collect();
    Ok((countries, values))
}

fn correlate_per_draw(label: String, rows: &[Vec<f64>], other: impl Fn(usize) -> Vec<f64>) -> Result<CorrelationPosterior> {
    let n = rows.first().map_or(0, Vec::len);
    if n < 3 {
        return Err(Error::InvalidInput(format!("{label}: correlations need at least 3 countries, got {n}")));
    }
    let values = rows
        .iter()
        .enumerate()
        .map(|(s, r)| {
            pearson(r, &other(s))
                .ok_or_else(|| Error::Data(format!("{label}: draw {s} has no spread across countries")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationPosterior::new(label, n, values))
}

/// Per-draw correlation across countries of the intercepts of `a` and `b`.
pub fn intercept_correlation(draws: &PosteriorDraws, a: Response, b: Response) -> Result<CorrelationPosterior> {
    let (_, da) = intercept_draws(draws, a)?;
    let (_, db) = intercept_draws(draws, b)?;
    correlate_per_draw(format!("{} ~ {}", a.label(), b.label()), &da, |s| db[s].clone())
}

/// Per-draw correlation of the intercepts of `var` with a fixed country
/// feature. Countries without a value for the feature are dropped.
pub fn characteristic_correlation(
    draws: &PosteriorDraws,
    var: Response,
    table: &CharacteristicsTable,
    feature: &str,
) -> Result<CorrelationPosterior> {
    let f = table
        .feature_index(feature)
        .ok_or_else(|| Error::InvalidInput(format!("unknown country characteristic '{feature}'")))?;
    let (countries, mu) = intercept_draws(draws, var)?;
    let (keep, x): (Vec<usize>, Vec<f64>) = countries
        .iter()
        .enumerate()
        .filter_map(|(i, c)| table.value(c, f).map(|v| (i, v)))
        .unzip();
    if x.len() >= 2 && x.iter().all(|v| *v == x[0]) {
        return Err(Error::Data(format!("characteristic '{feature}' is constant across countries")));
    }
    let rows: Vec<Vec<f64>> = mu.iter().map(|r| keep.iter().map(|&i| r[i]).collect()).collect();
    correlate_per_draw(format!("{} ~ {feature}", var.label()), &rows, |_| x.clone())
}
