//! Synthetic panels simulated from known parameters, and their raw CSV form.

use std::path::Path;

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::transforms::{npi_max_score, variant_dummy};
use crate::dataset::{CountryPanel, DataConfig, Variant};
use crate::{Error, ModelSpec, PanelDataset, ParameterVector, Result, N_RESPONSES};

/// Ground truth for a simulation; any [`ParameterVector`] with a stable Φ
/// and a positive definite Σ_u.
pub type TrueParameters = ParameterVector;

pub const BURN_IN: usize = 50;

/// Reference VAR coefficient point estimates, rows are equations
/// and columns lagged predictors, both in the order log R, log ED, ΔGDP, ΔTransit.
pub const REFERENCE_PHI: [[f64; 4]; 4] = [
    [0.757, -0.040, 0.003, 0.103],
    [0.271, 0.856, -0.008, 0.014],
    [-0.241, -0.054, 0.046, 0.067],
    [-0.055, -0.025, 0.135, -0.113],
];

pub fn reference_phi() -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| REFERENCE_PHI[i][j])
}

/// First simulated week.
pub fn first_week() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 6).unwrap()
}

/// Exogenous paths fed to the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// No interventions, wild type only, no vaccination.
    Zero,
    /// Integer NPI schedules that switch on early and then drift, variant
    /// waves at 40%, 65% and 95% of the window, and a vaccination ramp over
    /// the second half.
    Pandemic,
}

/// Largest eigenvalue modulus of the companion matrix of a VAR with lag
/// matrices `phis`.
pub fn stability_check(phis: &[DMatrix<f64>]) -> Result<f64> {
    let n = phis.first().map_or(0, DMatrix::nrows);
    if n == 0 || phis.iter().any(|p| p.nrows() != n || p.ncols() != n) {
        return Err(Error::Dimension("lag matrices must be non-empty and square".into()));
    }
    let p = phis.len();
    let mut companion = DMatrix::zeros(n * p, n * p);
    for (k, phi) in phis.iter().enumerate() {
        companion.view_mut((0, k * n), (n, n)).copy_from(phi);
    }
    for i in n..n * p {
        companion[(i, i - n)] = 1.0;
    }
    Ok(companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

fn phi_dmatrices(truth: &ParameterVector) -> Vec<DMatrix<f64>> {
    truth
        .phi
        .iter()
        .map(|m| DMatrix::from_fn(N_RESPONSES, N_RESPONSES, |i, j| m[(i, j)]))
        .collect()
}

/// Realistic ground truth: the reference Φ (zero for further lags), small
/// covariate effects, intercept spread 0.05 and residual sd 0.1.
pub fn default_truth(spec: &ModelSpec, n_countries: usize, seed: u64) -> TrueParameters {
    let k = spec.npi_names.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = ParameterVector::zeros(spec.lags, k, n_countries);
    t.phi[0] = reference_phi();
    // Interventions lower transmission and mobility, with weaker effects
    // on the other responses.
    let eq_scale = [-0.02, -0.005, -0.002, -0.01];
    for i in 0..N_RESPONSES {
        for m in 0..k {
            t.lambda[(i, m)] = eq_scale[i] * (0.5 + rng.random::<f64>());
            t.delta[(i, m)] = 0.5 * eq_scale[i] * (0.5 + rng.random::<f64>());
        }
    }
    t.nu = Matrix4::from_row_slice(&[
        0.0, 0.08, 0.10, 0.05, //
        0.0, 0.03, 0.04, -0.02, //
        0.0, -0.01, 0.0, 0.01, //
        0.0, 0.0, -0.01, 0.0,
    ]);
    t.psi_vacc = Vector4::new(-0.03, -0.05, 0.005, 0.01);
    t.sigma_mu = 0.05;
    for c in 0..n_countries {
        for i in 0..N_RESPONSES {
            t.mu[(i, c)] = t.sigma_mu * rng.sample::<f64, _>(StandardNormal);
        }
    }
    t.resid_scales = Vector4::repeat(0.1);
    let omega = Matrix4::from_row_slice(&[
        1.0, 0.3, -0.1, 0.2, //
        0.3, 1.0, 0.0, 0.1, //
        -0.1, 0.0, 1.0, 0.25, //
        0.2, 0.1, 0.25, 1.0,
    ]);
    t.corr_factor = omega.cholesky().expect("fixed correlation is SPD").l();
    t
}

/// Exogenous covariates of one country.
struct Exogenous {
    level: Vec<Vec<f64>>,
    /// Level in the week before the first simulated week.
    level_before: Vec<f64>,
    variants: Vec<[f64; 4]>,
    vacc: Vec<f64>,
}

fn exogenous(scenario: Scenario, npis: &[String], n_weeks: usize, rng: &mut ChaCha8Rng) -> Exogenous {
    let k = npis.len();
    match scenario {
        Scenario::Zero => Exogenous {
            level: vec![vec![0.0; k]; n_weeks],
            level_before: vec![0.0; k],
            variants: vec![variant_dummy(Variant::WildType); n_weeks],
            vacc: vec![0.0; n_weeks],
        },
        Scenario::Pandemic => {
            let nf = n_weeks as f64;
            let mut level = vec![vec![0.0; k]; n_weeks];
            for (m, id) in npis.iter().enumerate() {
                let max = npi_max_score(id).unwrap_or(3.0) as i64;
                let onset = rng.random_range(2..10.min(n_weeks.max(3)));
                let mut cur = 0i64;
                for (t, row) in level.iter_mut().enumerate() {
                    if t == onset {
                        cur = rng.random_range(1..=max);
                    } else if t > onset && rng.random::<f64>() < 0.1 {
                        cur = (cur + if rng.random::<bool>() { 1 } else { -1 }).clamp(0, max);
                    }
                    row[m] = cur as f64;
                }
            }
            let jitter = |rng: &mut ChaCha8Rng, frac: f64| {
                ((frac + rng.random_range(-0.03..0.03)) * nf).round() as usize
            };
            let (alpha, delta, omicron) = (jitter(rng, 0.40), jitter(rng, 0.65), jitter(rng, 0.95));
            let variants = (0..n_weeks)
                .map(|t| {
                    variant_dummy(if t >= omicron {
                        Variant::Omicron
                    } else if t >= delta {
                        Variant::Delta
                    } else if t >= alpha {
                        Variant::Alpha
                    } else {
                        Variant::WildType
                    })
                })
                .collect();
            let start = jitter(rng, 0.5);
            let rate = 2.0 / (0.4 * nf).max(1.0);
            let vacc = (0..n_weeks)
                .map(|t| if t < start { 0.0 } else { (rate * (t - start + 1) as f64).min(2.0) })
                .collect();
            Exogenous {
                level,
                level_before: vec![0.0; k],
                variants,
                vacc,
            }
        }
    }
}

/// Simulates `n_countries` series of `n_weeks` from the model with
/// parameters `truth`, after a burn-in of [`BURN_IN`] steps from zero with
/// covariates frozen at their first-week values.
///
/// Country `c` draws from RNG stream `c` of `seed`. Covariates disabled in
/// `spec` do not enter the simulated responses.
pub fn simulate_panel(
    truth: &TrueParameters,
    spec: &ModelSpec,
    n_countries: usize,
    n_weeks: usize,
    scenario: Scenario,
    seed: u64,
) -> Result<PanelDataset> {
    spec.validate()?;
    let k = spec.npi_names.len();
    if truth.phi.len() != spec.lags {
        return Err(Error::Dimension(format!(
            "truth has {} lag matrices, spec has {} lags",
            truth.phi.len(),
            spec.lags
        )));
    }
    if truth.lambda.ncols() != k || truth.delta.ncols() != k {
        return Err(Error::Dimension("truth NPI effects do not match the spec's NPIs".into()));
    }
    if truth.mu.ncols() != n_countries {
        return Err(Error::Dimension(format!(
            "truth has {} country intercepts for {n_countries} countries",
            truth.mu.ncols()
        )));
    }
    if n_weeks == 0 || n_countries == 0 {
        return Err(Error::InvalidInput("empty simulation".into()));
    }
    let radius = stability_check(&phi_dmatrices(truth))?;
    if !(radius < 1.0) {
        return Err(Error::InvalidInput(format!(
            "VAR is not stable: companion spectral radius {radius}"
        )));
    }
    let chol = truth
        .sigma_u()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("residual covariance is not positive definite".into()))?
        .l();

    let countries = (0..n_countries)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let exo = exogenous(scenario, &spec.npi_names, n_weeks, &mut rng);
            let mu = Vector4::from_fn(|i, _| truth.mu[(i, c)]);
            let covariates = |t: usize, prev: &[f64]| -> Vector4<f64> {
                let mut v = mu;
                let level = &exo.level[t];
                for i in 0..N_RESPONSES {
                    for m in 0..k {
                        if spec.include_levels {
                            v[i] += truth.lambda[(i, m)] * level[m];
                        }
                        if spec.include_changes {
                            v[i] += truth.delta[(i, m)] * (level[m] - prev[m]);
                        }
                    }
                    if spec.include_variants {
                        v[i] += (0..4).map(|j| truth.nu[(i, j)] * exo.variants[t][j]).sum::<f64>();
                    }
                    if spec.include_vaccination {
                        v[i] += truth.psi_vacc[i] * exo.vacc[t];
                    }
                }
                v
            };
            let mut history: Vec<Vector4<f64>> = vec![Vector4::zeros(); spec.lags];
            let mut step = |exo_mean: Vector4<f64>, rng: &mut ChaCha8Rng| {
                let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let mut y = exo_mean + chol * z;
                for (lag, phi) in truth.phi.iter().enumerate() {
                    y += phi * history[history.len() - 1 - lag];
                }
                history.push(y);
                y
            };
            let frozen = covariates(0, &exo.level[0]);
            for _ in 0..BURN_IN {
                step(frozen, &mut rng);
            }
            let mut y = Vec::with_capacity(n_weeks);
            for t in 0..n_weeks {
                let prev = if t == 0 { &exo.level_before } else { &exo.level[t - 1] };
                let v = step(covariates(t, prev), &mut rng);
                y.push([v[0], v[1], v[2], v[3]]);
            }
            let x_change = (0..n_weeks)
                .map(|t| {
                    let prev = if t == 0 { &exo.level_before } else { &exo.level[t - 1] };
                    exo.level[t].iter().zip(prev).map(|(a, b)| a - b).collect()
                })
                .collect();
            CountryPanel {
                country: format!("S{:02}", c + 1),
                weeks: (0..n_weeks).map(|t| first_week() + Duration::weeks(t as i64)).collect(),
                y,
                x_change,
                x_level: exo.level,
                vacc: exo.vacc,
                variants: exo.variants,
            }
        })
        .collect();
    let panel = PanelDataset {
        npi_names: spec.npi_names.clone(),
        countries,
    };
    panel.validate()?;
    Ok(panel)
}

const GDP_BASE: f64 = 100.0;
const GDP_TREND: f64 = 0.05;
const TRANSIT_BASE: f64 = 100.0;
const TREND_WEEKS: i64 = 104;
const POPULATION: f64 = 1_000_000.0;

fn label_of(dummy: &[f64; 4]) -> Result<&'static str> {
    [Variant::WildType, Variant::Alpha, Variant::Delta, Variant::Omicron]
        .into_iter()
        .find(|v| variant_dummy(*v) == *dummy)
        .map(Variant::label)
        .ok_or_else(|| Error::Data(format!("variant indicators {dummy:?} match no single label")))
}

/// Writes `panel` as the raw CSV files the ingestion reads and returns the
/// [`DataConfig`] under which ingestion reproduces it.
///
/// GDP gets a linear pre-period of two years for the trend, transit is
/// written daily, excess deaths are shifted by the configured lead and NPI
/// scores cover the two weeks before the panel that its lags refer to.
pub fn write_raw_csv(panel: &PanelDataset, dir: &Path) -> Result<DataConfig> {
    panel.validate()?;
    let first = panel
        .countries
        .iter()
        .filter_map(|c| c.weeks.first().copied())
        .min()
        .ok_or_else(|| Error::InvalidInput("panel is empty".into()))?;
    let last = panel
        .countries
        .iter()
        .filter_map(|c| c.weeks.last().copied())
        .max()
        .unwrap();
    let config = DataConfig {
        window_start: first,
        window_end: last + Duration::days(6),
        trend_start: first - Duration::weeks(TREND_WEEKS + 1),
        trend_end: first - Duration::weeks(1),
        ..DataConfig::default()
    };
    let lead = Duration::weeks(config.ed_lead_weeks as i64);
    std::fs::create_dir_all(dir)?;
    let mut resp = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(
        dir.join("responses.csv"),
    )?));
    let mut npi = csv::Writer::from_path(dir.join("npi.csv"))?;
    let mut vacc = csv::Writer::from_path(dir.join("vaccination.csv"))?;
    let mut var = csv::Writer::from_path(dir.join("variants.csv"))?;
    resp.write_record(["country", "date", "series", "value"])?;
    npi.write_record(["country", "date", "npi_id", "score"])?;
    vacc.write_record(["country", "date", "total_doses", "population"])?;
    var.write_record(["country", "iso_week", "who_label"])?;
    let num = |v: f64| format!("{v:.17e}");

    for cp in &panel.countries {
        let name = cp.country.as_str();
        let (w0, n) = (cp.weeks[0], cp.len());
        let mut row = |date: NaiveDate, series: &str, v: f64| {
            resp.write_record([name, &date.to_string(), series, &num(v)])
        };
        for (t, &w) in cp.weeks.iter().enumerate() {
            row(w, "log_r", cp.y[t][0])?;
            row(w + lead, "excess_deaths_per_100k", cp.y[t][1].exp_m1())?;
        }
        // GDP levels: linear trend up to the week before the panel, then
        // each week adds the trend back onto the scaled change.
        let mut g = GDP_BASE;
        for s in (1..=TREND_WEEKS + 1).rev() {
            row(w0 - Duration::weeks(s), "gdp", g)?;
            g += GDP_TREND;
        }
        g -= GDP_TREND;
        for (t, &w) in cp.weeks.iter().enumerate() {
            g += 10.0 * cp.y[t][2] + GDP_TREND;
            row(w, "gdp", g)?;
        }
        // Transit: constant within each week, so the Sunday trailing mean is the week's level.
        let mut level = TRANSIT_BASE;
        for t in 0..=n {
            if t > 0 {
                level += 100.0 * cp.y[t - 1][3];
            }
            let monday = w0 - Duration::weeks(1) + Duration::weeks(t as i64);
            for d in 0..7 {
                row(monday + Duration::days(d), "transit", level)?;
            }
        }
        // NPI weekly scores: week w carries the level that enters week w + 1.
        for (m, id) in panel.npi_names.iter().enumerate() {
            let before: f64 = cp.x_level[0][m] - cp.x_change[0][m];
            npi.write_record([name, &(w0 - Duration::weeks(2)).to_string(), id, &num(before)])?;
            for t in 0..n {
                let w = w0 - Duration::weeks(1) + Duration::weeks(t as i64);
                npi.write_record([name, &w.to_string(), id, &num(cp.x_level[t][m])])?;
            }
        }
        for (t, &w) in cp.weeks.iter().enumerate() {
            vacc.write_record([name, &w.to_string(), &num(cp.vacc[t] * POPULATION), &num(POPULATION)])?;
            let iso = chrono::Datelike::iso_week(&w);
            var.write_record([name, &format!("{}-W{:02}", iso.year(), iso.week()), label_of(&cp.variants[t])?])?;
        }
    }
    resp.flush()?;
    npi.flush()?;
    vacc.flush()?;
    var.flush()?;
    Ok(config)
}
