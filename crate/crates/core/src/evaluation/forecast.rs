//! One-step-ahead forecasts against the naive "no change" forecast.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::posterior_mean_prediction;
use crate::model::PanelModel;
use crate::{ModelSpec, PanelDataset, PosteriorDraws, Response, Result, N_RESPONSES};

/// Forecast of one response for one country and week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub country: String,
    pub week: NaiveDate,
    pub variable: Response,
    pub actual: f64,
    pub model: f64,
    pub naive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub rows: Vec<ForecastRow>,
    /// Pooled over countries and weeks, one entry per response.
    pub rmse_model: [f64; N_RESPONSES],
    pub rmse_naive: [f64; N_RESPONSES],
    /// `1 − rmse_model / rmse_naive`.
    pub reduction: [f64; N_RESPONSES],
}

impl ForecastResult {
    pub fn from_rows(rows: Vec<ForecastRow>) -> Self {
        let mut sse = [[0.0; 2]; N_RESPONSES];
        let mut n = [0usize; N_RESPONSES];
        for r in &rows {
            let i = r.variable.index();
            sse[i][0] += (r.model - r.actual).powi(2);
            sse[i][1] += (r.naive - r.actual).powi(2);
            n[i] += 1;
        }
        let rmse = |k: usize| std::array::from_fn(|i| (sse[i][k] / n[i] as f64).sqrt());
        let rmse_model: [f64; N_RESPONSES] = rmse(0);
        let rmse_naive: [f64; N_RESPONSES] = rmse(1);
        ForecastResult {
            reduction: std::array::from_fn(|i| 1.0 - rmse_model[i] / rmse_naive[i]),
            rows,
            rmse_model,
            rmse_naive,
        }
    }
}

/// Forecasts `x̂(t+1) = x(t)` for every position after the first; the last
/// entry is the forecast beyond the end of the series.
pub fn naive_forecast(series: &[f64]) -> Vec<f64> {
    series.to_vec()
}

/// Posterior-mean one-step forecasts for every modelled observation of `data`.
pub fn one_step_forecast(draws: &PosteriorDraws, data: &PanelDataset, spec: &ModelSpec) -> Result<ForecastResult> {
    model_forecast(&PanelModel::new(data, spec)?, draws, data)
}

/// [`one_step_forecast`] for an already assembled model of `data`.
pub fn model_forecast(model: &PanelModel, draws: &PosteriorDraws, data: &PanelDataset) -> Result<ForecastResult> {
    let mean = posterior_mean_prediction(model, draws)?;
    let mut rows = Vec::with_capacity(mean.len() * N_RESPONSES);
    for (o, &(c, t)) in model.design.obs.iter().enumerate() {
        let cp = &data.countries[c];
        for r in Response::ALL {
            let i = r.index();
            rows.push(ForecastRow {
                country: cp.country.clone(),
                week: cp.weeks[t],
                variable: r,
                actual: cp.y[t][i],
                model: mean[o][i],
                naive: cp.y[t - 1][i],
            });
        }
    }
    Ok(ForecastResult::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_truth, simulate_panel, Scenario};
    use crate::ParameterVector;
    use nalgebra::{Matrix4, Vector4};

    fn draws_of(model: &PanelModel, params: &[ParameterVector]) -> PosteriorDraws {
        let values: Vec<f64> = params
            .iter()
            .flat_map(|p| model.layout.to_constrained(p).unwrap())
            .collect();
        PosteriorDraws::from_values(model.layout.names().to_vec(), 1, params.len(), values).unwrap()
    }

    #[test]
    fn naive_repeats_last_value() {
        assert_eq!(naive_forecast(&[1.0, 2.0, 3.0]).last(), Some(&3.0));
    }

    #[test]
    fn naive_against_itself_has_no_reduction() {
        let rows = (0..5)
            .map(|t| ForecastRow {
                country: "A".into(),
                week: NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(),
                variable: Response::ALL[t % 4],
                actual: t as f64,
                model: (t as f64).sin(),
                naive: (t as f64).sin(),
            })
            .collect();
        let f = ForecastResult::from_rows(rows);
        assert_eq!(f.reduction, [0.0; 4]);
        assert!(f.rmse_model.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn zero_coefficients_forecast_the_intercept_mean() {
        let spec = ModelSpec::var_only();
        let truth = default_truth(&spec, 3, 1);
        let panel = simulate_panel(&truth, &spec, 3, 20, Scenario::Zero, 2).unwrap();
        let model = PanelModel::new(&panel, &spec).unwrap();
        let params: Vec<ParameterVector> = (0..4)
            .map(|s| {
                let mut p = ParameterVector::zeros(1, 0, 3);
                p.resid_scales = Vector4::repeat(1.0);
                p.corr_factor = Matrix4::identity();
                p.mu.iter_mut().enumerate().for_each(|(k, m)| *m = (k + s) as f64);
                p
            })
            .collect();
        let f = one_step_forecast(&draws_of(&model, &params), &panel, &spec).unwrap();
        assert_eq!(f.rows.len(), 3 * 19 * 4);
        for r in &f.rows {
            let c: usize = panel.countries.iter().position(|cp| cp.country == r.country).unwrap();
            let k = c * 4 + r.variable.index();
            assert!((r.model - (k as f64 + 1.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn true_parameters_beat_naive_on_cross_driven_variable() {
        let spec = ModelSpec::var_only();
        let mut truth = default_truth(&spec, 10, 3);
        // ΔTransit is driven by last week's log R and has no persistence of its own.
        truth.phi[0] = Matrix4::from_diagonal(&Vector4::new(0.9, 0.8, 0.2, 0.0));
        truth.phi[0][(3, 0)] = 0.8;
        let panel = simulate_panel(&truth, &spec, 10, 200, Scenario::Zero, 4).unwrap();
        let model = PanelModel::new(&panel, &spec).unwrap();
        let f = model_forecast(&model, &draws_of(&model, &[truth]), &panel).unwrap();
        let i = Response::DTransit.index();
        assert!(f.rmse_model[i] < f.rmse_naive[i]);
        assert!(f.reduction[i] > 0.2, "{:?}", f.reduction);
    }
}
