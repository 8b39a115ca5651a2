//! Model comparison by PSIS-LOO, predictor-exclusion experiments and
//! one-step-ahead forecast benchmarking.
//!
//! The unit of leave-one-out is the joint response vector of one country in
//! one week, i.e. one row of the multivariate likelihood.

mod forecast;
mod psis;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fit::{check_names, draws_to_parameters};
use crate::model::PanelModel;
use crate::{Error, ModelSpec, PanelDataset, PosteriorDraws, Response, Result};

pub use forecast::{model_forecast, naive_forecast, one_step_forecast, ForecastResult, ForecastRow};
pub use psis::{gpd_fit, psis_log_weights, psis_loo, LoglikMatrix, LooResult, PARETO_K_THRESHOLD, TAIL_FRACTION};

/// Log-likelihood of every (country, week) observation of `data` under every draw.
pub fn pointwise_loglik(draws: &PosteriorDraws, data: &PanelDataset, spec: &ModelSpec) -> Result<LoglikMatrix> {
    model_loglik(&PanelModel::new(data, spec)?, draws)
}

/// [`pointwise_loglik`] for an already assembled model.
pub fn model_loglik(model: &PanelModel, draws: &PosteriorDraws) -> Result<LoglikMatrix> {
    check_names(model, draws)?;
    let rows: Vec<Vec<f64>> = (0..draws.n_draws())
        .into_par_iter()
        .map(|s| {
            let p = model.layout.parameters_from_constrained(draws.draw(s))?;
            model.observation_loglik(&p)
        })
        .collect::<Result<_>>()?;
    let n_obs = model.design.n_obs();
    LoglikMatrix::new(rows.len(), n_obs, rows.concat())
}

/// Difference in expected log predictive density between two models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElpdDiff {
    pub diff: f64,
    pub se_diff: f64,
    pub cri_low: f64,
    pub cri_high: f64,
}

impl ElpdDiff {
    /// Interval of two standard errors either side of `diff`.
    pub fn from_diff_se(diff: f64, se_diff: f64) -> Self {
        ElpdDiff {
            diff,
            se_diff,
            cri_low: diff - 2.0 * se_diff,
            cri_high: diff + 2.0 * se_diff,
        }
    }
}

/// `elpd(b) − elpd(a)` with the standard error of the paired pointwise
/// differences. With `a` the reference model, worse alternatives give negative
/// differences.
pub fn elpd_diff(a: &LooResult, b: &LooResult) -> Result<ElpdDiff> {
    if a.pointwise.len() != b.pointwise.len() {
        return Err(Error::Dimension(format!(
            "LOO results cover {} and {} observations",
            a.pointwise.len(),
            b.pointwise.len()
        )));
    }
    let d: Vec<f64> = b.pointwise.iter().zip(&a.pointwise).map(|(x, y)| x - y).collect();
    Ok(ElpdDiff::from_diff_se(d.iter().sum(), psis::se_of_sum(&d)))
}

/// `spec` with the lagged responses in `exclude` removed from every equation
/// except their own.
pub fn exclusion_experiment<S: AsRef<str>>(spec: &ModelSpec, exclude: &[S]) -> Result<ModelSpec> {
    let set = exclude
        .iter()
        .map(|s| s.as_ref().parse::<Response>())
        .collect::<Result<BTreeSet<_>>>()?;
    Ok(exclude_responses(spec, &set))
}

pub fn exclude_responses(spec: &ModelSpec, exclude: &BTreeSet<Response>) -> ModelSpec {
    let mut out = spec.clone();
    out.excluded_predictors.extend(exclude.iter().copied());
    out
}

/// Label used in comparison tables: "Full Model", "All Variables", or the
/// excluded responses joined by " & ".
pub fn exclusion_label(exclude: &BTreeSet<Response>) -> String {
    match exclude.len() {
        0 => "Full Model".to_string(),
        n if n == Response::ALL.len() => "All Variables".to_string(),
        _ => exclude.iter().map(|r| r.label()).collect::<Vec<_>>().join(" & "),
    }
}

/// The standard comparison grid: no exclusion, each response alone, the pairs
/// and all four at once.
pub fn exclusion_sets() -> Vec<BTreeSet<Response>> {
    use Response::*;
    let sets: [&[Response]; 12] = [
        &[],
        &[DTransit],
        &[DGdp],
        &[DGdp, DTransit],
        &[LogEd],
        &[LogEd, DTransit],
        &[DGdp, LogEd],
        &[LogR],
        &[LogR, DTransit],
        &[DGdp, LogR],
        &[LogR, LogEd],
        &[LogR, LogEd, DGdp, DTransit],
    ];
    sets.iter().map(|s| s.iter().copied().collect()).collect()
}

/// Every subset of the responses, smallest first.
pub fn all_exclusion_sets() -> Vec<BTreeSet<Response>> {
    let mut out: Vec<BTreeSet<Response>> = (0u32..16)
        .map(|mask| {
            Response::ALL
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, r)| *r)
                .collect()
        })
        .collect();
    out.sort_by_key(|s| s.len());
    out
}

/// Posterior mean of every parameter vector's conditional mean. Kept here so
/// forecasts and diagnostics share the decoding path.
pub(crate) fn posterior_mean_prediction(model: &PanelModel, draws: &PosteriorDraws) -> Result<Vec<[f64; 4]>> {
    const CHUNK: usize = 64;
    let params = draws_to_parameters(model, draws)?;
    let n_obs = model.design.n_obs();
    // Fixed chunks summed in order keep the result independent of the thread count.
    let partial: Vec<Vec<[f64; 4]>> = params
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![[0.0; 4]; n_obs];
            for p in chunk {
                for (a, m) in acc.iter_mut().zip(model.predict(p)?) {
                    for i in 0..4 {
                        a[i] += m[i];
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut mean = vec![[0.0; 4]; n_obs];
    for acc in partial {
        for (m, a) in mean.iter_mut().zip(acc) {
            for i in 0..4 {
                m[i] += a[i];
            }
        }
    }
    let s = params.len() as f64;
    mean.iter_mut().flatten().for_each(|v| *v /= s);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testing::random_panel;
    use crate::model::linear_predictor;
    use crate::ParameterVector;
    use nalgebra::{Matrix4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn draws_of(model: &PanelModel, params: &[ParameterVector]) -> PosteriorDraws {
        let values: Vec<f64> = params
            .iter()
            .flat_map(|p| model.layout.to_constrained(p).unwrap())
            .collect();
        PosteriorDraws::from_values(model.layout.names().to_vec(), 1, params.len(), values).unwrap()
    }

    fn zero_panel() -> PanelDataset {
        let mut panel = random_panel(3, 12, 0, 1);
        for c in &mut panel.countries {
            c.y.iter_mut().for_each(|y| *y = [0.0; 4]);
        }
        panel
    }

    fn unit_params(model: &PanelModel) -> ParameterVector {
        let mut p = ParameterVector::zeros(1, 0, model.layout.n_countries);
        p.resid_scales = Vector4::repeat(1.0);
        p.corr_factor = Matrix4::identity();
        p
    }

    #[test]
    fn unit_covariance_zero_residual() {
        let panel = zero_panel();
        let spec = ModelSpec::var_only();
        let model = PanelModel::new(&panel, &spec).unwrap();
        let ll = pointwise_loglik(&draws_of(&model, &[unit_params(&model)]), &panel, &spec).unwrap();
        assert_eq!(ll.n_obs, 3 * 11);
        for v in &ll.values {
            assert!((v + 2.0 * (2.0 * PI).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_scales_costs_four_log_two() {
        let panel = zero_panel();
        let spec = ModelSpec::var_only();
        let model = PanelModel::new(&panel, &spec).unwrap();
        let p = unit_params(&model);
        let mut q = p.clone();
        q.resid_scales *= 2.0;
        let ll = model_loglik(&model, &draws_of(&model, &[p, q])).unwrap();
        for i in 0..ll.n_obs {
            assert!((ll.get(0, i) - ll.get(1, i) - 4.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    fn random_params(model: &PanelModel, rng: &mut ChaCha8Rng) -> ParameterVector {
        let u: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        model.layout.to_parameters(&u).unwrap()
    }

    #[test]
    fn matches_loop_oracle() {
        let panel = random_panel(4, 15, 2, 7);
        let spec = ModelSpec {
            npi_names: panel.npi_names.clone(),
            ..ModelSpec::default()
        };
        let model = PanelModel::new(&panel, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params: Vec<ParameterVector> = (0..3).map(|_| random_params(&model, &mut rng)).collect();
        let ll = pointwise_loglik(&draws_of(&model, &params), &panel, &spec).unwrap();
        for (s, p) in params.iter().enumerate() {
            let sigma = p.sigma_u();
            let inv = sigma.try_inverse().unwrap();
            let det = sigma.determinant();
            let mut i = 0;
            for c in 0..panel.n_countries() {
                for t in 1..panel.countries[c].len() {
                    let m = linear_predictor(p, &panel, &spec, t, c).unwrap();
                    let y = panel.countries[c].y[t];
                    let r = Vector4::from_fn(|k, _| y[k] - m[k]);
                    let q = (r.transpose() * inv * r)[(0, 0)];
                    let oracle = -0.5 * (4.0 * (2.0 * PI).ln() + det.ln() + q);
                    assert!((ll.get(s, i) - oracle).abs() < 1e-8, "{} vs {oracle}", ll.get(s, i));
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn wrong_draw_columns_are_rejected() {
        let panel = zero_panel();
        let model = PanelModel::new(&panel, &ModelSpec::var_only()).unwrap();
        let draws = PosteriorDraws::from_values(vec!["a".into()], 1, 1, vec![0.0]).unwrap();
        assert!(matches!(model_loglik(&model, &draws), Err(Error::Dimension(_))));
    }

    fn loo_from(pointwise: Vec<f64>) -> LooResult {
        LooResult {
            elpd: pointwise.iter().sum(),
            elpd_se: 0.0,
            pareto_k: vec![0.0; pointwise.len()],
            degenerate: vec![false; pointwise.len()],
            lpd: 0.0,
            p_loo: 0.0,
            n_draws: 1000,
            pointwise,
        }
    }

    #[test]
    fn cri_is_two_standard_errors() {
        let d = ElpdDiff::from_diff_se(-5.690, 4.685);
        assert!((d.cri_low + 15.060).abs() < 1e-3 && (d.cri_high - 3.680).abs() < 1e-3);
    }

    #[test]
    fn diff_of_identical_results_is_zero() {
        let a = loo_from(vec![-1.0, -2.0, -0.5]);
        let d = elpd_diff(&a, &a).unwrap();
        assert_eq!((d.diff, d.se_diff), (0.0, 0.0));
    }

    #[test]
    fn diff_uses_paired_differences() {
        let a = loo_from(vec![-1.0, -2.0, -3.0, -4.0]);
        let b = loo_from(vec![-2.0, -2.0, -5.0, -4.0]);
        let d = elpd_diff(&a, &b).unwrap();
        assert!((d.diff + 3.0).abs() < 1e-12);
        // Differences -1, 0, -2, 0: variance 11/12.
        assert!((d.se_diff - (4.0f64 * 11.0 / 12.0).sqrt()).abs() < 1e-12);
        assert!(elpd_diff(&a, &loo_from(vec![0.0])).is_err());
    }

    #[test]
    fn exclusion_keeps_own_lag() {
        let spec = ModelSpec::default();
        let ex = exclusion_experiment(&spec, &["log R"]).unwrap();
        for i in 0..4 {
            assert_eq!(ex.phi_active(i, 0), i == 0);
            for j in 1..4 {
                assert!(ex.phi_active(i, j));
            }
        }
        assert_eq!(exclusion_experiment::<&str>(&spec, &[]).unwrap(), spec);
        let all = exclusion_experiment(&spec, &["log_r", "log_ed", "d_gdp", "d_transit"]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(all.phi_active(i, j), i == j);
            }
        }
        assert!(exclusion_experiment(&spec, &["cases"]).is_err());
    }

    #[test]
    fn comparison_grid() {
        let sets = exclusion_sets();
        assert_eq!(sets.len(), 12);
        assert_eq!(exclusion_label(&sets[0]), "Full Model");
        assert_eq!(exclusion_label(&sets[11]), "All Variables");
        assert_eq!(exclusion_label(&sets[3]), "ΔGDP & ΔTransit");
        assert_eq!(sets.iter().collect::<BTreeSet<_>>().len(), 12);
        assert_eq!(all_exclusion_sets().len(), 16);
    }

    /// y_i ~ N(θ, 1), θ ~ N(0, 10²): posterior draws and exact leave-one-out
    /// predictive densities.
    fn normal_mean_fixture(y: &[f64], n_draws: usize, seed: u64) -> (LoglikMatrix, Vec<f64>) {
        let prior_var = 100.0;
        let post = |ys: &[f64]| {
            let prec = 1.0 / prior_var + ys.len() as f64;
            (ys.iter().sum::<f64>() / prec, 1.0 / prec)
        };
        let (m, v) = post(y);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(m, v.sqrt()).unwrap();
        let log_n = |x: f64, mean: f64, var: f64| -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var);
        let mut values = Vec::with_capacity(n_draws * y.len());
        for _ in 0..n_draws {
            let theta = normal.sample(&mut rng);
            values.extend(y.iter().map(|&yi| log_n(yi, theta, 1.0)));
        }
        let exact = (0..y.len())
            .map(|i| {
                let rest: Vec<f64> = y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
                let (m, v) = post(&rest);
                log_n(y[i], m, 1.0 + v)
            })
            .collect();
        (LoglikMatrix::new(n_draws, y.len(), values).unwrap(), exact)
    }

    #[test]
    fn psis_matches_exact_loo_on_conjugate_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(1.0, 1.0).unwrap();
        let y: Vec<f64> = (0..10).map(|_| normal.sample(&mut rng)).collect();
        let (ll, exact) = normal_mean_fixture(&y, 4000, 12);
        let loo = psis_loo(&ll).unwrap();
        let exact_total: f64 = exact.iter().sum();
        assert!((loo.elpd - exact_total).abs() < 0.1, "{} vs {exact_total}", loo.elpd);
        assert!((loo.pointwise.iter().sum::<f64>() - loo.elpd).abs() < 1e-12);
        assert!(loo.elpd <= loo.lpd);
        assert!(loo.pareto_k.iter().all(|k| k.is_finite() && *k < PARETO_K_THRESHOLD));
    }

    #[test]
    fn outlier_raises_pareto_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut y: Vec<f64> = (0..9).map(|_| normal.sample(&mut rng)).collect();
        y.push(15.0);
        let (ll, _) = normal_mean_fixture(&y, 4000, 14);
        let loo = psis_loo(&ll).unwrap();
        assert!(loo.pareto_k[9] > PARETO_K_THRESHOLD, "{}", loo.pareto_k[9]);
        assert_eq!(loo.high_k(), vec![9]);
    }
}
