//! Python bindings for the panel VAR toolkit.
//!
//! Arrays cross the boundary as plain lists; tables come back as lists of
//! dicts so they drop straight into `pandas.DataFrame`.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use panelvar_core::dataset::{load_panel, DataConfig};
use panelvar_core::dataset::transforms::default_npi_ids;
use panelvar_core::diagnostics::{self, ParamSummary};
use panelvar_core::evaluation::{self, ForecastResult, LoglikMatrix, LooResult};
use panelvar_core::fit::{fit_model, Fit};
use panelvar_core::irf::{irf_posterior, IrfKind, IrfResult};
use panelvar_core::model::PanelModel;
use panelvar_core::synth::{self, Scenario};
use panelvar_core::{io, Error, ModelSpec, PanelDataset, Response, SamplerConfig, N_RESPONSES};

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::Sampling { .. } | Error::NonFinite { .. } => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for panelvar_core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn parse_spec(spec_json: Option<&str>, var_only: bool, exclude: Option<Vec<String>>) -> PyResult<ModelSpec> {
    let mut spec = match spec_json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None if var_only => ModelSpec::var_only(),
        None => ModelSpec::default(),
    };
    if let Some(ex) = exclude {
        spec = evaluation::exclusion_experiment(&spec, &ex).py_err()?;
    }
    Ok(spec)
}

/// A weekly country panel.
#[pyclass(module = "panelvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Panel {
    inner: PanelDataset,
}

#[pymethods]
impl Panel {
    /// Assemble a panel from a directory of raw CSV files.
    #[staticmethod]
    #[pyo3(signature = (dir, npi_ids=None, config_json=None))]
    fn load(dir: PathBuf, npi_ids: Option<Vec<String>>, config_json: Option<&str>) -> PyResult<Panel> {
        let config: DataConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => DataConfig::default(),
        };
        let ids = npi_ids.unwrap_or_else(default_npi_ids);
        let load = load_panel(&dir, &ids, &config).py_err()?;
        Ok(Panel { inner: load.panel })
    }

    #[staticmethod]
    fn from_json(path: PathBuf) -> PyResult<Panel> {
        Ok(Panel { inner: PanelDataset::from_json_file(&path).py_err()? })
    }

    fn to_json(&self, path: PathBuf) -> PyResult<()> {
        self.inner.to_json_file(&path).py_err()
    }

    #[getter]
    fn countries(&self) -> Vec<String> {
        self.inner.country_names()
    }

    #[getter]
    fn npi_names(&self) -> Vec<String> {
        self.inner.npi_names.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.n_countries()
    }

    /// Response matrix of one country, one row per week in the order
    /// log R, log ED, ΔGDP, ΔTransit.
    fn responses(&self, country: &str) -> PyResult<Vec<[f64; N_RESPONSES]>> {
        let i = self
            .inner
            .country_index(country)
            .ok_or_else(|| PyValueError::new_err(format!("unknown country {country:?}")))?;
        Ok(self.inner.countries[i].y.clone())
    }

    fn without_country(&self, country: &str) -> PyResult<Panel> {
        Ok(Panel { inner: self.inner.without_country(country).py_err()? })
    }

    fn __repr__(&self) -> String {
        format!("Panel({} countries, {} NPIs)", self.inner.n_countries(), self.inner.n_npis())
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &ParamSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("name", &s.name)?;
    d.set_item("mean", s.mean)?;
    d.set_item("sd", s.sd)?;
    d.set_item("cri_low", s.cri_low)?;
    d.set_item("cri_high", s.cri_high)?;
    d.set_item("rhat", s.rhat)?;
    d.set_item("rel_ess", s.rel_ess)?;
    Ok(d)
}

/// Posterior draws of a fitted model.
#[pyclass(module = "panelvar", frozen)]
struct Posterior {
    fit: Fit,
    panel: PanelDataset,
}

impl Posterior {
    fn loo_inner(&self) -> panelvar_core::Result<LooResult> {
        evaluation::psis_loo(&evaluation::model_loglik(&self.fit.model, &self.fit.draws)?)
    }
}

#[pymethods]
impl Posterior {
    #[getter]
    fn names(&self) -> Vec<String> {
        self.fit.draws.names.clone()
    }

    #[getter]
    fn chains(&self) -> usize {
        self.fit.draws.chains
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.fit.draws.iterations
    }

    #[getter]
    fn divergences(&self) -> Vec<usize> {
        self.fit.draws.divergences.clone()
    }

    /// All draws of one parameter, chains concatenated.
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let i = self
            .fit
            .draws
            .index_of(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown parameter {name:?}")))?;
        Ok(self.fit.draws.column(i))
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rows = diagnostics::summarize(&self.fit.draws).py_err()?;
        rows.iter().map(|s| summary_dict(py, s)).collect()
    }

    fn write_draws(&self, path: PathBuf) -> PyResult<()> {
        io::write_draws_csv(&path, &self.fit.draws).py_err()
    }

    #[pyo3(signature = (kind="oirf", horizon=20))]
    fn irf(&self, py: Python<'_>, kind: &str, horizon: usize) -> PyResult<Irf> {
        let kind: IrfKind = kind.parse().py_err()?;
        let draws = &self.fit.draws;
        let inner = py.detach(|| irf_posterior(draws, kind, horizon)).py_err()?;
        Ok(Irf { inner })
    }

    fn loo(&self, py: Python<'_>) -> PyResult<Loo> {
        Ok(Loo { inner: py.detach(|| self.loo_inner()).py_err()? })
    }

    /// One-step-ahead forecasts on the panel the model was fitted to.
    fn forecast(&self, py: Python<'_>) -> PyResult<Forecast> {
        let inner = py
            .detach(|| evaluation::model_forecast(&self.fit.model, &self.fit.draws, &self.panel))
            .py_err()?;
        Ok(Forecast { inner })
    }
}

/// Posterior impulse responses.
#[pyclass(module = "panelvar", frozen)]
struct Irf {
    inner: IrfResult,
}

#[pymethods]
impl Irf {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.label()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    #[getter]
    fn n_draws(&self) -> usize {
        self.inner.n_draws
    }

    /// `(mean, cri_low, cri_high)` of the response of `response` to a shock in
    /// `shock` at horizon `h`. Variables are given by name.
    fn band(&self, h: usize, response: &str, shock: &str) -> PyResult<(f64, f64, f64)> {
        let i: Response = response.parse().py_err()?;
        let j: Response = shock.parse().py_err()?;
        if h > self.inner.horizon {
            return Err(PyValueError::new_err(format!("horizon {h} beyond {}", self.inner.horizon)));
        }
        Ok(self.inner.band(h, i.index(), j.index()))
    }

    fn value(&self, draw: usize, h: usize, response: &str, shock: &str) -> PyResult<f64> {
        let i: Response = response.parse().py_err()?;
        let j: Response = shock.parse().py_err()?;
        if draw >= self.inner.n_draws || h > self.inner.horizon {
            return Err(PyValueError::new_err("draw or horizon out of range"));
        }
        Ok(self.inner.value(draw, h, i.index(), j.index()))
    }
}

/// PSIS leave-one-out estimate.
#[pyclass(module = "panelvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Loo {
    inner: LooResult,
}

#[pymethods]
impl Loo {
    #[getter]
    fn elpd(&self) -> f64 {
        self.inner.elpd
    }

    #[getter]
    fn elpd_se(&self) -> f64 {
        self.inner.elpd_se
    }

    #[getter]
    fn p_loo(&self) -> f64 {
        self.inner.p_loo
    }

    #[getter]
    fn lpd(&self) -> f64 {
        self.inner.lpd
    }

    #[getter]
    fn pointwise(&self) -> Vec<f64> {
        self.inner.pointwise.clone()
    }

    #[getter]
    fn pareto_k(&self) -> Vec<f64> {
        self.inner.pareto_k.clone()
    }

    fn high_k(&self) -> Vec<usize> {
        self.inner.high_k()
    }

    fn __repr__(&self) -> String {
        format!("Loo(elpd={:.3}, se={:.3}, p_loo={:.2})", self.inner.elpd, self.inner.elpd_se, self.inner.p_loo)
    }
}

/// One-step-ahead forecasts and their pooled RMSE.
#[pyclass(module = "panelvar", frozen)]
struct Forecast {
    inner: ForecastResult,
}

#[pymethods]
impl Forecast {
    #[getter]
    fn rmse_model(&self) -> [f64; N_RESPONSES] {
        self.inner.rmse_model
    }

    #[getter]
    fn rmse_naive(&self) -> [f64; N_RESPONSES] {
        self.inner.rmse_naive
    }

    #[getter]
    fn reduction(&self) -> [f64; N_RESPONSES] {
        self.inner.reduction
    }

    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .rows
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("country", &r.country)?;
                d.set_item("week", r.week.to_string())?;
                d.set_item("variable", r.variable.name())?;
                d.set_item("actual", r.actual)?;
                d.set_item("model", r.model)?;
                d.set_item("naive", r.naive)?;
                Ok(d)
            })
            .collect()
    }
}

/// Simulate a panel from realistic ground truth. Returns the panel and the
/// true parameter values keyed by draw-column name.
#[pyfunction]
#[pyo3(signature = (countries, weeks, seed, scenario="pandemic", var_only=false))]
fn simulate(
    countries: usize,
    weeks: usize,
    seed: u64,
    scenario: &str,
    var_only: bool,
) -> PyResult<(Panel, Vec<(String, f64)>)> {
    let scen = match scenario {
        "zero" => Scenario::Zero,
        "pandemic" => Scenario::Pandemic,
        other => return Err(PyValueError::new_err(format!("unknown scenario {other:?}"))),
    };
    let spec = if var_only { ModelSpec::var_only() } else { ModelSpec::default() };
    let truth = synth::default_truth(&spec, countries, seed);
    let panel = synth::simulate_panel(&truth, &spec, countries, weeks, scen, seed.wrapping_add(1)).py_err()?;
    let model = PanelModel::new(&panel, &spec).py_err()?;
    let values = model.layout.to_constrained(&truth).py_err()?;
    let named = model.layout.names().iter().cloned().zip(values).collect();
    Ok((Panel { inner: panel }, named))
}

/// Fit the panel VAR by NUTS. `spec_json` overrides the default model
/// specification; `exclude` names responses dropped as predictors.
#[pyfunction]
#[pyo3(signature = (panel, seed, chains=4, warmup=2000, iterations=2000, var_only=false, exclude=None, spec_json=None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    panel: &Panel,
    seed: u64,
    chains: usize,
    warmup: usize,
    iterations: usize,
    var_only: bool,
    exclude: Option<Vec<String>>,
    spec_json: Option<&str>,
) -> PyResult<Posterior> {
    let spec = parse_spec(spec_json, var_only, exclude)?;
    let config = SamplerConfig { chains, warmup, iterations, seed, ..SamplerConfig::default() };
    let data = panel.inner.clone();
    let fit = py.detach(|| fit_model(&data, &spec, &config)).py_err()?;
    Ok(Posterior { fit, panel: data })
}

/// PSIS-LOO from a draws × observations log-likelihood matrix.
#[pyfunction]
fn psis_loo(loglik: Vec<Vec<f64>>) -> PyResult<Loo> {
    let n_draws = loglik.len();
    let n_obs = loglik.first().map_or(0, Vec::len);
    if loglik.iter().any(|r| r.len() != n_obs) {
        return Err(PyValueError::new_err("ragged log-likelihood matrix"));
    }
    let m = LoglikMatrix::new(n_draws, n_obs, loglik.concat()).py_err()?;
    Ok(Loo { inner: evaluation::psis_loo(&m).py_err()? })
}

/// `elpd(b) − elpd(a)` with its paired standard error and ±2 se interval.
#[pyfunction]
fn elpd_diff<'py>(py: Python<'py>, a: &Loo, b: &Loo) -> PyResult<Bound<'py, PyDict>> {
    let e = evaluation::elpd_diff(&a.inner, &b.inner).py_err()?;
    let d = PyDict::new(py);
    d.set_item("diff", e.diff)?;
    d.set_item("se_diff", e.se_diff)?;
    d.set_item("cri_low", e.cri_low)?;
    d.set_item("cri_high", e.cri_high)?;
    Ok(d)
}

#[pyfunction]
fn naive_forecast(series: Vec<f64>) -> Vec<f64> {
    evaluation::naive_forecast(&series)
}

#[pyfunction]
fn split_rhat(chains: Vec<Vec<f64>>) -> PyResult<f64> {
    diagnostics::split_rhat(&chains).py_err()
}

#[pyfunction]
fn relative_ess(chains: Vec<Vec<f64>>) -> PyResult<f64> {
    diagnostics::relative_ess(&chains).py_err()
}

/// Spectral radius of the companion matrix of the given square lag matrices.
#[pyfunction]
fn stability_check(phis: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let mats = phis
        .iter()
        .map(|rows| {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(PyValueError::new_err("lag matrices must be square"));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        })
        .collect::<PyResult<Vec<_>>>()?;
    synth::stability_check(&mats).py_err()
}

/// Names of the responses in model order.
#[pyfunction]
fn responses() -> Vec<&'static str> {
    Response::ALL.iter().map(|r| r.name()).collect()
}

#[pymodule]
fn panelvar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Panel>()?;
    m.add_class::<Posterior>()?;
    m.add_class::<Irf>()?;
    m.add_class::<Loo>()?;
    m.add_class::<Forecast>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(psis_loo, m)?)?;
    m.add_function(wrap_pyfunction!(elpd_diff, m)?)?;
    m.add_function(wrap_pyfunction!(naive_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(split_rhat, m)?)?;
    m.add_function(wrap_pyfunction!(relative_ess, m)?)?;
    m.add_function(wrap_pyfunction!(stability_check, m)?)?;
    m.add_function(wrap_pyfunction!(responses, m)?)?;
    Ok(())
}
