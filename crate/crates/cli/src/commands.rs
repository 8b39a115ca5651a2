use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use panelvar_core::dataset::{load_characteristics, load_panel};
use panelvar_core::diagnostics::{summarize, ParamSummary};
use panelvar_core::evaluation::{
    exclusion_label, exclusion_sets, exclude_responses, model_forecast, model_loglik, psis_loo, ElpdDiff,
};
use panelvar_core::fit::{fit_model, Fit};
use panelvar_core::irf::{irf_posterior, IrfKind};
use panelvar_core::model::PanelModel;
use panelvar_core::posthoc::{characteristic_correlation, intercept_correlation, kmeans, loco_sensitivity, pca_characteristics};
use panelvar_core::sampler::{run_sampling, LogDensity};
use panelvar_core::synth::{default_truth, simulate_panel, write_raw_csv, Scenario};
use panelvar_core::{io, Error, PanelDataset, Response};

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;
use crate::{plots, Common, SamplerArgs, ScenarioArg};

const RHAT_LIMIT: f64 = 1.01;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// A prerequisite artefact is missing.
    Missing(PathBuf),
    Diagnostics(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Missing(p) => write!(f, "missing prerequisite {}", p.display()),
            CliError::Diagnostics(m) => write!(f, "diagnostics failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.root() {
                Error::Sampling { .. } | Error::NonFinite { .. } => 3,
                _ => 2,
            },
            CliError::Missing(_) => 2,
            CliError::Diagnostics(_) => 4,
        }
    }
}

type CliResult = Result<(), CliError>;

fn require(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Missing(path))
    }
}

fn setup(common: &Common) -> CliResult {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&common.out)?;
    Ok(())
}

fn apply_sampler_args(cfg: &mut RunConfig, s: &SamplerArgs) {
    cfg.sampler.seed = s.seed;
    if let Some(v) = s.chains {
        cfg.sampler.chains = v;
    }
    if let Some(v) = s.warmup {
        cfg.sampler.warmup = v;
    }
    if let Some(v) = s.iterations {
        cfg.sampler.iterations = v;
    }
}

/// Raw CSV files when `responses.csv` is present, otherwise `panel.json`.
fn load_data(dir: &Path, cfg: &RunConfig) -> Result<PanelDataset, CliError> {
    if dir.join("responses.csv").exists() {
        let load = load_panel(dir, &cfg.model.npi_names, &cfg.data)?;
        for d in &load.dropped {
            warn!("dropped {}: {}", d.country, d.reason);
        }
        Ok(load.panel)
    } else if dir.join("panel.json").exists() {
        Ok(PanelDataset::from_json_file(&dir.join("panel.json"))?)
    } else {
        Err(CliError::Missing(dir.join("responses.csv")))
    }
}

fn report(summary: &[ParamSummary], fit: &Fit) {
    let max_rhat = summary.iter().map(|s| s.rhat).filter(|v| v.is_finite()).fold(f64::NAN, f64::max);
    let ess: Vec<f64> = summary.iter().map(|s| s.rel_ess).filter(|v| v.is_finite()).collect();
    let above = ess.iter().filter(|v| **v > 0.5).count();
    info!(
        "max R-hat {max_rhat:.4}; relative ESS > 0.5 for {above} of {} parameters; {} divergent transitions",
        ess.len(),
        fit.draws.total_divergences()
    );
}

pub fn simulate(
    common: &Common,
    seed: u64,
    countries: Option<usize>,
    weeks: Option<usize>,
    scenario: Option<ScenarioArg>,
) -> CliResult {
    let run = ManifestBuilder::start("simulate");
    setup(common)?;
    let mut cfg = RunConfig::load(common.config.as_deref(), None)?;
    if let Some(c) = countries {
        cfg.simulate.countries = c;
    }
    if let Some(w) = weeks {
        cfg.simulate.weeks = w;
    }
    if let Some(s) = scenario {
        cfg.simulate.scenario = match s {
            ScenarioArg::Zero => "zero",
            ScenarioArg::Pandemic => "pandemic",
        }
        .into();
    }
    let scen = match cfg.simulate.scenario.as_str() {
        "zero" => Scenario::Zero,
        "pandemic" => Scenario::Pandemic,
        other => return Err(Error::InvalidInput(format!("unknown scenario '{other}'")).into()),
    };
    cfg.sampler.seed = seed;
    let (n, t) = (cfg.simulate.countries, cfg.simulate.weeks);
    let truth = default_truth(&cfg.model, n, seed);
    let panel = simulate_panel(&truth, &cfg.model, n, t, scen, seed.wrapping_add(1))?;
    cfg.data = write_raw_csv(&panel, &common.out)?;
    panel.to_json_file(&common.out.join("panel.json"))?;
    let model = PanelModel::new(&panel, &cfg.model)?;
    let truth_row = model.layout.to_constrained(&truth)?;
    io::write_named_values_csv(&common.out.join("truth.csv"), model.layout.names(), &truth_row)?;
    io::write_json(&common.out.join("config.json"), &cfg)?;
    info!("simulated {n} countries x {t} weeks into {}", common.out.display());
    run.finish(&cfg, Some(seed), &[], &common.out)?;
    Ok(())
}

/// A density whose gradient is deliberately wrong, to exercise the sampler's
/// gradient self-test from the command line.
struct CorruptGradient<'a>(&'a PanelModel);

impl LogDensity for CorruptGradient<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> panelvar_core::Result<f64> {
        let v = self.0.eval(x, Some(grad))?;
        grad[0] += 1.0;
        Ok(v)
    }

    fn constrain(&self, x: &[f64]) -> panelvar_core::Result<Vec<f64>> {
        LogDensity::constrain(self.0, x)
    }

    fn param_names(&self) -> Vec<String> {
        self.0.param_names()
    }
}

pub fn fit(common: &Common, data: &Path, sampler: &SamplerArgs, strict: bool, corrupt: bool) -> CliResult {
    let run = ManifestBuilder::start("fit");
    setup(common)?;
    let mut cfg = RunConfig::load(common.config.as_deref(), None)?;
    apply_sampler_args(&mut cfg, sampler);
    let panel = load_data(data, &cfg)?;
    let fit = if corrupt {
        let model = PanelModel::new(&panel, &cfg.model)?;
        let draws = run_sampling(&CorruptGradient(&model), &cfg.sampler)?;
        Fit { model, draws }
    } else {
        fit_model(&panel, &cfg.model, &cfg.sampler)?
    };
    let summary = summarize(&fit.draws)?;
    let out = &common.out;
    io::write_draws_csv(&out.join("draws.csv"), &fit.draws)?;
    io::write_summary_csv(&out.join("summary.csv"), &summary)?;
    io::write_json(&out.join("telemetry.json"), &fit.draws.telemetry())?;
    io::write_json(&out.join("config.json"), &cfg)?;
    panel.to_json_file(&out.join("panel.json"))?;
    fs::write(out.join("coefficients.svg"), plots::coefficient_forest(&summary))?;
    report(&summary, &fit);
    run.finish(&cfg, Some(cfg.sampler.seed), &[data.to_path_buf()], out)?;
    if strict {
        let bad: Vec<&str> = summary
            .iter()
            .filter(|s| s.rhat > RHAT_LIMIT)
            .map(|s| s.name.as_str())
            .collect();
        if !bad.is_empty() {
            return Err(CliError::Diagnostics(format!(
                "{} parameters with R-hat > {RHAT_LIMIT}, first {}",
                bad.len(),
                bad[0]
            )));
        }
    }
    Ok(())
}

pub fn irf(common: &Common, fit_dir: &Path, kind: Option<String>, horizon: Option<usize>) -> CliResult {
    let run = ManifestBuilder::start("irf");
    let draws_path = require(fit_dir.join("draws.csv"))?;
    setup(common)?;
    let mut cfg = RunConfig::load(common.config.as_deref(), Some(&fit_dir.join("config.json")))?;
    if let Some(k) = kind {
        cfg.irf.kind = k;
    }
    if let Some(h) = horizon {
        cfg.irf.horizon = h;
    }
    let kind: IrfKind = cfg.irf.kind.parse()?;
    let draws = io::read_draws_csv(&draws_path)?;
    let irf = irf_posterior(&draws, kind, cfg.irf.horizon)?;
    io::write_irf_csv(&common.out.join("irf.csv"), &irf)?;
    fs::write(common.out.join("irf.svg"), plots::irf_grid(&irf))?;
    run.finish(&cfg, None, &[draws_path], &common.out)?;
    Ok(())
}

pub fn loo(common: &Common, data: &Path, sampler: &SamplerArgs, exclude: &[String], table: bool) -> CliResult {
    let run = ManifestBuilder::start("loo");
    setup(common)?;
    let mut cfg = RunConfig::load(common.config.as_deref(), None)?;
    apply_sampler_args(&mut cfg, sampler);
    let panel = load_data(data, &cfg)?;
    let mut sets = if table {
        exclusion_sets()
    } else if exclude.is_empty() {
        vec![Default::default(), Response::ALL.into_iter().collect()]
    } else {
        let mut v = vec![Default::default()];
        for e in exclude {
            v.push(e.split(',').map(|s| s.trim().parse::<Response>()).collect::<Result<_, _>>()?);
        }
        v
    };
    sets.dedup();
    let mut reports = Vec::new();
    let mut results = Vec::new();
    for set in &sets {
        let label = exclusion_label(set);
        info!("fitting model '{label}'");
        let spec = exclude_responses(&cfg.model, set);
        let fit = fit_model(&panel, &spec, &cfg.sampler).map_err(|e| e.context(label.clone()))?;
        let loo = psis_loo(&model_loglik(&fit.model, &fit.draws)?)?;
        reports.push(io::LooReport::new(label.clone(), &loo));
        results.push((label, loo));
    }
    let reference = &results[0].1;
    let mut rows: Vec<(String, ElpdDiff)> = results
        .iter()
        .map(|(l, r)| Ok((l.clone(), panelvar_core::evaluation::elpd_diff(reference, r)?)))
        .collect::<Result<_, Error>>()?;
    rows[1..].sort_by(|a, b| b.1.diff.total_cmp(&a.1.diff));
    io::write_json(&common.out.join("loo.json"), &reports)?;
    io::write_elpd_diff_csv(&common.out.join("elpd_diff.csv"), &rows)?;
    run.finish(&cfg, Some(cfg.sampler.seed), &[data.to_path_buf()], &common.out)?;
    Ok(())
}

pub fn forecast(common: &Common, fit_dir: &Path) -> CliResult {
    let run = ManifestBuilder::start("forecast");
    let draws_path = require(fit_dir.join("draws.csv"))?;
    let panel_path = require(fit_dir.join("panel.json"))?;
    let config_path = require(fit_dir.join("config.json"))?;
    setup(common)?;
    let cfg = RunConfig::load(common.config.as_deref(), Some(&config_path))?;
    let panel = PanelDataset::from_json_file(&panel_path)?;
    let draws = io::read_draws_csv(&draws_path)?;
    let model = PanelModel::new(&panel, &cfg.model)?;
    let f = model_forecast(&model, &draws, &panel)?;
    io::write_forecast_csv(&common.out.join("forecast.csv"), &f)?;
    io::write_forecast_rmse_csv(&common.out.join("forecast_rmse.csv"), &f)?;
    fs::write(common.out.join("forecast.svg"), plots::forecast_scatter(&f))?;
    for r in Response::ALL {
        let i = r.index();
        info!(
            "{}: RMSE model {:.4}, naive {:.4}, reduction {:.1}%",
            r.label(),
            f.rmse_model[i],
            f.rmse_naive[i],
            100.0 * f.reduction[i]
        );
    }
    run.finish(&cfg, None, &[draws_path, panel_path, config_path], &common.out)?;
    Ok(())
}

pub fn posthoc(common: &Common, fit_dir: &Path, characteristics: Option<&Path>, clusters: Option<usize>) -> CliResult {
    let run = ManifestBuilder::start("posthoc");
    let draws_path = require(fit_dir.join("draws.csv"))?;
    setup(common)?;
    let mut cfg = RunConfig::load(common.config.as_deref(), Some(&fit_dir.join("config.json")))?;
    if let Some(k) = clusters {
        cfg.posthoc.clusters = k;
    }
    let draws = io::read_draws_csv(&draws_path)?;
    let mut inputs = vec![draws_path];
    let mut corr = Vec::new();
    for (a, ra) in Response::ALL.iter().enumerate() {
        for rb in &Response::ALL[a + 1..] {
            corr.push(intercept_correlation(&draws, *ra, *rb)?);
        }
    }
    if let Some(path) = characteristics {
        let path = require(path.to_path_buf())?;
        let table = load_characteristics(&path)?;
        for r in Response::ALL {
            for f in &table.features {
                match characteristic_correlation(&draws, r, &table, f) {
                    Ok(c) => corr.push(c),
                    Err(e) => warn!("skipping {} ~ {f}: {e}", r.label()),
                }
            }
        }
        let pca = pca_characteristics(&table)?;
        io::write_pca_loadings_csv(&common.out.join("pca_loadings.csv"), &pca, cfg.posthoc.components)?;
        let km = kmeans(&pca.standardized, cfg.posthoc.clusters, cfg.sampler.seed, cfg.posthoc.restarts)?;
        io::write_clusters_csv(&common.out.join("clusters.csv"), &pca, &km)?;
        inputs.push(path);
    } else {
        info!("no --characteristics given; only intercept correlations are computed");
    }
    io::write_correlations_csv(&common.out.join("correlations.csv"), &corr)?;
    run.finish(&cfg, None, &inputs, &common.out)?;
    Ok(())
}

pub fn sensitivity(common: &Common, data: &Path, sampler: &SamplerArgs) -> CliResult {
    let run = ManifestBuilder::start("sensitivity");
    setup(common)?;
    let mut cfg = RunConfig::load(common.config.as_deref(), None)?;
    apply_sampler_args(&mut cfg, sampler);
    let panel = load_data(data, &cfg)?;
    let results = loco_sensitivity(&panel, &cfg.model, &cfg.sampler)?;
    io::write_loco(&common.out.join("loco"), &results)?;
    run.finish(&cfg, Some(cfg.sampler.seed), &[data.to_path_buf()], &common.out)?;
    Ok(())
}
