use nalgebra::{DMatrix, Matrix4, Vector4};
use panelvar_core::dataset::{load_panel, DataConfig};
use panelvar_core::diagnostics::summarize;
use panelvar_core::evaluation::{model_forecast, model_loglik, psis_loo};
use panelvar_core::fit::fit_model;
use panelvar_core::irf::{irf_posterior, IrfKind};
use panelvar_core::posthoc::{intercept_correlation, loco_sensitivity};
use panelvar_core::synth::{default_truth, simulate_panel, write_raw_csv, Scenario, TrueParameters};
use panelvar_core::{io, ModelSpec, PanelDataset, Response, SamplerConfig};

fn quick(seed: u64) -> SamplerConfig {
    SamplerConfig { chains: 2, warmup: 300, iterations: 300, seed, ..SamplerConfig::default() }
}

fn var_truth(phi: Matrix4<f64>, countries: usize) -> TrueParameters {
    let mut t = TrueParameters::zeros(1, 0, countries);
    t.phi[0] = phi;
    t.sigma_mu = 0.05;
    t.mu = DMatrix::from_fn(4, countries, |i, c| 0.02 * ((i + 2 * c) % 5) as f64 - 0.04);
    t.resid_scales = Vector4::repeat(0.1);
    t.corr_factor = Matrix4::identity();
    t
}

fn var_panel(phi: Matrix4<f64>, countries: usize, weeks: usize, seed: u64) -> PanelDataset {
    simulate_panel(&var_truth(phi, countries), &ModelSpec::var_only(), countries, weeks, Scenario::Zero, seed).unwrap()
}

#[test]
fn raw_files_to_posterior() {
    let spec = ModelSpec::default();
    let truth = default_truth(&spec, 5, 1);
    let panel = simulate_panel(&truth, &spec, 5, 40, Scenario::Pandemic, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = write_raw_csv(&panel, dir.path()).unwrap();
    let loaded = load_panel(dir.path(), &spec.npi_names, &config).unwrap();
    assert!(loaded.dropped.is_empty());
    assert_eq!(loaded.panel.country_names(), panel.country_names());

    let fit = fit_model(&loaded.panel, &spec, &quick(3)).unwrap();
    assert_eq!(fit.draws.n_draws(), 600);
    let summary = summarize(&fit.draws).unwrap();
    assert_eq!(summary.len(), fit.model.dim());

    let loo = psis_loo(&model_loglik(&fit.model, &fit.draws).unwrap()).unwrap();
    assert_eq!(loo.pointwise.len(), 5 * 39);
    assert!(loo.elpd <= loo.lpd);

    let fc = model_forecast(&fit.model, &fit.draws, &loaded.panel).unwrap();
    assert_eq!(fc.rows.len(), 5 * 39 * 4);

    let irf = irf_posterior(&fit.draws, IrfKind::Oirf, 10).unwrap();
    for s in 0..irf.n_draws {
        for i in 0..4 {
            for j in i + 1..4 {
                assert_eq!(irf.value(s, 0, i, j), 0.0);
            }
        }
    }

    let r = intercept_correlation(&fit.draws, Response::LogEd, Response::DGdp).unwrap();
    assert_eq!(r.n_countries, 5);
    assert!(r.values.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn default_data_window_keeps_simulated_weeks() {
    let spec = ModelSpec::default();
    let truth = default_truth(&spec, 3, 4);
    let panel = simulate_panel(&truth, &spec, 3, 30, Scenario::Pandemic, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_raw_csv(&panel, dir.path()).unwrap();
    let loaded = load_panel(dir.path(), &spec.npi_names, &DataConfig::default()).unwrap();
    assert_eq!(loaded.panel.countries[0].len(), panel.countries[0].len());
}

#[test]
fn draws_file_reproduces_the_irf() {
    let panel = var_panel(Matrix4::from_diagonal(&Vector4::new(0.6, 0.5, 0.2, 0.1)), 3, 30, 6);
    let fit = fit_model(&panel, &ModelSpec::var_only(), &quick(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("draws.csv");
    io::write_draws_csv(&path, &fit.draws).unwrap();
    let back = io::read_draws_csv(&path).unwrap();
    let a = irf_posterior(&fit.draws, IrfKind::Girf, 8).unwrap();
    let b = irf_posterior(&back, IrfKind::Girf, 8).unwrap();
    assert_eq!(a.mean, b.mean);
}

fn phi_means(summaries: &[panelvar_core::diagnostics::ParamSummary]) -> Vec<f64> {
    summaries.iter().filter(|s| s.name.starts_with("phi[")).map(|s| s.mean).collect()
}

#[test]
fn leave_one_out_flags_the_odd_country() {
    let common = Matrix4::from_diagonal(&Vector4::new(0.3, 0.3, 0.3, 0.3));
    let mut panel = var_panel(common, 5, 50, 8);
    // One country with much stronger persistence.
    let odd = var_panel(Matrix4::from_diagonal(&Vector4::new(0.95, 0.95, 0.95, 0.95)), 1, 50, 9);
    let mut extra = odd.countries[0].clone();
    extra.country = "ODD".into();
    panel.countries.push(extra);

    let spec = ModelSpec::var_only();
    let config = quick(10);
    let full = phi_means(&summarize(&fit_model(&panel, &spec, &config).unwrap().draws).unwrap());
    let loco = loco_sensitivity(&panel, &spec, &config).unwrap();
    assert_eq!(loco.len(), 6);
    let shift = |r: &panelvar_core::posthoc::LocoResult| {
        phi_means(&r.summaries).iter().zip(&full).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (odd_shift, others): (Vec<_>, Vec<_>) = loco.iter().partition(|r| r.excluded == "ODD");
    let odd_shift = shift(odd_shift[0]);
    let max_other = others.iter().map(|r| shift(r)).fold(0.0, f64::max);
    assert!(odd_shift > max_other, "odd {odd_shift}, others {max_other}");
}

#[test]
fn homogeneous_panel_is_stable_under_leave_one_out() {
    let phi = Matrix4::from_diagonal(&Vector4::new(0.5, 0.4, 0.3, 0.2));
    let panel = var_panel(phi, 5, 60, 11);
    let loco = loco_sensitivity(&panel, &ModelSpec::var_only(), &quick(12)).unwrap();
    for r in &loco {
        let means = phi_means(&r.summaries);
        let diag = [means[0], means[5], means[10], means[15]];
        for (m, t) in diag.iter().zip([0.5, 0.4, 0.3, 0.2]) {
            assert!((m - t).abs() < 0.15, "{}: {m} vs {t}", r.excluded);
        }
    }
}
