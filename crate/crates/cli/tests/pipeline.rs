use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_panelvar"));
    c.env("PANELVAR_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn panelvar")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(root: &Path, countries: &str, weeks: &str) -> PathBuf {
    let dir = root.join("sim");
    ok(&["simulate", "--out", s(&dir), "--seed", "3", "--countries", countries, "--weeks", weeks]);
    dir
}

fn fit(sim: &Path, out: &Path, extra: &[&str]) -> Output {
    let config = sim.join("config.json");
    let mut args = vec![
        "fit", "--data", s(sim), "--config", s(&config), "--out", s(out), "--seed", "5", "--chains", "2",
        "--warmup", "150", "--iterations", "100",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn simulate_fit_downstream() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "4", "30");
    for f in ["responses.csv", "panel.json", "truth.csv", "config.json", "manifest.json"] {
        assert!(sim.join(f).exists(), "simulate did not write {f}");
    }

    let fit_dir = tmp.path().join("fit");
    let out = fit(&sim, &fit_dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let n_params = csv_rows(&sim.join("truth.csv")) - 1;
    assert_eq!(csv_rows(&fit_dir.join("summary.csv")), n_params + 1);
    assert_eq!(csv_rows(&fit_dir.join("draws.csv")), 200 + 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "fit");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let irf_dir = tmp.path().join("irf");
    ok(&["irf", "--fit", s(&fit_dir), "--out", s(&irf_dir), "--horizon", "6"]);
    // header + 7 horizons x 16 cells
    assert_eq!(csv_rows(&irf_dir.join("irf.csv")), 1 + 7 * 16);
    assert!(fs::read_to_string(irf_dir.join("irf.svg")).unwrap().starts_with("<svg"));

    let fc_dir = tmp.path().join("forecast");
    ok(&["forecast", "--fit", s(&fit_dir), "--out", s(&fc_dir)]);
    assert_eq!(csv_rows(&fc_dir.join("forecast.csv")), 1 + 4 * 29 * 4);
    assert_eq!(csv_rows(&fc_dir.join("forecast_rmse.csv")), 1 + 4);
    assert!(fc_dir.join("forecast.svg").exists());

    let ph_dir = tmp.path().join("posthoc");
    ok(&["posthoc", "--fit", s(&fit_dir), "--out", s(&ph_dir)]);
    // six intercept pairs
    assert_eq!(csv_rows(&ph_dir.join("correlations.csv")), 1 + 6);
}

#[test]
fn same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "3", "20");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(fit(&sim, &a, &[]).status.success());
    assert!(fit(&sim, &b, &["--threads", "1"]).status.success());
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
    assert_eq!(fs::read(a.join("draws.csv")).unwrap(), fs::read(b.join("draws.csv")).unwrap());
}

#[test]
fn corrupt_gradient_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "3", "20");
    let out = fit(&sim, &tmp.path().join("fit"), &["--debug-corrupt-gradient"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gradient"));
}

#[test]
fn missing_prerequisite_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["irf", "--fit", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("irf"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("draws.csv"));

    let out = run(&["fit", "--data", s(tmp.path()), "--out", s(&tmp.path().join("f")), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_is_required() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["fit", "--data", s(tmp.path()), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn irf_from_single_draw() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "3", "20");
    let fit_dir = tmp.path().join("fit");
    let config = sim.join("config.json");
    ok(&[
        "fit", "--data", s(&sim), "--config", s(&config), "--out", s(&fit_dir), "--seed", "2", "--chains", "1",
        "--warmup", "50", "--iterations", "1",
    ]);
    let irf_dir = tmp.path().join("irf");
    ok(&["irf", "--fit", s(&fit_dir), "--out", s(&irf_dir), "--kind", "girf", "--horizon", "3"]);
    let text = fs::read_to_string(irf_dir.join("irf.csv")).unwrap();
    // a single draw has a degenerate band: mean == low == high
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[4], f[5]);
        assert_eq!(f[5], f[6]);
    }
}

#[test]
fn loo_default_and_exclusions() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "3", "25");
    let out_dir = tmp.path().join("loo");
    let config = sim.join("config.json");
    ok(&[
        "loo", "--data", s(&sim), "--config", s(&config), "--out", s(&out_dir), "--seed", "4", "--chains", "2",
        "--warmup", "100", "--iterations", "100",
    ]);
    let text = fs::read_to_string(out_dir.join("elpd_diff.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("Full Model,"));
    assert!(rows[1].starts_with("All Variables,"));
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("loo.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
}

#[test]
fn bad_exclusion_name_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "3", "20");
    let out = run(&[
        "loo", "--data", s(&sim), "--out", s(&tmp.path().join("loo")), "--seed", "4", "--exclude", "log_r,bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
