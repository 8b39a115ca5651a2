//! Reading and writing run artefacts. Numbers are written with 17
//! significant digits so every value survives a round trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::ParamSummary;
use crate::evaluation::{ElpdDiff, ForecastResult, LooResult, PARETO_K_THRESHOLD};
use crate::irf::IrfResult;
use crate::posthoc::{CorrelationPosterior, KMeansResult, LocoResult, PcaResult};
use crate::{Error, PosteriorDraws, Response, Result, N_RESPONSES};

/// Full-precision decimal form of `v`.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn parse_num(file: &Path, row: usize, s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        file: file.display().to_string(),
        row,
        msg: format!("'{s}' is not a number"),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    std::io::Write::write_all(&mut f, b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Two columns, `name` and `value`.
pub fn write_named_values_csv(path: &Path, names: &[String], values: &[f64]) -> Result<()> {
    if names.len() != values.len() {
        return Err(Error::Dimension(format!("{} names for {} values", names.len(), values.len())));
    }
    let mut w = writer(path)?;
    w.write_record(["name", "value"])?;
    for (n, v) in names.iter().zip(values) {
        w.write_record([n.clone(), fmt_num(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_named_values_csv(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        names.push(rec[0].to_string());
        values.push(parse_num(path, k + 2, &rec[1])?);
    }
    Ok((names, values))
}

/// One row per draw: `chain, iteration, <parameters...>`.
pub fn write_draws_csv(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(draws.names.iter().cloned());
    w.write_record(&header)?;
    for c in 0..draws.chains {
        for it in 0..draws.iterations {
            let d = draws.draw(c * draws.iterations + it);
            let mut rec = vec![c.to_string(), it.to_string()];
            rec.extend(d.iter().map(|v| fmt_num(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_draws_csv`]. Chains must be contiguous and of equal length.
pub fn read_draws_csv(path: &Path) -> Result<PosteriorDraws> {
    let file = File::open(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[0] != "chain" || header[1] != "iteration" {
        return Err(Error::Parse {
            file: path.display().to_string(),
            row: 1,
            msg: "expected header 'chain,iteration,<parameters>'".into(),
        });
    }
    let names = header[2..].to_vec();
    let mut values = Vec::new();
    let mut per_chain: Vec<usize> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let chain: usize = rec[0].parse().map_err(|_| Error::Parse {
            file: path.display().to_string(),
            row,
            msg: format!("bad chain index '{}'", &rec[0]),
        })?;
        if chain == per_chain.len() {
            per_chain.push(0);
        } else if chain + 1 != per_chain.len() {
            return Err(Error::Parse {
                file: path.display().to_string(),
                row,
                msg: "chains are not contiguous and ascending".into(),
            });
        }
        per_chain[chain] += 1;
        for s in rec.iter().skip(2) {
            values.push(parse_num(path, row, s)?);
        }
    }
    let iterations = per_chain.first().copied().unwrap_or(0);
    if per_chain.iter().any(|&n| n != iterations) {
        return Err(Error::Data(format!("{}: chains have different lengths {per_chain:?}", path.display())));
    }
    PosteriorDraws::from_values(names, per_chain.len(), iterations, values)
}

pub fn write_summary_csv(path: &Path, rows: &[ParamSummary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["name", "mean", "sd", "cri_low", "cri_high", "rhat", "rel_ess"])?;
    for s in rows {
        w.write_record([
            s.name.clone(),
            fmt_num(s.mean),
            fmt_num(s.sd),
            fmt_num(s.cri_low),
            fmt_num(s.cri_high),
            fmt_num(s.rhat),
            fmt_num(s.rel_ess),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<ParamSummary>> {
    let file = File::open(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    r.records()
        .enumerate()
        .map(|(k, rec)| {
            let rec = rec?;
            let n = |i: usize| parse_num(path, k + 2, &rec[i]);
            Ok(ParamSummary {
                name: rec[0].to_string(),
                mean: n(1)?,
                sd: n(2)?,
                cri_low: n(3)?,
                cri_high: n(4)?,
                rhat: n(5)?,
                rel_ess: n(6)?,
            })
        })
        .collect()
}

/// Long format: one row per horizon, response and shock.
pub fn write_irf_csv(path: &Path, irf: &IrfResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["kind", "horizon", "response", "shock", "mean", "cri_low", "cri_high"])?;
    for h in 0..=irf.horizon {
        for i in 0..N_RESPONSES {
            for j in 0..N_RESPONSES {
                let (m, lo, hi) = irf.band(h, i, j);
                w.write_record([
                    irf.kind.label().to_string(),
                    h.to_string(),
                    Response::ALL[i].name().to_string(),
                    Response::ALL[j].name().to_string(),
                    fmt_num(m),
                    fmt_num(lo),
                    fmt_num(hi),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_elpd_diff_csv(path: &Path, rows: &[(String, ElpdDiff)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "diff", "se", "cri_low", "cri_high"])?;
    for (label, d) in rows {
        w.write_record([
            label.clone(),
            fmt_num(d.diff),
            fmt_num(d.se_diff),
            fmt_num(d.cri_low),
            fmt_num(d.cri_high),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_elpd_diff_csv(path: &Path) -> Result<Vec<(String, ElpdDiff)>> {
    let file = File::open(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    r.records()
        .enumerate()
        .map(|(k, rec)| {
            let rec = rec?;
            let n = |i: usize| parse_num(path, k + 2, &rec[i]);
            Ok((
                rec[0].to_string(),
                ElpdDiff { diff: n(1)?, se_diff: n(2)?, cri_low: n(3)?, cri_high: n(4)? },
            ))
        })
        .collect()
}

/// Compact record of a PSIS-LOO run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub model: String,
    pub elpd: f64,
    pub elpd_se: f64,
    pub lpd: f64,
    pub p_loo: f64,
    pub n_obs: usize,
    pub n_draws: usize,
    pub k_max: f64,
    pub k_threshold: f64,
    pub n_high_k: usize,
    pub n_degenerate: usize,
}

impl LooReport {
    pub fn new(model: impl Into<String>, loo: &LooResult) -> Self {
        LooReport {
            model: model.into(),
            elpd: loo.elpd,
            elpd_se: loo.elpd_se,
            lpd: loo.lpd,
            p_loo: loo.p_loo,
            n_obs: loo.pointwise.len(),
            n_draws: loo.n_draws,
            k_max: loo.pareto_k.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            k_threshold: PARETO_K_THRESHOLD,
            n_high_k: loo.high_k().len(),
            n_degenerate: loo.degenerate.iter().filter(|d| **d).count(),
        }
    }
}

pub fn write_forecast_csv(path: &Path, f: &ForecastResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["country", "week", "variable", "actual", "model", "naive"])?;
    for r in &f.rows {
        w.write_record([
            r.country.clone(),
            r.week.to_string(),
            r.variable.name().to_string(),
            fmt_num(r.actual),
            fmt_num(r.model),
            fmt_num(r.naive),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_forecast_rmse_csv(path: &Path, f: &ForecastResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["variable", "rmse_model", "rmse_naive", "reduction"])?;
    for r in Response::ALL {
        let i = r.index();
        w.write_record([
            r.name().to_string(),
            fmt_num(f.rmse_model[i]),
            fmt_num(f.rmse_naive[i]),
            fmt_num(f.reduction[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_correlations_csv(path: &Path, rows: &[CorrelationPosterior]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "label", "n_countries", "mean", "cri_low", "cri_high", "cri80_low", "cri80_high", "significant_95", "significant_80",
    ])?;
    for c in rows {
        w.write_record([
            c.label.clone(),
            c.n_countries.to_string(),
            fmt_num(c.mean),
            fmt_num(c.cri_low),
            fmt_num(c.cri_high),
            fmt_num(c.cri80_low),
            fmt_num(c.cri80_high),
            c.significant_95().to_string(),
            c.significant_80().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Loadings of the first `max_components` components, plus eigenvalue and
/// explained-variance rows.
pub fn write_pca_loadings_csv(path: &Path, pca: &PcaResult, max_components: usize) -> Result<()> {
    let k = max_components.min(pca.eigenvalues.len());
    let mut w = writer(path)?;
    let mut header = vec!["feature".to_string()];
    header.extend((1..=k).map(|i| format!("PC{i}")));
    w.write_record(&header)?;
    for (f, name) in pca.features.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend((0..k).map(|c| fmt_num(pca.loadings[(f, c)])));
        w.write_record(&rec)?;
    }
    let mut ev = vec!["eigenvalue".to_string()];
    ev.extend(pca.eigenvalues[..k].iter().map(|v| fmt_num(*v)));
    w.write_record(&ev)?;
    let mut ex = vec!["explained".to_string()];
    ex.extend(pca.explained[..k].iter().map(|v| fmt_num(*v)));
    w.write_record(&ex)?;
    w.flush()?;
    Ok(())
}

/// Cluster of every country together with its first two PCA scores.
pub fn write_clusters_csv(path: &Path, pca: &PcaResult, clusters: &KMeansResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["country", "cluster", "PC1", "PC2"])?;
    for (i, c) in pca.countries.iter().enumerate() {
        w.write_record([
            c.clone(),
            clusters.assignments[i].to_string(),
            fmt_num(pca.scores[(i, 0)]),
            fmt_num(pca.scores[(i, 1)]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `<dir>/<country>/summary.csv` for every refit.
pub fn write_loco(dir: &Path, results: &[LocoResult]) -> Result<()> {
    for r in results {
        let d = dir.join(&r.excluded);
        std::fs::create_dir_all(&d)?;
        write_summary_csv(&d.join("summary.csv"), &r.summaries)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_num(f64::NAN), "NaN");
    }

    #[test]
    fn draws_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f64> = (0..2 * 3 * 2).map(|i| (i as f64).sqrt() / 7.0).collect();
        let d = PosteriorDraws::from_values(vec!["a".into(), "phi[log_r,log_ed]".into()], 2, 3, values).unwrap();
        let p = dir.path().join("draws.csv");
        write_draws_csv(&p, &d).unwrap();
        let back = read_draws_csv(&p).unwrap();
        assert_eq!(back.values, d.values);
        assert_eq!(back.names, d.names);
        assert_eq!((back.chains, back.iterations), (2, 3));
    }

    #[test]
    fn ragged_chains_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("draws.csv");
        std::fs::write(&p, "chain,iteration,a\n0,0,1\n0,1,2\n1,0,3\n").unwrap();
        assert!(read_draws_csv(&p).is_err());
        std::fs::write(&p, "chain,iteration,a\n0,0,1\n0,1,x\n").unwrap();
        let err = read_draws_csv(&p).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn summary_and_diff_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![ParamSummary {
            name: "x".into(),
            mean: 0.1,
            sd: 0.2,
            cri_low: -0.3,
            cri_high: 0.7,
            rhat: 1.001,
            rel_ess: f64::NAN,
        }];
        let p = dir.path().join("summary.csv");
        write_summary_csv(&p, &rows).unwrap();
        let back = read_summary_csv(&p).unwrap();
        assert_eq!(back[0].mean, 0.1);
        assert!(back[0].rel_ess.is_nan());
        let diffs = vec![("Full Model".to_string(), ElpdDiff::from_diff_se(0.0, 0.0))];
        let p = dir.path().join("elpd_diff.csv");
        write_elpd_diff_csv(&p, &diffs).unwrap();
        assert_eq!(read_elpd_diff_csv(&p).unwrap(), diffs);
    }
}
