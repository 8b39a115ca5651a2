//! Convergence and mixing diagnostics: rank-normalised split R-hat, bulk
//! effective sample size and per-parameter posterior summaries.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, PosteriorDraws, Result};

/// Posterior summary of one parameter; the interval is the central 95%.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub cri_low: f64,
    pub cri_high: f64,
    pub rhat: f64,
    pub rel_ess: f64,
}

/// Linear interpolation between order statistics; `sorted` must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and the 2.5% / 97.5% quantiles of a sample.
pub fn mean_and_interval(values: &[f64]) -> (f64, f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, quantile(&sorted, 0.025), quantile(&sorted, 0.975))
}

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    let n = chains.first().map_or(0, Vec::len);
    if chains.is_empty() || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput(
            "chains must be non-empty and of equal length".into(),
        ));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("draws contain non-finite values".into()));
    }
    Ok(n)
}

/// Splits every chain into its first and second half, dropping the middle
/// draw of odd-length chains.
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let half = chains[0].len() / 2;
    chains
        .iter()
        .flat_map(|c| [&c[..half], &c[c.len() - half..]])
        .collect()
}

fn is_constant(chains: &[&[f64]]) -> bool {
    let first = chains[0][0];
    chains.iter().all(|c| c.iter().all(|&v| v == first))
}

/// Normal scores of the pooled ranks, ties sharing their average rank.
fn rank_normalize(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &all[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Potential scale reduction of already split chains.
fn basic_rhat<C: AsRef<[f64]>>(chains: &[C]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].as_ref().len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c.as_ref())).collect();
    let w = chains.iter().map(|c| sample_var(c.as_ref())).sum::<f64>() / m;
    let b = n * sample_var(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Rank-normalised split R-hat: the larger of the bulk and folded-tail values.
///
/// Draws that are identical across all chains give exactly 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains)?;
    if n / 2 < 4 {
        return Err(Error::InvalidInput(format!(
            "split R-hat needs at least 4 draws per half chain, got {n} per chain"
        )));
    }
    let halves = split(chains);
    if is_constant(&halves) {
        return Ok(1.0);
    }
    let bulk = basic_rhat(&rank_normalize(&halves));
    let mut pooled: Vec<f64> = halves.iter().flat_map(|c| c.iter().copied()).collect();
    pooled.sort_by(f64::total_cmp);
    // A single order statistic rather than an interpolated median keeps
    // the folded ranks exactly invariant under affine maps.
    let med = pooled[(pooled.len() - 1) / 2];
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let folded_refs: Vec<&[f64]> = folded.iter().map(Vec::as_slice).collect();
    let tail = basic_rhat(&rank_normalize(&folded_refs));
    Ok(bulk.max(tail))
}

/// Biased autocovariance of `x` at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size with Geyer's initial monotone sequence estimator.
fn ess<C: AsRef<[f64]>>(chains: &[C]) -> f64 {
    let m = chains.len();
    let n = chains[0].as_ref().len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c.as_ref())).collect();
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c.as_ref(), mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let acov0 = acov(0);
    let mean_var = acov0 * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return 0.0;
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n + 2];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 {
        rho_hat[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t + 1])
        .max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size of the rank-normalised split chains divided
/// by the total number of draws. Constant draws give 0.
pub fn relative_ess(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains)?;
    let total = n * chains.len();
    if total < 8 {
        return Err(Error::InvalidInput(format!(
            "effective sample size needs at least 8 draws, got {total}"
        )));
    }
    let halves: Vec<&[f64]> = if n >= 8 {
        split(chains)
    } else {
        chains.iter().map(Vec::as_slice).collect()
    };
    if is_constant(&halves) {
        return Ok(0.0);
    }
    let z = rank_normalize(&halves);
    let used = z.len() * z[0].len();
    Ok(ess(&z) / used as f64)
}

/// One summary per parameter, in parameter order.
///
/// R-hat and relative ESS are `NaN` when there are too few draws for them.
pub fn summarize(draws: &PosteriorDraws) -> Result<Vec<ParamSummary>> {
    if draws.n_draws() == 0 || draws.dim() == 0 {
        return Err(Error::InvalidInput("no draws to summarise".into()));
    }
    let out: Vec<ParamSummary> = (0..draws.dim())
        .into_par_iter()
        .map(|p| {
            let col = draws.column(p);
            let n = col.len() as f64;
            let (mean, lo, hi) = mean_and_interval(&col);
            let sd = if col.len() > 1 {
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let chains = draws.chain_columns(p);
            ParamSummary {
                name: draws.names[p].clone(),
                mean,
                sd,
                cri_low: lo,
                cri_high: hi,
                rhat: split_rhat(&chains).unwrap_or(f64::NAN),
                rel_ess: relative_ess(&chains).unwrap_or(f64::NAN),
            }
        })
        .collect();
    for s in &out {
        if s.mean < s.cri_low || s.mean > s.cri_high {
            warn!("{}: posterior mean lies outside its 95% interval", s.name);
        }
    }
    Ok(out)
}
