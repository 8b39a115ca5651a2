//! Pareto-smoothed importance sampling for leave-one-out cross-validation.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pareto shape above which an observation's estimate is unreliable.
pub const PARETO_K_THRESHOLD: f64 = 0.7;
/// Share of the draws forming the smoothed upper tail.
pub const TAIL_FRACTION: f64 = 0.2;
const MIN_TAIL: usize = 5;

/// Log-likelihood of every observation under every draw.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikMatrix {
    pub n_draws: usize,
    pub n_obs: usize,
    /// Draw-major.
    pub values: Vec<f64>,
}

impl LoglikMatrix {
    pub fn new(n_draws: usize, n_obs: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_draws * n_obs {
            return Err(Error::Dimension(format!(
                "{} values for {n_draws} draws x {n_obs} observations",
                values.len()
            )));
        }
        Ok(LoglikMatrix { n_draws, n_obs, values })
    }

    pub fn get(&self, s: usize, i: usize) -> f64 {
        self.values[s * self.n_obs + i]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_draws).map(|s| self.get(s, i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub elpd: f64,
    pub elpd_se: f64,
    pub pointwise: Vec<f64>,
    pub pareto_k: Vec<f64>,
    /// Observations whose log ratios had no spread to fit a tail to; their
    /// `pareto_k` is reported as 0 and the estimate is unsmoothed.
    pub degenerate: Vec<bool>,
    /// In-sample log pointwise predictive density.
    pub lpd: f64,
    pub p_loo: f64,
    pub n_draws: usize,
}

impl LooResult {
    /// Observations with a Pareto shape above [`PARETO_K_THRESHOLD`].
    pub fn high_k(&self) -> Vec<usize> {
        (0..self.pareto_k.len())
            .filter(|&i| self.pareto_k[i] > PARETO_K_THRESHOLD)
            .collect()
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Generalised Pareto fit `(k, σ)` to exceedances `x` (ascending, positive)
/// by the profile-likelihood grid estimator of Zhang and Stephens with a
/// weakly informative shrinkage of `k` towards 0.5.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let x_star = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let x_max = x[n - 1];
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / x_star)
        .collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let k = x.iter().map(|v| (-t * v).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((-t / k).ln() - k - 1.0)
        })
        .collect();
    let norm = log_sum_exp(&profile);
    let theta_hat: f64 = theta
        .iter()
        .zip(&profile)
        .map(|(t, l)| t * (l - norm).exp())
        .sum();
    let k = x.iter().map(|v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    let k = (k * n as f64 + 0.5 * 10.0) / (n as f64 + 10.0);
    (if k.is_nan() { f64::INFINITY } else { k }, sigma)
}

/// Quantile function of the generalised Pareto distribution at location 0.
fn qgpd(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-300 {
        return -sigma * (-p).ln_1p();
    }
    sigma * (-k * (-p).ln_1p()).exp_m1() / k
}

/// Smoothed normalised log weights, Pareto shape and degeneracy flag for
/// one observation's log importance ratios.
pub fn psis_log_weights(log_ratios: &[f64]) -> (Vec<f64>, f64, bool) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();
    let tail_len = ((TAIL_FRACTION * s as f64).ceil() as usize).min(s.saturating_sub(1));
    let mut k = 0.0;
    let mut degenerate = true;
    if tail_len >= MIN_TAIL {
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
        let tail_ids = &order[s - tail_len..];
        let tail: Vec<f64> = tail_ids.iter().map(|&i| lw[i]).collect();
        if tail[tail_len - 1] - tail[0] > f64::EPSILON / 100.0 {
            degenerate = false;
            let cutoff = lw[order[s - tail_len - 1]];
            let exp_cutoff = cutoff.exp();
            let exceed: Vec<f64> = tail.iter().map(|v| v.exp() - exp_cutoff).collect();
            let (kh, sigma) = gpd_fit(&exceed);
            k = kh;
            if kh.is_finite() {
                for (r, &i) in tail_ids.iter().enumerate() {
                    let p = (r as f64 + 0.5) / tail_len as f64;
                    lw[i] = (qgpd(p, kh, sigma) + exp_cutoff).ln();
                }
            }
        }
    }
    // Truncate at the largest raw weight.
    for v in &mut lw {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
    let norm = log_sum_exp(&lw);
    lw.iter_mut().for_each(|v| *v -= norm);
    (lw, k, degenerate)
}

/// PSIS-LOO estimate of the expected log pointwise predictive density.
pub fn psis_loo(loglik: &LoglikMatrix) -> Result<LooResult> {
    let (s, n) = (loglik.n_draws, loglik.n_obs);
    if s < 2 || n == 0 {
        return Err(Error::InvalidInput(format!(
            "PSIS-LOO needs at least 2 draws and 1 observation, got {s} x {n}"
        )));
    }
    if loglik.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("log-likelihood matrix has non-finite entries".into()));
    }
    if s < 400 {
        warn!("PSIS-LOO with only {s} draws; at least 400 are recommended");
    }
    let per_obs: Vec<(f64, f64, bool, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ll = loglik.column(i);
            let ratios: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (lw, k, degenerate) = psis_log_weights(&ratios);
            let terms: Vec<f64> = lw.iter().zip(&ll).map(|(w, l)| w + l).collect();
            let lpd = log_sum_exp(&ll) - (s as f64).ln();
            (log_sum_exp(&terms), k, degenerate, lpd)
        })
        .collect();
    let pointwise: Vec<f64> = per_obs.iter().map(|r| r.0).collect();
    let pareto_k: Vec<f64> = per_obs.iter().map(|r| r.1).collect();
    let degenerate: Vec<bool> = per_obs.iter().map(|r| r.2).collect();
    let elpd: f64 = pointwise.iter().sum();
    let lpd: f64 = per_obs.iter().map(|r| r.3).sum();
    let n_high = pareto_k.iter().filter(|&&k| k > PARETO_K_THRESHOLD).count();
    if n_high > 0 {
        warn!("{n_high} observations have Pareto k > {PARETO_K_THRESHOLD}");
    }
    let n_degenerate = degenerate.iter().filter(|&&d| d).count();
    if n_degenerate > 0 {
        warn!("{n_degenerate} observations have constant log ratios; their weights are not smoothed");
    }
    Ok(LooResult {
        elpd,
        elpd_se: se_of_sum(&pointwise),
        pointwise,
        pareto_k,
        degenerate,
        lpd,
        p_loo: lpd - elpd,
        n_draws: s,
    })
}

/// Standard error of a sum of `n` pointwise terms: √(n · var).
pub(crate) fn se_of_sum(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (n * var).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_draws_give_the_in_sample_value() {
        let ll = [-1.0, -2.5, -0.3];
        let values: Vec<f64> = (0..100).flat_map(|_| ll).collect();
        let r = psis_loo(&LoglikMatrix::new(100, 3, values).unwrap()).unwrap();
        assert!((r.elpd - ll.iter().sum::<f64>()).abs() < 1e-12);
        assert!(r.degenerate.iter().all(|&d| d));
        assert!(r.pareto_k.iter().all(|&k| k == 0.0));
        assert!((r.pointwise.iter().sum::<f64>() - r.elpd).abs() < 1e-12);
    }

    #[test]
    fn gpd_fit_recovers_known_shape() {
        // Exact GPD quantiles at a fine grid; the estimate (before shrinkage
        // towards 0.5) should be near the true shape.
        let (k_true, sigma) = (0.3, 2.0);
        let n = 2000;
        let x: Vec<f64> = (0..n)
            .map(|i| qgpd((i as f64 + 0.5) / n as f64, k_true, sigma))
            .collect();
        let (k, s) = gpd_fit(&x);
        let k_raw = (k * (n as f64 + 10.0) - 5.0) / n as f64;
        assert!((k_raw - k_true).abs() < 0.05, "{k_raw}");
        assert!((s - sigma).abs() / sigma < 0.1, "{s}");
    }

    #[test]
    fn exponential_tail_has_shape_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x: Vec<f64> = (0..1000).map(|_| -rng.random::<f64>().ln()).collect();
        x.sort_by(f64::total_cmp);
        let (k, _) = gpd_fit(&x);
        assert!(k.abs() < 0.1, "{k}");
    }

    #[test]
    fn weights_are_normalised_and_truncated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r: Vec<f64> = (0..1000).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let (lw, k, degenerate) = psis_log_weights(&r);
        assert!(!degenerate && k.is_finite());
        let total: f64 = lw.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Truncation caps every smoothed raw weight at the largest raw weight.
        let norm = r.iter().map(|v| v - max_raw(&r)).map(f64::exp).sum::<f64>();
        let max_w = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(max_w.exp() <= 1.0);
        assert!(max_w.exp() >= 1.0 / norm / 2.0);
    }

    fn max_raw(r: &[f64]) -> f64 {
        r.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn elpd_is_below_in_sample_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = rand_distr::Normal::new(0.0, 0.5).unwrap();
        let values: Vec<f64> = (0..500 * 20).map(|_| -1.0 + normal.sample(&mut rng)).collect();
        let r = psis_loo(&LoglikMatrix::new(500, 20, values).unwrap()).unwrap();
        assert!(r.elpd <= r.lpd);
        assert!(r.p_loo >= 0.0);
    }

    #[test]
    fn bad_shapes_are_errors() {
        assert!(LoglikMatrix::new(3, 2, vec![0.0; 5]).is_err());
        assert!(psis_loo(&LoglikMatrix::new(1, 2, vec![0.0; 2]).unwrap()).is_err());
    }
}
