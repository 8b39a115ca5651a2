//! Multi-chain No-U-Turn Hamiltonian Monte Carlo with warmup adaptation.

mod adapt;
mod nuts;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};
pub use adapt::{MetricAdapter, StepSizeAdapter};
use nuts::{Nuts, Point};

/// Largest tolerated fraction of divergent post-warmup transitions.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.25;
/// Half-width of the uniform initialisation box in unconstrained space.
pub const INIT_RADIUS: f64 = 0.1;
const INIT_ATTEMPTS: usize = 100;
const GRADIENT_CHECK_STEP: f64 = 1e-5;
const GRADIENT_CHECK_TOLERANCE: f64 = 1e-3;

/// A differentiable log density on an unconstrained space.
///
/// Implementations are called concurrently from several chains.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `x`; the gradient is written into `grad`.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// Maps an unconstrained point to the values recorded as draws.
    fn constrain(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub iterations: usize,
    /// Target mean acceptance statistic during step-size adaptation.
    pub adapt_delta: f64,
    /// Starting point for the step-size search.
    pub init_step_size: f64,
    pub max_treedepth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 2000,
            iterations: 2000,
            adapt_delta: 0.9,
            init_step_size: 0.01,
            max_treedepth: 10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("sampler config: {m}")));
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.warmup == 0 || self.iterations == 0 {
            return bad("warmup and iterations must be at least 1");
        }
        if !(self.adapt_delta > 0.0 && self.adapt_delta < 1.0) {
            return bad("adapt_delta must lie in (0, 1)");
        }
        if !(self.init_step_size > 0.0 && self.init_step_size.is_finite()) {
            return bad("init_step_size must be positive");
        }
        if self.max_treedepth == 0 || self.max_treedepth > 30 {
            return bad("max_treedepth must lie in 1..=30");
        }
        Ok(())
    }
}

/// Post-warmup output of a single chain.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub chain: usize,
    pub dim: usize,
    /// Iteration-major constrained draws.
    pub draws: Vec<f64>,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub treedepths: Vec<usize>,
    pub n_leapfrog: usize,
    pub mean_accept_stat: f64,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

/// Draws of all chains on the constrained scale plus sampler telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: usize,
    pub iterations: usize,
    /// Chain-major, then iteration, then parameter.
    pub values: Vec<f64>,
    pub divergences: Vec<usize>,
    /// Count of transitions per tree depth, pooled over chains.
    pub treedepth_histogram: Vec<usize>,
    pub step_sizes: Vec<f64>,
    pub mean_accept_stat: Vec<f64>,
}

/// Telemetry sidecar written next to the draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerTelemetry {
    pub chains: usize,
    pub iterations: usize,
    pub divergences: Vec<usize>,
    pub treedepth_histogram: Vec<usize>,
    pub step_sizes: Vec<f64>,
    pub mean_accept_stat: Vec<f64>,
}

impl PosteriorDraws {
    /// Assembles draws from explicit values, e.g. when reading them back.
    pub fn from_values(
        names: Vec<String>,
        chains: usize,
        iterations: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if chains == 0 || iterations == 0 || names.is_empty() {
            return Err(Error::InvalidInput("posterior draws are empty".into()));
        }
        if values.len() != chains * iterations * names.len() {
            return Err(Error::Dimension(format!(
                "{} values for {chains} chains x {iterations} iterations x {} parameters",
                values.len(),
                names.len()
            )));
        }
        Ok(PosteriorDraws {
            names,
            chains,
            iterations,
            values,
            divergences: vec![0; chains],
            treedepth_histogram: Vec::new(),
            step_sizes: vec![f64::NAN; chains],
            mean_accept_stat: vec![f64::NAN; chains],
        })
    }

    fn from_chains(names: Vec<String>, chains: Vec<ChainDraws>) -> Result<Self> {
        let iterations = chains[0].draws.len() / chains[0].dim;
        let mut values = Vec::with_capacity(chains.len() * chains[0].draws.len());
        let mut hist = Vec::new();
        for c in &chains {
            values.extend_from_slice(&c.draws);
            for &d in &c.treedepths {
                if hist.len() <= d {
                    hist.resize(d + 1, 0);
                }
                hist[d] += 1;
            }
        }
        let mut out = Self::from_values(names, chains.len(), iterations, values)?;
        out.divergences = chains.iter().map(|c| c.divergences).collect();
        out.treedepth_histogram = hist;
        out.step_sizes = chains.iter().map(|c| c.step_size).collect();
        out.mean_accept_stat = chains.iter().map(|c| c.mean_accept_stat).collect();
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains * self.iterations
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draw `s` counted across chains in chain order.
    pub fn draw(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.values[s * d..(s + 1) * d]
    }

    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim())
    }

    pub fn get(&self, chain: usize, iteration: usize, param: usize) -> f64 {
        self.values[(chain * self.iterations + iteration) * self.dim() + param]
    }

    /// One vector of draws per chain for parameter `param`.
    pub fn chain_columns(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.iterations).map(|i| self.get(c, i, param)).collect())
            .collect()
    }

    /// All draws of parameter `param`, chains concatenated.
    pub fn column(&self, param: usize) -> Vec<f64> {
        self.draws().map(|d| d[param]).collect()
    }

    pub fn total_divergences(&self) -> usize {
        self.divergences.iter().sum()
    }

    pub fn telemetry(&self) -> SamplerTelemetry {
        SamplerTelemetry {
            chains: self.chains,
            iterations: self.iterations,
            divergences: self.divergences.clone(),
            treedepth_histogram: self.treedepth_histogram.clone(),
            step_sizes: self.step_sizes.clone(),
            mean_accept_stat: self.mean_accept_stat.clone(),
        }
    }
}

/// Result of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    /// Largest `|g - fd| / max(|fd|, 1)` over coordinates.
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares the gradient of `target` at `x` with central differences of step `h`.
pub fn gradient_check<T: LogDensity + ?Sized>(target: &T, x: &[f64], h: f64) -> Result<GradientCheck> {
    let mut grad = vec![0.0; x.len()];
    target.log_density_and_grad(x, &mut grad)?;
    let mut scratch = vec![0.0; x.len()];
    let mut y = x.to_vec();
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = target.log_density_and_grad(&y, &mut scratch)?;
        y[i] = x[i] - h;
        let down = target.log_density_and_grad(&y, &mut scratch)?;
        y[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let err = (grad[i] - fd).abs() / fd.abs().max(1.0);
        if !(err <= out.max_rel_error) {
            out = GradientCheck {
                max_rel_error: err,
                worst_index: i,
            };
        }
    }
    Ok(out)
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs warmup and sampling for one chain.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainDraws> {
    config.validate()?;
    let fail = |msg: String| Error::Sampling { chain, msg };
    let dim = target.dim();
    if dim == 0 {
        return Err(fail("target has no parameters".into()));
    }
    let mut rng = chain_rng(config.seed, chain);
    let mut sampler = Nuts {
        target,
        inv_metric: vec![1.0; dim],
        step_size: config.init_step_size,
        max_depth: config.max_treedepth,
    };

    let mut current = None;
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-INIT_RADIUS..INIT_RADIUS))
            .collect();
        let pt = sampler.evaluate(q);
        if pt.logp.is_finite() {
            current = Some(pt);
            break;
        }
    }
    let mut current: Point = current.ok_or_else(|| {
        fail(format!(
            "no finite log density found in {INIT_ATTEMPTS} initialisation attempts"
        ))
    })?;

    let check = gradient_check(target, &current.q, GRADIENT_CHECK_STEP)
        .map_err(|e| fail(format!("gradient self-test failed: {e}")))?;
    if !(check.max_rel_error < GRADIENT_CHECK_TOLERANCE) {
        let names = target.param_names();
        return Err(fail(format!(
            "gradient self-test failed: relative error {:.3e} at {}",
            check.max_rel_error,
            names.get(check.worst_index).map_or("?", String::as_str)
        )));
    }

    sampler.init_step_size(&current, &mut rng);
    let mut step_adapt = StepSizeAdapter::new(config.adapt_delta, sampler.step_size);
    let mut metric_adapt = MetricAdapter::new(dim, config.warmup);
    let mut warmup_divergences = 0;
    for _ in 0..config.warmup {
        let (next, info) = sampler.transition(&current, &mut rng);
        current = next;
        warmup_divergences += usize::from(info.divergent);
        sampler.step_size = step_adapt.learn(info.accept_stat);
        if let Some(var) = metric_adapt.learn(&current.q) {
            sampler.inv_metric = var;
            sampler.init_step_size(&current, &mut rng);
            step_adapt.restart(sampler.step_size);
        }
    }
    sampler.step_size = step_adapt.final_step_size();
    debug!(
        "chain {chain}: warmup done, step size {:.4e}, {warmup_divergences} warmup divergences",
        sampler.step_size
    );

    let mut out = ChainDraws {
        chain,
        dim,
        draws: Vec::with_capacity(config.iterations * dim),
        divergences: 0,
        warmup_divergences,
        treedepths: Vec::with_capacity(config.iterations),
        n_leapfrog: 0,
        mean_accept_stat: 0.0,
        step_size: sampler.step_size,
        inv_metric: sampler.inv_metric.clone(),
    };
    let mut accept_sum = 0.0;
    for _ in 0..config.iterations {
        let (next, info) = sampler.transition(&current, &mut rng);
        current = next;
        out.divergences += usize::from(info.divergent);
        out.treedepths.push(info.depth);
        out.n_leapfrog += info.n_leapfrog;
        accept_sum += info.accept_stat;
        let constrained = target.constrain(&current.q)?;
        if constrained.len() != dim {
            return Err(fail("constrained draw has the wrong length".into()));
        }
        out.draws.extend_from_slice(&constrained);
    }
    out.mean_accept_stat = accept_sum / config.iterations as f64;

    let frac = out.divergences as f64 / config.iterations as f64;
    if frac > MAX_DIVERGENT_FRACTION {
        return Err(fail(format!(
            "{} of {} post-warmup transitions diverged; increase adapt_delta above {}",
            out.divergences, config.iterations, config.adapt_delta
        )));
    }
    if out.divergences > 0 {
        warn!(
            "chain {chain}: {} divergent post-warmup transitions",
            out.divergences
        );
    }
    let hits = out
        .treedepths
        .iter()
        .filter(|&&d| d >= config.max_treedepth)
        .count();
    if hits > 0 {
        warn!("chain {chain}: {hits} transitions hit the maximum tree depth");
    }
    Ok(out)
}

/// Runs all chains in parallel; chain `k` uses RNG stream `k` of `config.seed`.
pub fn run_sampling<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    PosteriorDraws::from_chains(target.param_names(), chains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics;

    pub(crate) struct Gaussian {
        pub dim: usize,
        pub var: f64,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.dim
        }
        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
            let mut lp = 0.0;
            for (g, v) in grad.iter_mut().zip(x) {
                *g = -v / self.var;
                lp -= 0.5 * v * v / self.var;
            }
            Ok(lp)
        }
    }

    fn config(chains: usize, n: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            chains,
            warmup: n,
            iterations: n,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn standard_gaussian_moments() {
        let draws = run_sampling(&Gaussian { dim: 2, var: 1.0 }, &config(4, 1000, 11)).unwrap();
        let n = draws.n_draws() as f64;
        for p in 0..2 {
            let col = draws.column(p);
            let mean = col.iter().sum::<f64>() / n;
            let ess = diagnostics::relative_ess(&draws.chain_columns(p)).unwrap() * n;
            let mcse = 1.0 / ess.sqrt();
            assert!(mean.abs() < 3.0 * mcse, "mean {mean} mcse {mcse}");
        }
        let (c0, c1) = (draws.column(0), draws.column(1));
        let m0 = c0.iter().sum::<f64>() / n;
        let m1 = c1.iter().sum::<f64>() / n;
        let cov = |a: &[f64], ma: f64, b: &[f64], mb: f64| {
            a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
        };
        assert!((cov(&c0, m0, &c0, m0) - 1.0).abs() < 0.1);
        assert!((cov(&c1, m1, &c1, m1) - 1.0).abs() < 0.1);
        assert!(cov(&c0, m0, &c1, m1).abs() < 0.1);
    }

    #[test]
    fn step_size_scales_with_target_width() {
        // Metric adaptation whitens the target, so compare runs whose warmup
        // is too short to adapt the metric.
        let step = |var| {
            let cfg = SamplerConfig {
                warmup: 15,
                ..config(1, 10, 5)
            };
            run_sampling(&Gaussian { dim: 2, var }, &cfg).unwrap().step_sizes[0]
        };
        assert!(step(100.0) > step(1.0));
    }

    #[test]
    fn fixed_seed_reproduces_draws() {
        let t = Gaussian { dim: 3, var: 1.0 };
        let a = run_sampling(&t, &config(2, 100, 42)).unwrap();
        let b = run_sampling(&t, &config(2, 100, 42)).unwrap();
        assert_eq!(a, b);
        let c = run_sampling(&t, &config(2, 100, 43)).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn single_chain() {
        let d = run_sampling(&Gaussian { dim: 1, var: 1.0 }, &config(1, 50, 0)).unwrap();
        assert_eq!(d.chains, 1);
        assert_eq!(d.n_draws(), 50);
        assert_eq!(d.values.len(), 50);
    }

    #[test]
    fn chains_use_distinct_streams() {
        let d = run_sampling(&Gaussian { dim: 1, var: 1.0 }, &config(2, 50, 0)).unwrap();
        let cols = d.chain_columns(0);
        assert_ne!(cols[0], cols[1]);
    }

    #[test]
    fn one_dimensional_ks_statistic() {
        // The critical value assumes independent draws, so thin four-fold
        // (relative ESS on this target is about one third) down to 8000.
        let cfg = SamplerConfig {
            warmup: 1000,
            iterations: 8000,
            ..config(4, 0, 7)
        };
        let d = run_sampling(&Gaussian { dim: 1, var: 1.0 }, &cfg).unwrap();
        let mut x: Vec<f64> = d.column(0).into_iter().step_by(4).collect();
        assert_eq!(x.len(), 8000);
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let normal = statrs::distribution::Normal::standard();
        use statrs::distribution::ContinuousCDF;
        let ks = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = normal.cdf(*v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.628 / n.sqrt(), "KS statistic {ks}");
        assert_eq!(d.total_divergences(), 0);
    }

    struct Broken;

    impl LogDensity for Broken {
        fn dim(&self) -> usize {
            2
        }
        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
            grad[0] = x[0];
            grad[1] = -x[1];
            Ok(-0.5 * (x[0] * x[0] + x[1] * x[1]) + x[0])
        }
    }

    #[test]
    fn wrong_gradient_is_rejected() {
        let err = run_chain(&Broken, &config(1, 10, 0), 3).unwrap_err();
        match err {
            Error::Sampling { chain, msg } => {
                assert_eq!(chain, 3);
                assert!(msg.contains("x[0]"), "{msg}");
            }
            other => panic!("{other}"),
        }
    }

    /// Flat density on a short interval; trajectories run into the walls.
    struct Walled;

    impl LogDensity for Walled {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
            grad[0] = 0.0;
            if x[0].abs() > 0.3 {
                return Err(Error::NonFinite { term: "support" });
            }
            Ok(0.0)
        }
    }

    #[test]
    fn excessive_divergences_are_an_error() {
        let err = run_sampling(&Walled, &config(2, 200, 1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("adapt_delta"), "{msg}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let t = Gaussian { dim: 1, var: 1.0 };
        for cfg in [
            SamplerConfig { chains: 0, ..Default::default() },
            SamplerConfig { warmup: 0, ..Default::default() },
            SamplerConfig { adapt_delta: 1.0, ..Default::default() },
        ] {
            assert!(run_sampling(&t, &cfg).is_err());
        }
    }

    #[test]
    fn gradient_check_on_exact_gradient() {
        let t = Gaussian { dim: 3, var: 2.0 };
        let c = gradient_check(&t, &[0.3, -1.0, 2.0], 1e-5).unwrap();
        assert!(c.max_rel_error < 1e-8);
    }
}
