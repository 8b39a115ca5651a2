//! Impulse responses under recursive (Cholesky) identification in the order
//! log R, log ED, ΔGDP, ΔTransit, and the order-free generalised variant.
//!
//! Exogenous covariates are held at zero while propagating a shock; a unit
//! shock is one orthogonalised standard deviation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::quantile;
use crate::{Error, PosteriorDraws, Response, Result, N_RESPONSES};

pub const DEFAULT_HORIZON: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrfKind {
    Oirf,
    Girf,
}

impl IrfKind {
    pub fn label(self) -> &'static str {
        match self {
            IrfKind::Oirf => "oirf",
            IrfKind::Girf => "girf",
        }
    }
}

impl std::str::FromStr for IrfKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oirf" => Ok(IrfKind::Oirf),
            "girf" => Ok(IrfKind::Girf),
            _ => Err(Error::InvalidInput(format!("unknown IRF kind {s:?}"))),
        }
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix; entries
/// above the diagonal are exactly zero.
pub fn cholesky_lower(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::Dimension("covariance matrix is not square".into()));
    }
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    if (sigma - sigma.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidInput("covariance matrix is not symmetric".into()));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("covariance matrix is not positive definite".into()))?;
    Ok(chol.l())
}

/// Moving-average coefficients Ψ_0..Ψ_H of a VAR with lag matrices `phis`.
fn ma_coefficients(phis: &[DMatrix<f64>], horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    let n = phis.first().map_or(0, DMatrix::nrows);
    if n == 0 || phis.iter().any(|p| p.nrows() != n || p.ncols() != n) {
        return Err(Error::Dimension("lag matrices must be non-empty and square".into()));
    }
    let mut psi = vec![DMatrix::identity(n, n)];
    for h in 1..=horizon {
        let mut next = DMatrix::zeros(n, n);
        for (k, phi) in phis.iter().enumerate().take(h) {
            next += phi * &psi[h - k - 1];
        }
        psi.push(next);
    }
    Ok(psi)
}

fn check_sigma(sigma: &DMatrix<f64>, n: usize) -> Result<()> {
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::Dimension(format!(
            "covariance is {}x{}, lag matrices are {n}x{n}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    Ok(())
}

/// Orthogonalised responses Ψ_h L for h = 0..=H of a VAR(p) with lag
/// matrices `phis`; entry (i, j) is the response of variable i to shock j.
pub fn oirf_var(phis: &[DMatrix<f64>], sigma: &DMatrix<f64>, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    let psi = ma_coefficients(phis, horizon)?;
    check_sigma(sigma, psi[0].nrows())?;
    let l = cholesky_lower(sigma)?;
    Ok(psi.iter().map(|p| p * &l).collect())
}

/// Generalised responses Ψ_h Σ e_j / √σ_jj for h = 0..=H.
pub fn girf_var(phis: &[DMatrix<f64>], sigma: &DMatrix<f64>, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    let psi = ma_coefficients(phis, horizon)?;
    let n = psi[0].nrows();
    check_sigma(sigma, n)?;
    let mut scaled = sigma.clone();
    for j in 0..n {
        let d = sigma[(j, j)];
        if !(d > 0.0) {
            return Err(Error::InvalidInput(format!(
                "covariance diagonal entry {j} is not positive"
            )));
        }
        scaled.column_mut(j).scale_mut(1.0 / d.sqrt());
    }
    Ok(psi.iter().map(|p| p * &scaled).collect())
}

/// Orthogonalised responses of a VAR(1): Φ^h L.
pub fn oirf(phi: &DMatrix<f64>, sigma: &DMatrix<f64>, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    oirf_var(std::slice::from_ref(phi), sigma, horizon)
}

/// Generalised responses of a VAR(1): Φ^h Σ e_j / √σ_jj.
pub fn girf(phi: &DMatrix<f64>, sigma: &DMatrix<f64>, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    girf_var(std::slice::from_ref(phi), sigma, horizon)
}

/// Posterior impulse responses: one response tensor per draw, summarised
/// cell by cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrfResult {
    pub kind: IrfKind,
    pub horizon: usize,
    pub n_draws: usize,
    /// Draw-major, then horizon, then response variable, then shock.
    pub draws: Vec<f64>,
    pub mean: Vec<f64>,
    pub cri_low: Vec<f64>,
    pub cri_high: Vec<f64>,
}

impl IrfResult {
    fn cell(h: usize, i: usize, j: usize) -> usize {
        (h * N_RESPONSES + i) * N_RESPONSES + j
    }

    fn cells(&self) -> usize {
        (self.horizon + 1) * N_RESPONSES * N_RESPONSES
    }

    /// Response of variable `i` to shock `j` at horizon `h` in draw `s`.
    pub fn value(&self, s: usize, h: usize, i: usize, j: usize) -> f64 {
        self.draws[s * self.cells() + Self::cell(h, i, j)]
    }

    /// `(mean, 2.5%, 97.5%)` of the response of `i` to shock `j` at horizon `h`.
    pub fn band(&self, h: usize, i: usize, j: usize) -> (f64, f64, f64) {
        let c = Self::cell(h, i, j);
        (self.mean[c], self.cri_low[c], self.cri_high[c])
    }
}

/// Where the VAR matrices live inside a draw.
struct VarIndex {
    lags: usize,
    /// `(lag, eq, pred, column)`
    phi: Vec<(usize, usize, usize, usize)>,
    sigma: [usize; N_RESPONSES],
    /// `(i, j, column)` with i > j.
    omega: Vec<(usize, usize, usize)>,
}

fn parse_indexed(name: &str) -> Option<(&str, Vec<&str>)> {
    let open = name.find('[')?;
    let inner = name[open + 1..].strip_suffix(']')?;
    Some((&name[..open], inner.split(',').collect()))
}

fn response_index(name: &str) -> Option<usize> {
    Response::ALL.iter().position(|r| r.name() == name)
}

impl VarIndex {
    fn new(names: &[String]) -> Result<Self> {
        let mut phi = Vec::new();
        let mut sigma = [usize::MAX; N_RESPONSES];
        let mut omega = Vec::new();
        for (col, name) in names.iter().enumerate() {
            let Some((prefix, args)) = parse_indexed(name) else {
                continue;
            };
            let idx: Vec<Option<usize>> = args.iter().map(|a| response_index(a)).collect();
            match (prefix, idx.as_slice()) {
                ("sigma", [Some(i)]) => sigma[*i] = col,
                ("omega", [Some(i), Some(j)]) if i > j => omega.push((*i, *j, col)),
                (p, [Some(i), Some(j)]) if p.starts_with("phi") => {
                    let lag = if p == "phi" {
                        1
                    } else {
                        p[3..].parse::<usize>().map_err(|_| {
                            Error::InvalidInput(format!("unrecognised coefficient name {name}"))
                        })?
                    };
                    if lag == 0 {
                        return Err(Error::InvalidInput(format!("lag 0 in {name}")));
                    }
                    phi.push((lag - 1, *i, *j, col));
                }
                _ => {}
            }
        }
        if phi.is_empty() {
            return Err(Error::InvalidInput("draws contain no VAR coefficients".into()));
        }
        if sigma.contains(&usize::MAX) {
            return Err(Error::InvalidInput("draws lack residual scales".into()));
        }
        let lags = phi.iter().map(|p| p.0).max().unwrap_or(0) + 1;
        Ok(VarIndex {
            lags,
            phi,
            sigma,
            omega,
        })
    }

    fn matrices(&self, draw: &[f64]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let n = N_RESPONSES;
        let mut phis = vec![DMatrix::zeros(n, n); self.lags];
        for &(lag, i, j, col) in &self.phi {
            phis[lag][(i, j)] = draw[col];
        }
        let mut omega = DMatrix::identity(n, n);
        for &(i, j, col) in &self.omega {
            omega[(i, j)] = draw[col];
            omega[(j, i)] = draw[col];
        }
        let s = DMatrix::from_fn(n, n, |i, j| if i == j { draw[self.sigma[i]] } else { 0.0 });
        (phis, &s * omega * &s)
    }
}

/// Impulse responses for every posterior draw, with pointwise mean and 95% bands.
pub fn irf_posterior(draws: &PosteriorDraws, kind: IrfKind, horizon: usize) -> Result<IrfResult> {
    if draws.n_draws() == 0 {
        return Err(Error::InvalidInput("no draws".into()));
    }
    let index = VarIndex::new(&draws.names)?;
    let per_draw: Vec<Vec<f64>> = (0..draws.n_draws())
        .into_par_iter()
        .map(|s| {
            let (phis, sigma) = index.matrices(draws.draw(s));
            let resp = match kind {
                IrfKind::Oirf => oirf_var(&phis, &sigma, horizon),
                IrfKind::Girf => girf_var(&phis, &sigma, horizon),
            }
            .map_err(|e| e.context(format!("draw {s}")))?;
            let mut flat = Vec::with_capacity((horizon + 1) * N_RESPONSES * N_RESPONSES);
            for m in &resp {
                for i in 0..N_RESPONSES {
                    for j in 0..N_RESPONSES {
                        flat.push(m[(i, j)]);
                    }
                }
            }
            Ok(flat)
        })
        .collect::<Result<_>>()?;
    let cells = (horizon + 1) * N_RESPONSES * N_RESPONSES;
    let n = per_draw.len();
    let mut mean = vec![0.0; cells];
    let mut lo = vec![0.0; cells];
    let mut hi = vec![0.0; cells];
    let mut column = vec![0.0; n];
    for c in 0..cells {
        for (v, d) in column.iter_mut().zip(&per_draw) {
            *v = d[c];
        }
        mean[c] = column.iter().sum::<f64>() / n as f64;
        column.sort_by(f64::total_cmp);
        lo[c] = quantile(&column, 0.025);
        hi[c] = quantile(&column, 0.975);
    }
    Ok(IrfResult {
        kind,
        horizon,
        n_draws: n,
        draws: per_draw.concat(),
        mean,
        cri_low: lo,
        cri_high: hi,
    })
}
