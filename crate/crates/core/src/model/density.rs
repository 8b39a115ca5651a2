use std::f64::consts::{LN_2, PI};

use super::{corr, Block, ModelSpec, ParameterLayout, ParameterVector};
use crate::sampler::LogDensity;
use crate::{Error, PanelDataset, Result, N_RESPONSES};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Regressor rows of every likelihood observation.
///
/// Observations run country by country in panel order, weeks ascending
/// within a country; the likelihood is summed in exactly this order.
#[derive(Debug, Clone)]
pub struct Design {
    pub n_predictors: usize,
    y: Vec<[f64; N_RESPONSES]>,
    x: Vec<f64>,
    country: Vec<usize>,
    /// `(country index, week index)` of each observation.
    pub obs: Vec<(usize, usize)>,
    stats: SuffStats,
}

/// Sufficient statistics of the Gaussian likelihood: pooled cross products
/// and per-country sums.
#[derive(Debug, Clone, Default)]
struct SuffStats {
    yy: [[f64; N_RESPONSES]; N_RESPONSES],
    /// N_RESPONSES × n_predictors, row-major.
    yx: Vec<f64>,
    /// n_predictors × n_predictors.
    xx: Vec<f64>,
    n: Vec<f64>,
    sy: Vec<[f64; N_RESPONSES]>,
    /// n_countries × n_predictors.
    sx: Vec<f64>,
}

impl SuffStats {
    fn new(d: &Design, n_countries: usize) -> Self {
        let np = d.n_predictors;
        let mut st = SuffStats {
            yx: vec![0.0; N_RESPONSES * np],
            xx: vec![0.0; np * np],
            n: vec![0.0; n_countries],
            sy: vec![[0.0; N_RESPONSES]; n_countries],
            sx: vec![0.0; n_countries * np],
            ..Default::default()
        };
        for o in 0..d.n_obs() {
            let (x, y, c) = (d.row(o), &d.y[o], d.country[o]);
            for i in 0..N_RESPONSES {
                for j in 0..N_RESPONSES {
                    st.yy[i][j] += y[i] * y[j];
                }
                for (k, xk) in x.iter().enumerate() {
                    st.yx[i * np + k] += y[i] * xk;
                }
                st.sy[c][i] += y[i];
            }
            for (a, xa) in x.iter().enumerate() {
                for (b, xb) in x.iter().enumerate() {
                    st.xx[a * np + b] += xa * xb;
                }
                st.sx[c * np + a] += xa;
            }
            st.n[c] += 1.0;
        }
        st
    }
}

impl Design {
    pub fn new(panel: &PanelDataset, spec: &ModelSpec, layout: &ParameterLayout) -> Result<Self> {
        spec.check_panel(panel)?;
        let np = layout.n_predictors;
        let mut d = Design {
            n_predictors: np,
            y: Vec::new(),
            x: Vec::new(),
            country: Vec::new(),
            obs: Vec::new(),
            stats: SuffStats::default(),
        };
        for (c, cp) in panel.countries.iter().enumerate() {
            for t in spec.lags..cp.len() {
                let start = d.x.len();
                for lag in 1..=spec.lags {
                    d.x.extend_from_slice(&cp.y[t - lag]);
                }
                if layout.col_level.is_some() {
                    d.x.extend_from_slice(&cp.x_level[t]);
                }
                if layout.col_change.is_some() {
                    d.x.extend_from_slice(&cp.x_change[t]);
                }
                if layout.col_variant.is_some() {
                    d.x.extend_from_slice(&cp.variants[t]);
                }
                if layout.col_vacc.is_some() {
                    d.x.push(cp.vacc[t]);
                }
                if d.x.len() - start != np {
                    return Err(Error::Dimension(format!(
                        "{}: regressor row has {} columns, expected {np}",
                        cp.country,
                        d.x.len() - start
                    )));
                }
                d.y.push(cp.y[t]);
                d.country.push(c);
                d.obs.push((c, t));
            }
        }
        d.stats = SuffStats::new(&d, panel.countries.len());
        Ok(d)
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.x[o * self.n_predictors..(o + 1) * self.n_predictors]
    }

    pub fn response(&self, o: usize) -> &[f64; N_RESPONSES] {
        &self.y[o]
    }

    pub fn country(&self, o: usize) -> usize {
        self.country[o]
    }
}

/// The log posterior of one spec on one panel, over the unconstrained
/// parameter vector.
#[derive(Debug, Clone)]
pub struct PanelModel {
    pub spec: ModelSpec,
    pub layout: ParameterLayout,
    pub design: Design,
    lkj_const: f64,
}

fn half_cauchy_lp(x: f64, scale: f64) -> f64 {
    LN_2 - PI.ln() - scale.ln() - (x / scale).powi(2).ln_1p()
}

/// Inverse of a lower-triangular matrix.
fn lower_inverse(m: &[[f64; N_RESPONSES]; N_RESPONSES]) -> [[f64; N_RESPONSES]; N_RESPONSES] {
    let n = N_RESPONSES;
    let mut inv = [[0.0; N_RESPONSES]; N_RESPONSES];
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= m[i][k] * inv[k][col];
            }
            inv[i][col] = s / m[i][i];
        }
    }
    inv
}

impl PanelModel {
    pub fn new(panel: &PanelDataset, spec: &ModelSpec) -> Result<Self> {
        let layout = ParameterLayout::new(spec, &panel.country_names())?;
        let design = Design::new(panel, spec, &layout)?;
        Ok(PanelModel {
            spec: spec.clone(),
            lkj_const: corr::lkj_log_normalizer(N_RESPONSES, spec.priors.lkj_xi),
            layout,
            design,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Log posterior at `u`, writing its gradient into `grad` when given.
    pub fn eval(&self, u: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        const N: usize = N_RESPONSES;
        let layout = &self.layout;
        if u.len() != layout.dim() {
            return Err(Error::Dimension(format!(
                "parameter vector has length {}, model expects {}",
                u.len(),
                layout.dim()
            )));
        }
        if let Some(g) = grad.as_deref() {
            if g.len() != u.len() {
                return Err(Error::Dimension("gradient buffer length".into()));
            }
        }
        let priors = &self.spec.priors;
        let np = layout.n_predictors;
        let slots = layout.coef_slots();
        let mut b = vec![0.0; N * np];
        for (slot, &(i, col)) in slots.iter().enumerate() {
            b[i * np + col] = u[slot];
        }
        let mu_r = layout.block(Block::Mu);
        let mu = &u[mu_r.clone()];
        let sm_idx = layout.block(Block::SigmaMu).start;
        let log_sigma_mu = u[sm_idx];
        let sigma_mu = log_sigma_mu.exp();
        let rs = layout.block(Block::ResidScale);
        let log_s: [f64; N] = std::array::from_fn(|i| u[rs.start + i]);
        let s: [f64; N] = log_s.map(f64::exp);
        let corr_r = layout.block(Block::Corr);
        let (l, corr_log_jac) = corr::constrain(&u[corr_r.clone()], N);

        // Cholesky factor of Σ_u and the precision matrix.
        let mut m = [[0.0; N]; N];
        for i in 0..N {
            for j in 0..=i {
                m[i][j] = s[i] * l[i * N + j];
            }
        }
        let minv = lower_inverse(&m);
        let mut prec = [[0.0; N]; N];
        for i in 0..N {
            for j in 0..N {
                prec[i][j] = (i.max(j)..N).map(|k| minv[k][i] * minv[k][j]).sum();
            }
        }
        let log_det_m: f64 = (0..N).map(|i| m[i][i].ln()).sum();
        if !log_det_m.is_finite() || prec.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { term: "residual covariance" });
        }

        // Likelihood through the residual scatter S = Σ r rᵀ, r = y − μ_c − B x,
        // expanded in the sufficient statistics.
        let want_grad = grad.is_some();
        let design = &self.design;
        let st = &design.stats;
        let n_c = st.n.len();
        // B XX and B sx_c
        let mut bxx = vec![0.0; N * np];
        for i in 0..N {
            let bi = &b[i * np..(i + 1) * np];
            for (a, ba) in bi.iter().enumerate() {
                if *ba != 0.0 {
                    let xa = &st.xx[a * np..(a + 1) * np];
                    for (o, xv) in bxx[i * np..(i + 1) * np].iter_mut().zip(xa) {
                        *o += ba * xv;
                    }
                }
            }
        }
        let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        let mut scatter = [[0.0; N]; N];
        for i in 0..N {
            for j in 0..=i {
                scatter[i][j] = st.yy[i][j] - dot(&st.yx[i * np..(i + 1) * np], &b[j * np..(j + 1) * np])
                    - dot(&b[i * np..(i + 1) * np], &st.yx[j * np..(j + 1) * np])
                    + dot(&bxx[i * np..(i + 1) * np], &b[j * np..(j + 1) * np]);
            }
        }
        // a_c = sy_c − B sx_c
        let mut a_c = vec![[0.0; N]; n_c];
        for c in 0..n_c {
            let sx = &st.sx[c * np..(c + 1) * np];
            for i in 0..N {
                a_c[c][i] = st.sy[c][i] - dot(&b[i * np..(i + 1) * np], sx);
            }
            let m = &mu[c * N..(c + 1) * N];
            for i in 0..N {
                for j in 0..=i {
                    scatter[i][j] += st.n[c] * m[i] * m[j] - m[i] * a_c[c][j] - a_c[c][i] * m[j];
                }
            }
        }
        let mut quad = 0.0;
        for i in 0..N {
            quad += prec[i][i] * scatter[i][i];
            for j in 0..i {
                quad += 2.0 * prec[i][j] * scatter[i][j];
            }
        }
        let (mut gb, mut gmu) = (Vec::new(), Vec::new());
        if want_grad {
            // d/dB = P (YX − Σ_c μ_c sx_cᵀ − B XX), d/dμ_c = P (a_c − n_c μ_c)
            let mut e = vec![0.0; N * np];
            for i in 0..N {
                for k in 0..np {
                    e[i * np + k] = st.yx[i * np + k] - bxx[i * np + k];
                }
            }
            gmu = vec![0.0; mu.len()];
            for c in 0..n_c {
                let sx = &st.sx[c * np..(c + 1) * np];
                let m = &mu[c * N..(c + 1) * N];
                for i in 0..N {
                    if m[i] != 0.0 {
                        for (ek, xk) in e[i * np..(i + 1) * np].iter_mut().zip(sx) {
                            *ek -= m[i] * xk;
                        }
                    }
                }
                let d: [f64; N] = std::array::from_fn(|i| a_c[c][i] - st.n[c] * m[i]);
                for i in 0..N {
                    gmu[c * N + i] = (0..N).map(|j| prec[i][j] * d[j]).sum();
                }
            }
            gb = vec![0.0; N * np];
            for i in 0..N {
                for j in 0..N {
                    let p = prec[i][j];
                    for (g, ev) in gb[i * np..(i + 1) * np].iter_mut().zip(&e[j * np..(j + 1) * np]) {
                        *g += p * ev;
                    }
                }
            }
        }
        let n_obs = design.n_obs() as f64;
        let loglik = -0.5 * n_obs * N as f64 * LN_2PI - n_obs * log_det_m - 0.5 * quad;
        if !loglik.is_finite() {
            return Err(Error::NonFinite { term: "likelihood" });
        }

        // Priors and log-Jacobians.
        let tau = priors.tau;
        let n_coef = slots.len() as f64;
        let coef_lp = -0.5 * u[..slots.len()].iter().map(|v| (v / tau).powi(2)).sum::<f64>()
            - n_coef * (tau.ln() + 0.5 * LN_2PI);
        let n_mu = mu.len() as f64;
        let mu_lp = -0.5 * mu.iter().map(|v| (v / sigma_mu).powi(2)).sum::<f64>()
            - n_mu * (log_sigma_mu + 0.5 * LN_2PI);
        let scale = priors.sigma_scale;
        let scale_lp = half_cauchy_lp(sigma_mu, scale)
            + s.iter().map(|&v| half_cauchy_lp(v, scale)).sum::<f64>()
            + log_sigma_mu
            + log_s.iter().sum::<f64>();
        let eta = priors.lkj_xi;
        let lkj_lp = self.lkj_const
            + (1..N)
                .map(|i| corr::lkj_diag_power(N, i, eta) * l[i * N + i].ln())
                .sum::<f64>();
        let prior_lp = coef_lp + mu_lp + scale_lp;
        if !prior_lp.is_finite() {
            return Err(Error::NonFinite { term: "prior" });
        }
        if !(lkj_lp + corr_log_jac).is_finite() {
            return Err(Error::NonFinite { term: "correlation prior" });
        }
        let total = loglik + prior_lp + lkj_lp + corr_log_jac;

        if let Some(g) = grad.as_deref_mut() {
            for (slot, &(i, col)) in slots.iter().enumerate() {
                g[slot] = gb[i * np + col] - u[slot] / (tau * tau);
            }
            let inv_var_mu = 1.0 / (sigma_mu * sigma_mu);
            for (k, gi) in g[mu_r.clone()].iter_mut().enumerate() {
                *gi = gmu[k] - mu[k] * inv_var_mu;
            }
            let d_cauchy = |v: f64| -2.0 * v * v / (scale * scale + v * v);
            g[sm_idx] = mu.iter().map(|v| v * v).sum::<f64>() * inv_var_mu - n_mu
                + d_cauchy(sigma_mu)
                + 1.0;

            // d loglik / d M = lower(P S P M) - n diag(1 / M_ii)
            for i in 0..N {
                for j in 0..i {
                    scatter[j][i] = scatter[i][j];
                }
            }
            let mut ps = [[0.0; N]; N];
            for i in 0..N {
                for j in 0..N {
                    ps[i][j] = (0..N).map(|k| prec[i][k] * scatter[k][j]).sum();
                }
            }
            let mut psp = [[0.0; N]; N];
            for i in 0..N {
                for j in 0..N {
                    psp[i][j] = (0..N).map(|k| ps[i][k] * prec[k][j]).sum();
                }
            }
            let mut gm = [[0.0; N]; N];
            for i in 0..N {
                for j in 0..=i {
                    gm[i][j] = (j..N).map(|k| psp[i][k] * m[k][j]).sum();
                }
                gm[i][i] -= n_obs / m[i][i];
            }
            let mut gl = vec![0.0; N * N];
            for i in 0..N {
                let d_sigma: f64 = (0..=i).map(|j| gm[i][j] * l[i * N + j]).sum();
                g[rs.start + i] = s[i] * d_sigma + d_cauchy(s[i]) + 1.0;
                for j in 0..=i {
                    gl[i * N + j] = gm[i][j] * s[i];
                }
                if i > 0 {
                    gl[i * N + i] += corr::lkj_diag_power(N, i, eta) / l[i * N + i];
                }
            }
            let gy = corr::backprop(&u[corr_r.clone()], &l, &gl, N);
            g[corr_r].copy_from_slice(&gy);
        }
        Ok(total)
    }

    /// MVN log density of every observation under `p`.
    pub fn observation_loglik(&self, p: &ParameterVector) -> Result<Vec<f64>> {
        let sigma = p.sigma_u();
        let chol = sigma
            .cholesky()
            .ok_or_else(|| Error::Data("residual covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = (0..N_RESPONSES).map(|i| l[(i, i)].ln()).sum();
        let konst = -0.5 * N_RESPONSES as f64 * LN_2PI - log_det;
        let means = self.predict(p)?;
        Ok((0..self.design.n_obs())
            .map(|o| {
                let y = self.design.y[o];
                let r = nalgebra::Vector4::from_fn(|i, _| y[i] - means[o][i]);
                let z = l.solve_lower_triangular(&r).expect("positive diagonal");
                konst - 0.5 * z.norm_squared()
            })
            .collect())
    }

    /// Conditional mean of every observation under `p`.
    pub fn predict(&self, p: &ParameterVector) -> Result<Vec<[f64; N_RESPONSES]>> {
        if p.mu.ncols() != self.layout.n_countries {
            return Err(Error::Dimension("intercepts do not match the panel".into()));
        }
        let np = self.layout.n_predictors;
        let mut b = self.layout.coefficient_matrix(p);
        // Structurally excluded lag entries stay zero whatever `p` holds.
        for lag in 0..self.layout.lags {
            for i in 0..N_RESPONSES {
                for j in 0..N_RESPONSES {
                    if !self.spec.phi_active(i, j) {
                        b[i * np + lag * N_RESPONSES + j] = 0.0;
                    }
                }
            }
        }
        Ok((0..self.design.n_obs())
            .map(|o| {
                let x = self.design.row(o);
                let c = self.design.country[o];
                std::array::from_fn(|i| {
                    p.mu[(i, c)]
                        + b[i * np..(i + 1) * np].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
            })
            .collect())
    }
}

impl LogDensity for PanelModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.eval(x, Some(grad))
    }

    fn constrain(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.layout.constrain(x)
    }

    fn param_names(&self) -> Vec<String> {
        self.layout.names().to_vec()
    }
}

/// Unnormalised log posterior at the unconstrained point `u`.
pub fn log_posterior(u: &[f64], data: &PanelDataset, spec: &ModelSpec) -> Result<f64> {
    PanelModel::new(data, spec)?.eval(u, None)
}

/// Gradient of [`log_posterior`] with respect to `u`.
pub fn grad_log_posterior(u: &[f64], data: &PanelDataset, spec: &ModelSpec) -> Result<Vec<f64>> {
    let model = PanelModel::new(data, spec)?;
    let mut g = vec![0.0; u.len()];
    model.eval(u, Some(&mut g))?;
    Ok(g)
}

/// Conditional mean of `Y[t, c]` under `theta`; excluded lag entries are ignored.
pub fn linear_predictor(
    theta: &ParameterVector,
    data: &PanelDataset,
    spec: &ModelSpec,
    t: usize,
    c: usize,
) -> Result<[f64; N_RESPONSES]> {
    let cp = data
        .countries
        .get(c)
        .ok_or_else(|| Error::InvalidInput(format!("country index {c} out of range")))?;
    if t < spec.lags || t >= cp.len() {
        return Err(Error::InvalidInput(format!(
            "week {t} of {} has no lagged responses or is out of range",
            cp.country
        )));
    }
    if theta.phi.len() != spec.lags || theta.mu.ncols() <= c {
        return Err(Error::Dimension("parameters do not match spec or panel".into()));
    }
    let mut out = [0.0; N_RESPONSES];
    for (i, o) in out.iter_mut().enumerate() {
        let mut v = theta.mu[(i, c)];
        for (lag, phi) in theta.phi.iter().enumerate() {
            let y = &cp.y[t - lag - 1];
            for (j, yj) in y.iter().enumerate() {
                if spec.phi_active(i, j) {
                    v += phi[(i, j)] * yj;
                }
            }
        }
        let k = spec.npi_names.len();
        if spec.include_levels && k > 0 {
            v += (0..k).map(|m| theta.lambda[(i, m)] * cp.x_level[t][m]).sum::<f64>();
        }
        if spec.include_changes && k > 0 {
            v += (0..k).map(|m| theta.delta[(i, m)] * cp.x_change[t][m]).sum::<f64>();
        }
        if spec.include_variants {
            v += (0..4).map(|j| theta.nu[(i, j)] * cp.variants[t][j]).sum::<f64>();
        }
        if spec.include_vaccination {
            v += theta.psi_vacc[i] * cp.vacc[t];
        }
        *o = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testing::random_panel;
    use crate::Response;
    use nalgebra::{DMatrix, Matrix4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Cauchy, Continuous, Normal};

    fn spec_for(panel: &PanelDataset) -> ModelSpec {
        ModelSpec {
            npi_names: panel.npi_names.clone(),
            ..ModelSpec::default()
        }
    }

    fn random_u(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
    }

    /// Log |det| of the Jacobian of the correlation block by central differences.
    fn corr_log_jacobian(y: &[f64]) -> f64 {
        let lower = |y: &[f64]| {
            let (l, _) = corr::constrain(y, 4);
            (1..4).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| l[i * 4 + j]).collect::<Vec<_>>()
        };
        let n = y.len();
        let h = 1e-6;
        let mut jac = DMatrix::zeros(n, n);
        for q in 0..n {
            let mut up = y.to_vec();
            let mut down = y.to_vec();
            up[q] += h;
            down[q] -= h;
            let (a, b) = (lower(&up), lower(&down));
            for r in 0..n {
                jac[(r, q)] = (a[r] - b[r]) / (2.0 * h);
            }
        }
        jac.determinant().abs().ln()
    }

    /// Straightforward re-derivation of the log posterior from its definition.
    fn oracle(u: &[f64], panel: &PanelDataset, spec: &ModelSpec) -> f64 {
        let layout = ParameterLayout::new(spec, &panel.country_names()).unwrap();
        let p = layout.to_parameters(u).unwrap();
        let sigma = p.sigma_u();
        let sigma_inv = sigma.try_inverse().unwrap();
        let log_det = sigma.determinant().ln();
        let mut lp = 0.0;
        for (c, cp) in panel.countries.iter().enumerate() {
            for t in 1..cp.len() {
                let mut r = Vector4::zeros();
                for i in 0..4 {
                    let mut m = p.mu[(i, c)];
                    for j in 0..4 {
                        if spec.phi_active(i, j) {
                            m += p.phi[0][(i, j)] * cp.y[t - 1][j];
                        }
                    }
                    for k in 0..panel.n_npis() {
                        m += p.lambda[(i, k)] * cp.x_level[t][k] + p.delta[(i, k)] * cp.x_change[t][k];
                    }
                    for v in 0..4 {
                        m += p.nu[(i, v)] * cp.variants[t][v];
                    }
                    m += p.psi_vacc[i] * cp.vacc[t];
                    r[i] = cp.y[t][i] - m;
                }
                lp += -0.5 * (4.0 * (2.0 * PI).ln() + log_det + (r.transpose() * sigma_inv * r)[(0, 0)]);
            }
        }
        let coef = Normal::new(0.0, spec.priors.tau).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if spec.phi_active(i, j) {
                    lp += coef.ln_pdf(p.phi[0][(i, j)]);
                }
            }
            for k in 0..panel.n_npis() {
                lp += coef.ln_pdf(p.lambda[(i, k)]) + coef.ln_pdf(p.delta[(i, k)]);
            }
            for v in 0..4 {
                lp += coef.ln_pdf(p.nu[(i, v)]);
            }
            lp += coef.ln_pdf(p.psi_vacc[i]);
        }
        let mu_prior = Normal::new(0.0, p.sigma_mu).unwrap();
        lp += p.mu.iter().map(|&m| mu_prior.ln_pdf(m)).sum::<f64>();
        let cauchy = Cauchy::new(0.0, spec.priors.sigma_scale).unwrap();
        lp += LN_2 + cauchy.ln_pdf(p.sigma_mu) + p.sigma_mu.ln();
        for s in p.resid_scales.iter() {
            lp += LN_2 + cauchy.ln_pdf(*s) + s.ln();
        }
        let eta = spec.priors.lkj_xi;
        let omega = p.omega();
        lp += corr::lkj_log_normalizer(4, eta) + (eta - 1.0) * omega.determinant().ln();
        for i in 1..4 {
            lp += (4 - i - 1) as f64 * p.corr_factor[(i, i)].ln();
        }
        lp + corr_log_jacobian(&u[layout.block(Block::Corr)])
    }

    #[test]
    fn matches_independent_oracle() {
        let panel = random_panel(3, 8, 2, 1);
        let spec = spec_for(&panel);
        let model = PanelModel::new(&panel, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let u = random_u(model.dim(), 1.0, &mut rng);
            let a = model.eval(&u, None).unwrap();
            let b = oracle(&u, &panel, &spec);
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn oracle_agreement_with_exclusions() {
        let panel = random_panel(2, 6, 1, 3);
        let mut spec = spec_for(&panel);
        spec.excluded_predictors = [Response::LogEd, Response::DTransit].into();
        let model = PanelModel::new(&panel, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_u(model.dim(), 1.0, &mut rng);
        let (a, b) = (model.eval(&u, None).unwrap(), oracle(&u, &panel, &spec));
        assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn closed_form_at_origin_with_zero_data() {
        let mut panel = random_panel(2, 5, 1, 5);
        for c in &mut panel.countries {
            for t in 0..c.len() {
                c.y[t] = [0.0; 4];
                c.x_level[t] = vec![0.0];
                c.x_change[t] = vec![0.0];
                c.vacc[t] = 0.0;
            }
        }
        let spec = spec_for(&panel);
        let model = PanelModel::new(&panel, &spec).unwrap();
        let u = vec![0.0; model.dim()];
        let n_obs = 8.0;
        let n_coef = model.layout.n_coefficients() as f64;
        let half_cauchy_at_one = LN_2 - PI.ln() - 2f64.ln() - 1.25f64.ln();
        let expected = -n_obs * 2.0 * LN_2PI
            - n_coef * 0.5 * LN_2PI
            - 8.0 * 0.5 * LN_2PI
            + 5.0 * half_cauchy_at_one
            + corr::lkj_log_normalizer(4, 2.0);
        let got = model.eval(&u, None).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn doubling_tau_shifts_coefficient_prior() {
        let panel = random_panel(2, 6, 2, 6);
        let mut spec = spec_for(&panel);
        let model = PanelModel::new(&panel, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut u = random_u(model.dim(), 0.5, &mut rng);
        let n_coef = model.layout.n_coefficients();
        u[..n_coef].iter_mut().for_each(|v| *v = 0.0);
        let base = model.eval(&u, None).unwrap();
        spec.priors.tau *= 2.0;
        let wider = PanelModel::new(&panel, &spec).unwrap().eval(&u, None).unwrap();
        assert!((wider - base + n_coef as f64 * LN_2).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let panel = random_panel(2, 10, 2, 8);
        let spec = spec_for(&panel);
        let model = PanelModel::new(&panel, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..10 {
            let u = random_u(model.dim(), 1.0, &mut rng);
            let mut g = vec![0.0; u.len()];
            model.eval(&u, Some(&mut g)).unwrap();
            for q in 0..u.len() {
                let mut a = u.clone();
                let mut b = u.clone();
                a[q] += h;
                b[q] -= h;
                let fd = (model.eval(&a, None).unwrap() - model.eval(&b, None).unwrap()) / (2.0 * h);
                let rel = (g[q] - fd).abs() / fd.abs().max(1.0);
                assert!(rel < 1e-4, "{}: {} vs {fd}", model.layout.names()[q], g[q]);
            }
        }
    }

    #[test]
    fn country_order_does_not_matter() {
        let panel = random_panel(3, 7, 1, 10);
        let spec = spec_for(&panel);
        let model = PanelModel::new(&panel, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_u(model.dim(), 1.0, &mut rng);
        let mut p = model.layout.to_parameters(&u).unwrap();

        let mut shuffled = panel.clone();
        shuffled.countries.reverse();
        let model2 = PanelModel::new(&shuffled, &spec).unwrap();
        let mu = p.mu.clone();
        for c in 0..3 {
            p.mu.set_column(c, &mu.column(2 - c));
        }
        let u2 = model2.layout.from_parameters(&p).unwrap();
        let (a, b) = (model.eval(&u, None).unwrap(), model2.eval(&u2, None).unwrap());
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn intercepts_only_touch_their_country() {
        let panel = random_panel(3, 6, 1, 12);
        let spec = spec_for(&panel);
        let model = PanelModel::new(&panel, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = random_u(model.dim(), 1.0, &mut rng);
        let mut p = model.layout.to_parameters(&u).unwrap();
        let before = model.eval(&u, None).unwrap();
        p.mu[(1, 1)] += 0.7;
        let after = model.eval(&model.layout.from_parameters(&p).unwrap(), None).unwrap();

        // The same change seen by a model of country 1 alone.
        let single = PanelDataset {
            npi_names: panel.npi_names.clone(),
            countries: vec![panel.countries[1].clone()],
        };
        let m1 = PanelModel::new(&single, &spec).unwrap();
        let mut p1 = p.clone();
        p1.mu = DMatrix::from_column_slice(4, 1, p.mu.column(1).as_slice());
        let after1 = m1.eval(&m1.layout.from_parameters(&p1).unwrap(), None).unwrap();
        p1.mu[(1, 0)] -= 0.7;
        let before1 = m1.eval(&m1.layout.from_parameters(&p1).unwrap(), None).unwrap();
        assert!(((after - before) - (after1 - before1)).abs() < 1e-9);
    }

    #[test]
    fn gradient_vanishes_at_the_prior_mode() {
        // Zero data at the origin: no pull on the means and an identity
        // correlation at the LKJ mode.
        let mut panel = random_panel(2, 3, 1, 14);
        for c in &mut panel.countries {
            for t in 0..c.len() {
                c.y[t] = [0.0; 4];
            }
        }
        let spec = spec_for(&panel);
        let model = PanelModel::new(&panel, &spec).unwrap();
        let mut u = vec![0.0; model.dim()];
        let mut g = vec![0.0; u.len()];
        model.eval(&u, Some(&mut g)).unwrap();
        for b in [Block::Phi, Block::Lambda, Block::Delta, Block::Nu, Block::PsiVacc, Block::Mu, Block::Corr] {
            for q in model.layout.block(b) {
                assert!(g[q].abs() < 1e-12, "{}: {}", model.layout.names()[q], g[q]);
            }
        }
        // Without observations the log residual scales peak at s = 2.
        let empty = random_panel(1, 1, 1, 15);
        let m0 = PanelModel::new(&empty, &spec_for(&empty)).unwrap();
        u = vec![0.0; m0.dim()];
        for q in m0.layout.block(Block::ResidScale) {
            u[q] = 2f64.ln();
        }
        let mut g0 = vec![0.0; u.len()];
        m0.eval(&u, Some(&mut g0)).unwrap();
        for q in m0.layout.block(Block::ResidScale) {
            assert!(g0[q].abs() < 1e-12);
        }
    }

    #[test]
    fn linear_predictor_matches_parameters() {
        let panel = random_panel(2, 5, 2, 16);
        let spec = spec_for(&panel);
        let layout = ParameterLayout::new(&spec, &panel.country_names()).unwrap();
        let mut p = ParameterVector::zeros(1, 2, 2);
        p.phi[0] = Matrix4::from_fn(|i, j| (i + 2 * j) as f64 * 0.1);
        p.mu[(2, 1)] = 0.5;
        p.psi_vacc = Vector4::new(1.0, 0.0, 0.0, 0.0);
        p.resid_scales = Vector4::repeat(1.0);
        p.corr_factor = Matrix4::identity();
        p.sigma_mu = 1.0;
        let cp = &panel.countries[1];
        let y = linear_predictor(&p, &panel, &spec, 3, 1).unwrap();
        let expect2 = 0.5 + (0..4).map(|j| (2 + 2 * j) as f64 * 0.1 * cp.y[2][j]).sum::<f64>();
        assert!((y[2] - expect2).abs() < 1e-12);
        let expect0 = cp.vacc[3] + (0..4).map(|j| (2 * j) as f64 * 0.1 * cp.y[2][j]).sum::<f64>();
        assert!((y[0] - expect0).abs() < 1e-12);
        assert!(linear_predictor(&p, &panel, &spec, 0, 1).is_err());

        let model = PanelModel::new(&panel, &spec).unwrap();
        let means = model.predict(&layout.to_parameters(&layout.from_parameters(&p).unwrap()).unwrap()).unwrap();
        let o = model.design.obs.iter().position(|&o| o == (1, 3)).unwrap();
        assert!((means[o][2] - y[2]).abs() < 1e-12);
    }

    #[test]
    fn observation_loglik_sums_to_likelihood() {
        let panel = random_panel(2, 6, 1, 17);
        let spec = spec_for(&panel);
        let model = PanelModel::new(&panel, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let u = random_u(model.dim(), 0.5, &mut rng);
        let p = model.layout.to_parameters(&u).unwrap();
        let ll: f64 = model.observation_loglik(&p).unwrap().iter().sum();
        // Removing all observations leaves the prior; the difference is the likelihood.
        let mut short = panel.clone();
        for c in &mut short.countries {
            c.weeks.truncate(1);
            c.y.truncate(1);
            c.x_level.truncate(1);
            c.x_change.truncate(1);
            c.vacc.truncate(1);
            c.variants.truncate(1);
        }
        let prior_only = PanelModel::new(&short, &spec).unwrap().eval(&u, None).unwrap();
        let full = model.eval(&u, None).unwrap();
        assert!((full - prior_only - ll).abs() < 1e-8);
    }

    #[test]
    fn wrong_length_is_an_error() {
        let panel = random_panel(2, 4, 1, 19);
        let model = PanelModel::new(&panel, &spec_for(&panel)).unwrap();
        assert!(matches!(model.eval(&[0.0; 3], None), Err(Error::Dimension(_))));
    }
}
