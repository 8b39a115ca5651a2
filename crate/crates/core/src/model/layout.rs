use std::ops::Range;

use nalgebra::{DMatrix, Matrix4, Vector4};

use super::{corr, ModelSpec};
use crate::dataset::transforms::Variant;
use crate::{Error, Response, Result, N_RESPONSES};

const VARIANTS: [Variant; 4] = [Variant::WildType, Variant::Alpha, Variant::Delta, Variant::Omicron];

/// Parameter groups, in the order they appear in the flat vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Phi,
    Lambda,
    Delta,
    Nu,
    PsiVacc,
    Mu,
    SigmaMu,
    ResidScale,
    Corr,
}

/// All model unknowns in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    /// One VAR coefficient matrix per lag; row = equation, column = predictor.
    pub phi: Vec<Matrix4<f64>>,
    /// NPI level coefficients, `4 × K`.
    pub lambda: DMatrix<f64>,
    /// NPI change coefficients, `4 × K`.
    pub delta: DMatrix<f64>,
    /// Variant coefficients; column order WT, Alpha, Delta, Omicron.
    pub nu: Matrix4<f64>,
    /// Vaccination coefficients.
    pub psi_vacc: Vector4<f64>,
    /// Country intercepts, `4 × C`.
    pub mu: DMatrix<f64>,
    pub sigma_mu: f64,
    pub resid_scales: Vector4<f64>,
    /// Lower-triangular Cholesky factor of the residual correlation matrix.
    pub corr_factor: Matrix4<f64>,
}

impl ParameterVector {
    pub fn zeros(lags: usize, n_npis: usize, n_countries: usize) -> Self {
        ParameterVector {
            phi: vec![Matrix4::zeros(); lags],
            lambda: DMatrix::zeros(N_RESPONSES, n_npis),
            delta: DMatrix::zeros(N_RESPONSES, n_npis),
            nu: Matrix4::zeros(),
            psi_vacc: Vector4::zeros(),
            mu: DMatrix::zeros(N_RESPONSES, n_countries),
            sigma_mu: 1.0,
            resid_scales: Vector4::repeat(1.0),
            corr_factor: Matrix4::identity(),
        }
    }

    pub fn omega(&self) -> Matrix4<f64> {
        self.corr_factor * self.corr_factor.transpose()
    }

    /// Residual covariance `D Ω D`.
    pub fn sigma_u(&self) -> Matrix4<f64> {
        let d = Matrix4::from_diagonal(&self.resid_scales);
        d * self.omega() * d
    }
}

/// Maps between flat vectors (unconstrained for the sampler, constrained for
/// output) and [`ParameterVector`] for one spec and panel shape.
///
/// The coefficient blocks are laid out equation-major; the intercepts
/// country-major. Structurally excluded VAR entries have no slot.
#[derive(Debug, Clone)]
pub struct ParameterLayout {
    pub lags: usize,
    pub n_npis: usize,
    pub n_countries: usize,
    /// Width of the regressor row of one observation.
    pub n_predictors: usize,
    /// `(equation, predictor column)` of each coefficient slot.
    coef_slots: Vec<(usize, usize)>,
    blocks: Vec<(Block, Range<usize>)>,
    names: Vec<String>,
    pub(crate) col_level: Option<usize>,
    pub(crate) col_change: Option<usize>,
    pub(crate) col_variant: Option<usize>,
    pub(crate) col_vacc: Option<usize>,
}

impl ParameterLayout {
    pub fn new(spec: &ModelSpec, countries: &[String]) -> Result<Self> {
        spec.validate()?;
        let n = N_RESPONSES;
        let k = spec.npi_names.len();
        let mut col = n * spec.lags;
        let mut take = |on: bool, width: usize| {
            on.then(|| {
                let c = col;
                col += width;
                c
            })
        };
        let col_level = take(spec.include_levels && k > 0, k);
        let col_change = take(spec.include_changes && k > 0, k);
        let col_variant = take(spec.include_variants, 4);
        let col_vacc = take(spec.include_vaccination, 1);
        let n_predictors = col;

        let mut names = Vec::new();
        let mut blocks = Vec::new();
        let mut coef_slots = Vec::new();
        let rname = |i: usize| Response::ALL[i].name();

        let start = names.len();
        for lag in 0..spec.lags {
            let prefix = if spec.lags == 1 { "phi".to_string() } else { format!("phi{}", lag + 1) };
            for i in 0..n {
                for j in 0..n {
                    if spec.phi_active(i, j) {
                        coef_slots.push((i, lag * n + j));
                        names.push(format!("{prefix}[{},{}]", rname(i), rname(j)));
                    }
                }
            }
        }
        blocks.push((Block::Phi, start..names.len()));

        for (block, base, label) in [
            (Block::Lambda, col_level, "lambda"),
            (Block::Delta, col_change, "delta"),
        ] {
            let start = names.len();
            if let Some(base) = base {
                for i in 0..n {
                    for (m, npi) in spec.npi_names.iter().enumerate() {
                        coef_slots.push((i, base + m));
                        names.push(format!("{label}[{},{npi}]", rname(i)));
                    }
                }
            }
            blocks.push((block, start..names.len()));
        }

        let start = names.len();
        if let Some(base) = col_variant {
            for i in 0..n {
                for (v, variant) in VARIANTS.iter().enumerate() {
                    coef_slots.push((i, base + v));
                    names.push(format!("nu[{},{}]", rname(i), variant.label()));
                }
            }
        }
        blocks.push((Block::Nu, start..names.len()));

        let start = names.len();
        if let Some(base) = col_vacc {
            for i in 0..n {
                coef_slots.push((i, base));
                names.push(format!("psi_vacc[{}]", rname(i)));
            }
        }
        blocks.push((Block::PsiVacc, start..names.len()));

        let start = names.len();
        for c in countries {
            for i in 0..n {
                names.push(format!("mu[{},{c}]", rname(i)));
            }
        }
        blocks.push((Block::Mu, start..names.len()));

        let start = names.len();
        names.push("sigma_mu".into());
        blocks.push((Block::SigmaMu, start..names.len()));

        let start = names.len();
        for i in 0..n {
            names.push(format!("sigma[{}]", rname(i)));
        }
        blocks.push((Block::ResidScale, start..names.len()));

        let start = names.len();
        for i in 1..n {
            for j in 0..i {
                names.push(format!("omega[{},{}]", rname(i), rname(j)));
            }
        }
        blocks.push((Block::Corr, start..names.len()));

        Ok(ParameterLayout {
            lags: spec.lags,
            n_npis: k,
            n_countries: countries.len(),
            n_predictors,
            coef_slots,
            blocks,
            names,
            col_level,
            col_change,
            col_variant,
            col_vacc,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn block(&self, block: Block) -> Range<usize> {
        self.blocks
            .iter()
            .find(|(b, _)| *b == block)
            .map(|(_, r)| r.clone())
            .unwrap()
    }

    pub fn n_coefficients(&self) -> usize {
        self.coef_slots.len()
    }

    pub(crate) fn coef_slots(&self) -> &[(usize, usize)] {
        &self.coef_slots
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension(format!(
                "parameter vector has length {len}, layout expects {}",
                self.dim()
            )));
        }
        Ok(())
    }

    fn unpack_common(&self, v: &[f64], out: &mut ParameterVector) {
        let n = N_RESPONSES;
        for (slot, &(i, col)) in self.coef_slots.iter().enumerate() {
            let x = v[slot];
            if col < n * self.lags {
                out.phi[col / n][(i, col % n)] = x;
            } else if self.col_level.is_some_and(|b| (b..b + self.n_npis).contains(&col)) {
                out.lambda[(i, col - self.col_level.unwrap())] = x;
            } else if self.col_change.is_some_and(|b| (b..b + self.n_npis).contains(&col)) {
                out.delta[(i, col - self.col_change.unwrap())] = x;
            } else if self.col_variant.is_some_and(|b| (b..b + 4).contains(&col)) {
                out.nu[(i, col - self.col_variant.unwrap())] = x;
            } else {
                out.psi_vacc[i] = x;
            }
        }
        let mu = self.block(Block::Mu);
        for c in 0..self.n_countries {
            for i in 0..n {
                out.mu[(i, c)] = v[mu.start + c * n + i];
            }
        }
    }

    fn pack_common(&self, p: &ParameterVector, v: &mut [f64]) {
        let n = N_RESPONSES;
        for (slot, &(i, col)) in self.coef_slots.iter().enumerate() {
            v[slot] = if col < n * self.lags {
                p.phi[col / n][(i, col % n)]
            } else if self.col_level.is_some_and(|b| (b..b + self.n_npis).contains(&col)) {
                p.lambda[(i, col - self.col_level.unwrap())]
            } else if self.col_change.is_some_and(|b| (b..b + self.n_npis).contains(&col)) {
                p.delta[(i, col - self.col_change.unwrap())]
            } else if self.col_variant.is_some_and(|b| (b..b + 4).contains(&col)) {
                p.nu[(i, col - self.col_variant.unwrap())]
            } else {
                p.psi_vacc[i]
            };
        }
        let mu = self.block(Block::Mu);
        for c in 0..self.n_countries {
            for i in 0..n {
                v[mu.start + c * n + i] = p.mu[(i, c)];
            }
        }
    }

    /// Unconstrained vector → parameters.
    pub fn to_parameters(&self, u: &[f64]) -> Result<ParameterVector> {
        self.check_len(u.len())?;
        let mut p = ParameterVector::zeros(self.lags, self.n_npis, self.n_countries);
        self.unpack_common(u, &mut p);
        p.sigma_mu = u[self.block(Block::SigmaMu).start].exp();
        let rs = self.block(Block::ResidScale);
        for i in 0..N_RESPONSES {
            p.resid_scales[i] = u[rs.start + i].exp();
        }
        let (l, _) = corr::constrain(&u[self.block(Block::Corr)], N_RESPONSES);
        p.corr_factor = Matrix4::from_row_slice(&l);
        Ok(p)
    }

    /// Parameters → unconstrained vector.
    pub fn from_parameters(&self, p: &ParameterVector) -> Result<Vec<f64>> {
        self.check_shape(p)?;
        let mut u = vec![0.0; self.dim()];
        self.pack_common(p, &mut u);
        u[self.block(Block::SigmaMu).start] = p.sigma_mu.ln();
        let rs = self.block(Block::ResidScale);
        for i in 0..N_RESPONSES {
            u[rs.start + i] = p.resid_scales[i].ln();
        }
        let l: Vec<f64> = p.corr_factor.transpose().iter().copied().collect();
        let y = corr::unconstrain(&l, N_RESPONSES);
        u[self.block(Block::Corr)].copy_from_slice(&y);
        Ok(u)
    }

    /// Constrained draw columns (natural scales, correlations for the residual
    /// correlation block) → parameters.
    pub fn parameters_from_constrained(&self, v: &[f64]) -> Result<ParameterVector> {
        self.check_len(v.len())?;
        let mut p = ParameterVector::zeros(self.lags, self.n_npis, self.n_countries);
        self.unpack_common(v, &mut p);
        p.sigma_mu = v[self.block(Block::SigmaMu).start];
        let rs = self.block(Block::ResidScale);
        for i in 0..N_RESPONSES {
            p.resid_scales[i] = v[rs.start + i];
        }
        let mut omega = Matrix4::identity();
        let mut idx = self.block(Block::Corr).start;
        for i in 1..N_RESPONSES {
            for j in 0..i {
                omega[(i, j)] = v[idx];
                omega[(j, i)] = v[idx];
                idx += 1;
            }
        }
        let chol = omega.cholesky().ok_or_else(|| {
            Error::Data("residual correlation matrix in draw is not positive definite".into())
        })?;
        p.corr_factor = chol.l();
        Ok(p)
    }

    /// Parameters → constrained draw columns.
    pub fn to_constrained(&self, p: &ParameterVector) -> Result<Vec<f64>> {
        self.check_shape(p)?;
        let mut v = vec![0.0; self.dim()];
        self.pack_common(p, &mut v);
        v[self.block(Block::SigmaMu).start] = p.sigma_mu;
        let rs = self.block(Block::ResidScale);
        for i in 0..N_RESPONSES {
            v[rs.start + i] = p.resid_scales[i];
        }
        let omega = p.omega();
        let mut idx = self.block(Block::Corr).start;
        for i in 1..N_RESPONSES {
            for j in 0..i {
                v[idx] = omega[(i, j)];
                idx += 1;
            }
        }
        Ok(v)
    }

    /// Unconstrained vector → constrained draw columns.
    pub fn constrain(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.to_constrained(&self.to_parameters(u)?)
    }

    fn check_shape(&self, p: &ParameterVector) -> Result<()> {
        if p.phi.len() != self.lags
            || p.lambda.ncols() != self.n_npis
            || p.delta.ncols() != self.n_npis
            || p.mu.ncols() != self.n_countries
        {
            return Err(Error::Dimension("parameter vector shape does not match layout".into()));
        }
        Ok(())
    }

    /// Row-major `4 × n_predictors` coefficient matrix; excluded entries are zero.
    pub(crate) fn coefficient_matrix(&self, p: &ParameterVector) -> Vec<f64> {
        let np = self.n_predictors;
        let n = N_RESPONSES;
        let mut b = vec![0.0; n * np];
        for (lag, phi) in p.phi.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    b[i * np + lag * n + j] = phi[(i, j)];
                }
            }
        }
        for i in 0..n {
            if let Some(base) = self.col_level {
                for m in 0..self.n_npis {
                    b[i * np + base + m] = p.lambda[(i, m)];
                }
            }
            if let Some(base) = self.col_change {
                for m in 0..self.n_npis {
                    b[i * np + base + m] = p.delta[(i, m)];
                }
            }
            if let Some(base) = self.col_variant {
                for v in 0..4 {
                    b[i * np + base + v] = p.nu[(i, v)];
                }
            }
            if let Some(base) = self.col_vacc {
                b[i * np + base] = p.psi_vacc[i];
            }
        }
        b
    }
}
