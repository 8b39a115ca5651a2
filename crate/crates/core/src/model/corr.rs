//! Unconstrained parameterisation of correlation-matrix Cholesky factors and
//! the LKJ density expressed on the factor.
//!
//! Row `i` of the factor is built from `i` canonical partial correlations
//! `z = tanh(y)`: with `R₀ = 1` and `R_{j+1} = R_j (1 - z_j²)`, the entries are
//! `L[i][j] = z_j √R_j` for `j < i` and `L[i][i] = √R_i`, so every row has unit
//! norm and the diagonal is positive.

use statrs::function::beta::ln_beta;

/// Free parameters of a `k × k` correlation matrix.
pub fn n_corr_params(k: usize) -> usize {
    k * (k - 1) / 2
}

/// `ln(1 - tanh(y)²)`, stable for large `|y|`.
fn log_sech2(y: f64) -> f64 {
    let a = y.abs();
    2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Row-major `k × k` lower-triangular factor plus the log-Jacobian of the map.
pub fn constrain(y: &[f64], k: usize) -> (Vec<f64>, f64) {
    assert_eq!(y.len(), n_corr_params(k));
    let mut l = vec![0.0; k * k];
    let mut log_jac = 0.0;
    l[0] = 1.0;
    let mut idx = 0;
    for i in 1..k {
        // Log of the squared norm still available to the rest of the row.
        let mut log_rem = 0.0;
        for j in 0..i {
            let ls = log_sech2(y[idx]);
            log_jac += ls + 0.5 * log_rem;
            l[i * k + j] = y[idx].tanh() * (0.5 * log_rem).exp();
            log_rem += ls;
            idx += 1;
        }
        l[i * k + i] = (0.5 * log_rem).exp();
    }
    (l, log_jac)
}

/// Inverse of [`constrain`]. `l` must have unit-norm rows and a positive diagonal.
pub fn unconstrain(l: &[f64], k: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(n_corr_params(k));
    for i in 1..k {
        let mut rem: f64 = 1.0;
        for j in 0..i {
            let v = l[i * k + j];
            let z = v / rem.sqrt();
            y.push(z.atanh());
            rem -= v * v;
        }
    }
    y
}

/// Pull a gradient with respect to the factor back to `y`, adding the
/// gradient of the log-Jacobian.
///
/// `grad_l` is row-major `k × k`; only its lower triangle is read.
pub fn backprop(y: &[f64], l: &[f64], grad_l: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    let mut start = 0;
    for i in 1..k {
        let zs: Vec<f64> = y[start..start + i].iter().map(|v| v.tanh()).collect();
        let mut rem = vec![1.0; i + 1];
        for j in 0..i {
            rem[j + 1] = rem[j] * (1.0 - zs[j] * zs[j]);
        }
        // Suffix sums of G[i][m] L[i][m] over m > q, including the diagonal.
        let diag_term = grad_l[i * k + i] * l[i * k + i];
        let mut tail = diag_term;
        for q in (0..i).rev() {
            let z = zs[q];
            let sech2 = log_sech2(y[start + q]).exp();
            let direct = grad_l[i * k + q] * rem[q].sqrt();
            let jac = -2.0 * z - (i - 1 - q) as f64 * z;
            out[start + q] = sech2 * direct - z * tail + jac;
            tail += grad_l[i * k + q] * l[i * k + q];
        }
        start += i;
    }
    out
}

/// Log normalising constant of the LKJ(η) density on `k × k` correlation matrices.
pub fn lkj_log_normalizer(k: usize, eta: f64) -> f64 {
    let mut log_c = 0.0;
    for step in 1..k {
        let m = (k - step) as f64;
        let b = eta + (m - 1.0) / 2.0;
        log_c += (2.0 * eta - 2.0 + m) * m * std::f64::consts::LN_2 + m * ln_beta(b, b);
    }
    -log_c
}

/// Exponent of `L[i][i]` in the LKJ density on the Cholesky factor (0-based `i`).
pub fn lkj_diag_power(k: usize, i: usize, eta: f64) -> f64 {
    k as f64 - i as f64 + 2.0 * eta - 3.0
}

/// LKJ(η) log density of the correlation matrix `L Lᵀ`, expressed on the
/// free entries of its Cholesky factor.
pub fn lkj_cholesky_log_density(l: &[f64], k: usize, eta: f64) -> f64 {
    let mut lp = lkj_log_normalizer(k, eta);
    for i in 1..k {
        lp += lkj_diag_power(k, i, eta) * l[i * k + i].ln();
    }
    lp
}
