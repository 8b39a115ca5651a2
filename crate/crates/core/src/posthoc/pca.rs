use nalgebra::{DMatrix, SymmetricEigen};

use crate::dataset::CharacteristicsTable;
use crate::{Error, Result};

/// Principal components of the standardised (correlation-scale) features.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub countries: Vec<String>,
    pub features: Vec<String>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance per component.
    pub explained: Vec<f64>,
    /// Features × components; orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// Countries × components.
    pub scores: DMatrix<f64>,
    /// The standardised input.
    pub standardized: DMatrix<f64>,
}

/// PCA of a countries × features matrix after scaling every column to zero
/// mean and unit sample variance. Each loading vector is signed so that its
/// largest-magnitude entry is positive.
pub fn pca(countries: Vec<String>, features: Vec<String>, x: &DMatrix<f64>) -> Result<PcaResult> {
    let (n, p) = x.shape();
    if n < 2 || p < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 countries and 2 features, got {n} x {p}")));
    }
    if countries.len() != n || features.len() != p {
        return Err(Error::Dimension("PCA labels do not match the matrix".into()));
    }
    let mut z = x.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Data(format!("feature '{}' is constant", features[j])));
        }
        col.apply(|v| *v = (*v - mean) / sd);
    }
    let corr = z.transpose() * &z / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(corr);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut loadings = DMatrix::zeros(p, p);
    for (k, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let lead = v.iter().copied().fold(0.0, |m: f64, a| if a.abs() > m.abs() { a } else { m });
        loadings.set_column(k, &(v * lead.signum()));
    }
    let total: f64 = eigenvalues.iter().sum();
    Ok(PcaResult {
        countries,
        features,
        explained: eigenvalues.iter().map(|e| e / total).collect(),
        eigenvalues,
        scores: &z * &loadings,
        loadings,
        standardized: z,
    })
}

/// PCA of a characteristics table, keeping the countries with every feature present.
pub fn pca_characteristics(table: &CharacteristicsTable) -> Result<PcaResult> {
    let rows: Vec<(String, Vec<f64>)> = table
        .countries
        .iter()
        .filter_map(|c| c.values.iter().copied().collect::<Option<Vec<f64>>>().map(|v| (c.country.clone(), v)))
        .collect();
    let dropped = table.countries.len() - rows.len();
    if dropped > 0 {
        log::warn!("PCA drops {dropped} countries with missing characteristics");
    }
    let p = table.features.len();
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i].1[j]);
    pca(rows.into_iter().map(|r| r.0).collect(), table.features.clone(), &x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize, p: usize) -> (Vec<String>, Vec<String>) {
        ((0..n).map(|i| format!("c{i}")).collect(), (0..p).map(|j| format!("f{j}")).collect())
    }

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn points_on_a_line() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { i as f64 } else { 3.0 - 2.0 * i as f64 });
        let (c, f) = labels(6, 2);
        let r = pca(c, f, &x).unwrap();
        assert!((r.explained[0] - 1.0).abs() < 1e-12);
        assert!(r.eigenvalues[1].abs() < 1e-12);
    }

    #[test]
    fn isotropic_cloud() {
        let mut x = DMatrix::zeros(6, 3);
        for j in 0..3 {
            x[(2 * j, j)] = 1.0;
            x[(2 * j + 1, j)] = -1.0;
        }
        let (c, f) = labels(6, 3);
        let r = pca(c, f, &x).unwrap();
        for e in &r.eigenvalues {
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn agrees_with_svd_of_standardised_data() {
        let x = random(10, 6, 1);
        let (c, f) = labels(10, 6);
        let r = pca(c, f, &x).unwrap();
        let svd = r.standardized.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..).collect();
        sv.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (k, &(s, i)) in sv.iter().enumerate() {
            assert!((s * s / 9.0 - r.eigenvalues[k]).abs() < 1e-8);
            let dot: f64 = (0..6).map(|j| vt[(i, j)] * r.loadings[(j, k)]).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8);
        }
        let gram = r.loadings.transpose() * &r.loadings;
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);
        assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn constant_column_is_named() {
        let mut x = random(5, 3, 2);
        x.column_mut(1).fill(4.0);
        let (c, f) = labels(5, 3);
        let err = pca(c, f, &x).unwrap_err().to_string();
        assert!(err.contains("f1"), "{err}");
    }

    proptest! {
        #[test]
        fn scores_reconstruct_standardised_matrix(seed in 0u64..500, n in 3usize..12, p in 2usize..6) {
            let x = random(n, p, seed);
            let (c, f) = labels(n, p);
            let r = pca(c, f, &x).unwrap();
            let back = &r.scores * r.loadings.transpose();
            prop_assert!((back - &r.standardized).amax() < 1e-8);
        }
    }
}
