use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// k × dims.
    pub centers: DMatrix<f64>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
    /// WCSS after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn dist2(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, k: usize) -> f64 {
    (0..points.ncols()).map(|d| (points[(i, d)] - centers[(k, d)]).powi(2)).sum()
}

fn lloyd(points: &DMatrix<f64>, mut centers: DMatrix<f64>) -> KMeansResult {
    let (n, dims) = points.shape();
    let k = centers.nrows();
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut wcss = 0.0;
        for i in 0..n {
            let (best, d) = (0..k)
                .map(|c| (c, dist2(points, i, &centers, c)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            changed |= assignments[i] != best;
            assignments[i] = best;
            wcss += d;
        }
        history.push(wcss);
        if !changed {
            break;
        }
        let mut counts = vec![0usize; k];
        let mut sums = DMatrix::<f64>::zeros(k, dims);
        for i in 0..n {
            counts[assignments[i]] += 1;
            for d in 0..dims {
                sums[(assignments[i], d)] += points[(i, d)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dims {
                    centers[(c, d)] = sums[(c, d)] / counts[c] as f64;
                }
            }
        }
        // An empty cluster takes over the point worst served by its own centre.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .map(|i| (i, dist2(points, i, &centers, assignments[i])))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                for d in 0..dims {
                    centers[(c, d)] = points[(far, d)];
                }
                counts[assignments[far]] -= 1;
                assignments[far] = c;
                counts[c] = 1;
            }
        }
    }
    let wcss = (0..n).map(|i| dist2(points, i, &centers, assignments[i])).sum();
    KMeansResult { assignments, centers, wcss, history }
}

/// Lloyd's algorithm from `restarts` random choices of `k` distinct starting
/// points; the run with the smallest WCSS wins.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k-means needs 1 <= k <= {n} points, got k = {k}")));
    }
    if restarts == 0 {
        return Err(Error::InvalidInput("k-means needs at least one restart".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let start = sample(&mut rng, n, k);
        let centers = DMatrix::from_fn(k, points.ncols(), |c, d| points[(start.index(c), d)]);
        let run = lloyd(points, centers);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
