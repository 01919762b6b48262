use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Pooled sets larger than this are thinned by a fixed stride before the
/// median pairwise distance is taken.
const MEDIAN_POINTS: usize = 2000;
const GRID_CHUNK: usize = 20_000;

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_sets(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InvalidArgument("sample sets must be non-empty".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension { what: "second sample set", expected: a.ncols(), got: b.ncols() });
    }
    Ok(())
}

/// Median of the pairwise distances within the pooled rows of `a` and `b`.
/// Falls back to the smallest positive distance, then to 1, when the
/// median is zero.
pub fn median_bandwidth(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_sets(a, b)?;
    let total = a.nrows() + b.nrows();
    let stride = total.div_ceil(MEDIAN_POINTS);
    let pooled: Vec<ArrayView1<f64>> = a.rows().into_iter().chain(b.rows()).step_by(stride).collect();
    let mut d: Vec<f64> = (0..pooled.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let pooled = &pooled;
            (i + 1..pooled.len()).map(move |j| sq_dist(pooled[i], pooled[j]).sqrt())
        })
        .collect();
    if d.is_empty() {
        return Ok(1.0);
    }
    if d.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("sample coordinates".into()));
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let mut median = *m;
    if d.len() % 2 == 0 {
        let below = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        median = 0.5 * (median + below);
    }
    if median > 0.0 {
        return Ok(median);
    }
    Ok(d.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min).min(1.0))
}

fn mean_kernel(a: &Array2<f64>, b: &Array2<f64>, inv: f64) -> f64 {
    let sum: f64 = (0..a.nrows())
        .into_par_iter()
        .map(|i| b.rows().into_iter().map(|r| (-sq_dist(a.row(i), r) * inv).exp()).sum::<f64>())
        .sum();
    sum / (a.nrows() * b.nrows()) as f64
}

/// Squared maximum mean discrepancy (biased V-statistic) with the Gaussian
/// kernel `exp(-|a - b|^2 / (2 h^2))`. Without an explicit bandwidth `h`
/// the median heuristic is used. Rows are samples.
pub fn mmd(a: &Array2<f64>, b: &Array2<f64>, bandwidth: Option<f64>) -> Result<f64> {
    check_sets(a, b)?;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::InvalidArgument(format!("bandwidth {h} must be positive"))),
        None => median_bandwidth(a, b)?,
    };
    let inv = 1.0 / (2.0 * h * h);
    let value = mean_kernel(a, a, inv) + mean_kernel(b, b, inv) - 2.0 * mean_kernel(a, b, inv);
    // the kernel is positive definite; only rounding can push the sum below zero
    Ok(value.max(0.0))
}

/// Probability that a random out-of-distribution score exceeds a random
/// in-distribution score, ties counting one half.
pub fn ood_auc(scores_in: &[f64], scores_out: &[f64]) -> Result<f64> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return Err(Error::InvalidArgument("AUC needs non-empty score sets".into()));
    }
    if scores_in.iter().chain(scores_out).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let mut sorted = scores_in.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &s in scores_out {
        let below = sorted.partition_point(|v| *v < s);
        let not_above = sorted.partition_point(|v| *v <= s);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (scores_in.len() * scores_out.len()) as f64)
}

/// Scores of one sample set under a trained model.
#[derive(Clone, Debug, Default)]
pub struct OodScores {
    pub log_likelihood: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

/// AUCs with negative log-likelihood and with reconstruction error as the
/// outlier score, plus the larger of the two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OodAuc {
    pub likelihood: f64,
    pub reconstruction: f64,
    pub best: f64,
}

pub fn ood_auc_best(inliers: &OodScores, outliers: &OodScores) -> Result<OodAuc> {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    let likelihood = ood_auc(&neg(&inliers.log_likelihood), &neg(&outliers.log_likelihood))?;
    let reconstruction = ood_auc(&inliers.reconstruction, &outliers.reconstruction)?;
    Ok(OodAuc { likelihood, reconstruction, best: likelihood.max(reconstruction) })
}

/// Log of the Gaussian kernel density estimate built from the rows of
/// `samples`, evaluated at `theta`.
pub fn kde_log_posterior(samples: &Array2<f64>, theta: &[f64], bandwidth: f64) -> Result<f64> {
    if samples.nrows() == 0 {
        return Err(Error::InvalidArgument("kernel density estimate needs samples".into()));
    }
    if samples.ncols() != theta.len() {
        return Err(Error::Dimension { what: "evaluation point", expected: samples.ncols(), got: theta.len() });
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth {bandwidth} must be positive")));
    }
    let t = ArrayView1::from(theta);
    let exps: Vec<f64> = samples.rows().into_iter().map(|r| -0.5 * sq_dist(r, t) / (bandwidth * bandwidth)).collect();
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
    let norm = -0.5 * theta.len() as f64 * (2.0 * PI * bandwidth * bandwidth).ln();
    Ok(lse - (samples.nrows() as f64).ln() + norm)
}

/// Midpoint-rule integral of `exp(log_prob)` over a box split into
/// `resolution` cells per axis. `log_prob` receives batches of points as
/// rows and returns one value per row.
pub fn grid_normalization<F>(mut log_prob: F, bounds: &[(f64, f64)], resolution: usize) -> Result<f64>
where
    F: FnMut(&Array2<f64>) -> Result<Vec<f64>>,
{
    let dim = bounds.len();
    if dim == 0 || dim > 3 {
        return Err(Error::InvalidArgument(format!("quadrature supports 1 to 3 dimensions, got {dim}")));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    if bounds.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(Error::InvalidArgument(format!("empty integration box {bounds:?}")));
    }
    let widths: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / resolution as f64).collect();
    let cell: f64 = widths.iter().product();
    let total = resolution.pow(dim as u32);
    let mut sum = 0.0;
    for start in (0..total).step_by(GRID_CHUNK) {
        let end = (start + GRID_CHUNK).min(total);
        let points = Array2::from_shape_fn((end - start, dim), |(i, k)| {
            let idx = (start + i) / resolution.pow(k as u32) % resolution;
            bounds[k].0 + (idx as f64 + 0.5) * widths[k]
        });
        let values = log_prob(&points)?;
        if values.len() != points.nrows() {
            return Err(Error::Dimension { what: "log-density batch", expected: points.nrows(), got: values.len() });
        }
        sum += values.iter().map(|v| v.exp()).sum::<f64>();
    }
    Ok(sum * cell)
}

/// Mean of `distance` over the rows of `x`.
pub fn mean_distance(x: &Array2<f64>, distance: impl Fn(&[f64]) -> f64) -> f64 {
    let total: f64 = x.rows().into_iter().map(|r| distance(&r.to_vec())).sum();
    total / x.nrows().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rows: usize, cols: usize, shift: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| shift + rng.sample::<f64, _>(StandardNormal))
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn mmd_closed_forms() {
        let a = random(20, 2, 0.0, 1);
        assert_eq!(mmd(&a, &a, Some(0.7)).unwrap(), 0.0);
        let v = mmd(&array![[0.0]], &array![[1.0]], Some(1.0)).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-15);
        assert!((v - 0.7869).abs() < 1e-4);
    }

    #[test]
    fn mmd_matches_double_loop() {
        let a = random(50, 2, 0.0, 2);
        let b = random(50, 2, 0.5, 3);
        let h = 0.8;
        let k = |x: ArrayView1<f64>, y: ArrayView1<f64>| {
            let mut d2 = 0.0;
            for i in 0..x.len() {
                d2 += (x[i] - y[i]).powi(2);
            }
            (-d2 / (2.0 * h * h)).exp()
        };
        let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
        for i in 0..50 {
            for j in 0..50 {
                aa += k(a.row(i), a.row(j));
                bb += k(b.row(i), b.row(j));
                ab += k(a.row(i), b.row(j));
            }
        }
        let oracle = (aa + bb - 2.0 * ab) / 2500.0;
        assert!(close(mmd(&a, &b, Some(h)).unwrap(), oracle, 1e-12));
    }

    #[test]
    fn median_heuristic() {
        let a = array![[0.0], [1.0]];
        let b = array![[3.0]];
        // pairwise distances 1, 2, 3
        assert_eq!(median_bandwidth(&a, &b).unwrap(), 2.0);
        let same = array![[1.0], [1.0]];
        assert_eq!(median_bandwidth(&same, &same).unwrap(), 1.0);
        let far = random(30, 1, 3.0, 4);
        let near = random(30, 1, 0.0, 5);
        assert!(mmd(&near, &far, None).unwrap() > mmd(&near, &random(30, 1, 0.0, 6), None).unwrap());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(ood_auc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(ood_auc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        // 2.5 beats {1, 2}, 3.5 beats {1, 2, 3}: five of six pairs
        let auc = ood_auc(&[1.0, 2.0, 3.0], &[2.5, 3.5]).unwrap();
        assert_eq!(auc, brute_auc(&[1.0, 2.0, 3.0], &[2.5, 3.5]));
        assert!((auc - 5.0 / 6.0).abs() < 1e-15);
        assert!(ood_auc(&[], &[1.0]).is_err());
        let best = ood_auc_best(
            &OodScores { log_likelihood: vec![0.0, -1.0], reconstruction: vec![0.5, 0.6] },
            &OodScores { log_likelihood: vec![-5.0, -6.0], reconstruction: vec![0.5, 0.6] },
        )
        .unwrap();
        assert_eq!(best, OodAuc { likelihood: 1.0, reconstruction: 0.5, best: 1.0 });
    }

    fn brute_auc(a: &[f64], b: &[f64]) -> f64 {
        let mut wins = 0.0;
        for x in a {
            for y in b {
                wins += if y > x { 1.0 } else if y == x { 0.5 } else { 0.0 };
            }
        }
        wins / (a.len() * b.len()) as f64
    }

    proptest! {
        #[test]
        fn auc_matches_pairs_and_is_monotone_invariant(
            a in prop::collection::vec(-5i32..5, 1..30),
            b in prop::collection::vec(-5i32..5, 1..30),
            scale in 0.1f64..10.0,
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let auc = ood_auc(&a, &b).unwrap();
            prop_assert!((auc - brute_auc(&a, &b)).abs() < 1e-12);
            let g = |v: &[f64]| v.iter().map(|x| (scale * x).exp() + x.powi(3)).collect::<Vec<_>>();
            prop_assert_eq!(ood_auc(&g(&a), &g(&b)).unwrap(), auc);
        }
    }

    #[test]
    fn kde_closed_form_and_oracle() {
        let single = kde_log_posterior(&array![[0.3]], &[0.3], 0.1).unwrap();
        assert!((single - (1.0 / ((2.0 * PI).sqrt() * 0.1)).ln()).abs() < 1e-14);
        assert!((single - 1.3836).abs() < 1e-4);

        let chain = random(200, 2, 0.0, 7);
        let t = [0.2, -0.1];
        let h = 0.3;
        let mut sum = 0.0;
        for r in chain.rows() {
            let d2 = (r[0] - t[0]).powi(2) + (r[1] - t[1]).powi(2);
            sum += (-d2 / (2.0 * h * h)).exp() / (2.0 * PI * h * h);
        }
        let oracle = (sum / 200.0).ln();
        assert!(close(kde_log_posterior(&chain, &t, h).unwrap(), oracle, 1e-12));

        let shifted = chain.mapv(|v| v + 4.0);
        let moved = kde_log_posterior(&shifted, &[4.2, 3.9], h).unwrap();
        assert!((moved - oracle).abs() < 1e-12);
    }

    #[test]
    fn grid_normalizes_known_densities() {
        let normal = |p: &Array2<f64>| -> Result<Vec<f64>> {
            Ok(p.rows().into_iter().map(|r| -0.5 * (r[0] * r[0] + r[1] * r[1]) - (2.0 * PI).ln()).collect())
        };
        let z = grid_normalization(normal, &[(-6.0, 6.0), (-6.0, 6.0)], 400).unwrap();
        assert!((z - 1.0).abs() < 0.005, "{z}");

        let bounds = [(-1.0, 2.0), (0.0, 0.5), (3.0, 4.0)];
        let log_vol = (3.0f64 * 0.5).ln();
        let uniform = |p: &Array2<f64>| -> Result<Vec<f64>> { Ok(vec![-log_vol; p.nrows()]) };
        assert!((grid_normalization(uniform, &bounds, 30).unwrap() - 1.0).abs() < 1e-12);
        let four = [(0.0, 1.0); 4];
        assert!(grid_normalization(|p: &Array2<f64>| Ok(vec![0.0; p.nrows()]), &four, 2).is_err());
    }
}
