use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Scores `x` under a one-dimensional model: a line through the origin at
/// angle `alpha` carrying `N(0, sigma²)`. Returns the log-likelihood of
/// the projected coordinate (ignoring the Jacobian of the projection) and
/// the distance from `x` to the line.
pub fn line_toy(alpha: f64, sigma: f64, x: [f64; 2]) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let dir = [alpha.cos(), alpha.sin()];
    let u = x[0] * dir[0] + x[1] * dir[1];
    let loglik = -0.5 * (u / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * PI).ln();
    let recon = (x[0] - u * dir[0]).hypot(x[1] - u * dir[1]);
    Ok((loglik, recon))
}

/// Samples from the line model with angle `alpha` and scale `sigma`.
pub fn sample_line<R: Rng>(count: usize, alpha: f64, sigma: f64, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((count, 2));
    for mut row in out.rows_mut() {
        let u: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
        row[0] = u * alpha.cos();
        row[1] = u * alpha.sin();
    }
    out
}

/// Mean naive log-likelihood and mean reconstruction error of a data set
/// on an `(alpha, sigma)` grid; entry `[i][j]` is `(alphas[i], sigmas[j])`.
#[derive(Clone, Debug)]
pub struct Landscape {
    pub alphas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub loglik: Array2<f64>,
    pub recon: Array2<f64>,
}

pub fn line_landscape(data: &Array2<f64>, alphas: &[f64], sigmas: &[f64]) -> Result<Landscape> {
    if data.ncols() != 2 || data.nrows() == 0 {
        return Err(Error::InvalidArgument("landscape needs a non-empty set of 2-d points".into()));
    }
    let mut loglik = Array2::zeros((alphas.len(), sigmas.len()));
    let mut recon = Array2::zeros((alphas.len(), sigmas.len()));
    let n = data.nrows() as f64;
    for (i, &a) in alphas.iter().enumerate() {
        for (j, &s) in sigmas.iter().enumerate() {
            let (mut ll, mut rc) = (0.0, 0.0);
            for row in data.rows() {
                let (l, r) = line_toy(a, s, [row[0], row[1]])?;
                ll += l;
                rc += r;
            }
            loglik[[i, j]] = ll / n;
            recon[[i, j]] = rc / n;
        }
    }
    Ok(Landscape { alphas: alphas.to_vec(), sigmas: sigmas.to_vec(), loglik, recon })
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_line() {
        let (ll, rc) = line_toy(PI / 2.0, 1.0, [0.0, 1.0]).unwrap();
        assert!((ll + 0.5 + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((ll + 1.4189).abs() < 1e-4);
        assert!(rc.abs() < 1e-15);
    }

    #[test]
    fn pathological_line_has_higher_likelihood() {
        let (ll, rc) = line_toy(0.01, 0.01, [0.0, 1.0]).unwrap();
        let u = 0.01f64.sin();
        let oracle = -0.5 * (u / 0.01).powi(2) - 0.01f64.ln() - 0.5 * (2.0 * PI).ln();
        assert!((ll - oracle).abs() < 1e-12);
        assert!((ll - 3.19).abs() < 0.01);
        assert!(ll > -1.4189);
        assert!((rc - 0.01f64.cos()).abs() < 1e-12);
        assert_eq!(line_toy(0.0, 1.0, [0.0, 1.0]).unwrap().1, 1.0);
        assert!(line_toy(0.0, 0.0, [0.0, 1.0]).is_err());
    }
}
