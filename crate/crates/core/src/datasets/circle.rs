use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const ANGLE_MEAN: f64 = PI / 2.0;
pub const ANGLE_STD: f64 = PI / 4.0;
pub const RADIUS_MEAN: f64 = 1.0;
pub const RADIUS_STD: f64 = 0.01;

/// Points `r (cos phi, sin phi)` with Gaussian angle and radius.
pub fn sample_circle<R: Rng>(count: usize, rng: &mut R) -> Result<Array2<f64>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let angle = Normal::new(ANGLE_MEAN, ANGLE_STD).expect("valid");
    let radius = Normal::new(RADIUS_MEAN, RADIUS_STD).expect("valid");
    let mut out = Array2::zeros((count, 2));
    for mut row in out.rows_mut() {
        let phi = angle.sample(rng);
        let r = radius.sample(rng);
        row[0] = r * phi.cos();
        row[1] = r * phi.sin();
    }
    Ok(out)
}

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

/// Density of the generator at `x` in the plane. Angles are taken in
/// `(-pi/2, 3pi/2]`; the angular mass outside that window is below 1e-4.
pub fn circle_density(x: [f64; 2]) -> f64 {
    let r = x[0].hypot(x[1]);
    let mut phi = x[1].atan2(x[0]);
    if phi <= -PI / 2.0 {
        phi += 2.0 * PI;
    }
    normal_pdf(phi, ANGLE_MEAN, ANGLE_STD) * normal_pdf(r, RADIUS_MEAN, RADIUS_STD) / r
}

/// Density of the angle alone: the true density on the unit circle with
/// respect to arc length.
pub fn circle_angle_density(phi: f64) -> f64 {
    normal_pdf(phi, ANGLE_MEAN, ANGLE_STD)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radius_and_angle_moments() {
        let n = 100_000;
        let xs = sample_circle(n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let r_mean = xs.rows().into_iter().map(|r| r[0].hypot(r[1])).sum::<f64>() / n as f64;
        assert!((r_mean - 1.0).abs() < 3.0 * RADIUS_STD / (n as f64).sqrt());
        let phi_mean = xs
            .rows()
            .into_iter()
            .map(|r| {
                let p = r[1].atan2(r[0]);
                if p <= -PI / 2.0 { p + 2.0 * PI } else { p }
            })
            .sum::<f64>()
            / n as f64;
        assert!((phi_mean - ANGLE_MEAN).abs() < 3.0 * ANGLE_STD / (n as f64).sqrt());
    }

    #[test]
    fn density_at_top_of_circle() {
        let p = circle_density([0.0, 1.0]);
        let expected = 1.0 / ((2.0 * PI).sqrt() * ANGLE_STD) * 1.0 / ((2.0 * PI).sqrt() * RADIUS_STD);
        assert!((p - expected).abs() < 1e-10);
        assert!((p - 20.26).abs() < 0.01);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(sample_circle(0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
