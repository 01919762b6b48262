use std::f64::consts::PI;

use ndarray::{array, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::models::Chart;
use crate::ndiff::invert;

/// Rotation as printed (three decimals, not exactly orthogonal).
pub const PRINTED_ROTATION: [[f64; 3]; 3] = [
    [0.974, -0.227, -0.009],
    [0.227, 0.973, 0.040],
    [0.000, -0.041, 0.999],
];

/// `(power of z0, power of z1, coefficient)` of the height polynomial.
pub const SURFACE_COEFFICIENTS: [(i32, i32, f64); 21] = [
    (0, 0, -1.217),
    (1, 0, 1.522),
    (0, 1, -1.214),
    (2, 0, 0.057),
    (1, 1, -0.024),
    (0, 2, -0.047),
    (3, 0, -0.056),
    (2, 1, -0.008),
    (1, 2, -0.057),
    (0, 3, -0.052),
    (4, 0, 0.014),
    (3, 1, 0.000),
    (2, 2, -0.007),
    (1, 3, -0.007),
    (0, 4, 0.003),
    (5, 0, -0.008),
    (4, 1, -0.011),
    (3, 2, 0.004),
    (2, 3, -0.005),
    (1, 4, -0.009),
    (0, 5, 0.012),
];

/// Damping rate of the `exp(-rate |z|)` envelope.
pub const DAMPING: f64 = 0.1;

/// Nearest orthogonal matrix (polar factor) by Newton iteration
/// `X <- (X + X^-T) / 2`.
pub fn nearest_orthogonal(m: &Array2<f64>) -> Result<Array2<f64>> {
    let mut x = m.clone();
    for _ in 0..100 {
        let inv_t = invert(&x)?.reversed_axes();
        let next = (&x + &inv_t) * 0.5;
        let change = (&next - &x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        x = next;
        if change < 1e-15 {
            break;
        }
    }
    Ok(x)
}

/// A 2-d height-field manifold `x = R (z0, z1, f(z))` in three dimensions.
#[derive(Clone, Debug)]
pub struct SurfaceSpec {
    pub rotation: Array2<f64>,
    pub coefficients: Vec<(i32, i32, f64)>,
    pub damping: f64,
}

impl Default for SurfaceSpec {
    /// The fixed surface of the mixture experiment, with the printed
    /// rotation projected onto the orthogonal group.
    fn default() -> Self {
        let printed = Array2::from_shape_fn((3, 3), |(i, j)| PRINTED_ROTATION[i][j]);
        Self {
            rotation: nearest_orthogonal(&printed).expect("printed rotation is invertible"),
            coefficients: SURFACE_COEFFICIENTS.to_vec(),
            damping: DAMPING,
        }
    }
}

impl SurfaceSpec {
    fn polynomial(&self, z: [f64; 2]) -> (f64, [f64; 2]) {
        let mut p = 0.0;
        let mut grad = [0.0; 2];
        for &(i, j, a) in &self.coefficients {
            p += a * z[0].powi(i) * z[1].powi(j);
            if i > 0 {
                grad[0] += a * i as f64 * z[0].powi(i - 1) * z[1].powi(j);
            }
            if j > 0 {
                grad[1] += a * j as f64 * z[0].powi(i) * z[1].powi(j - 1);
            }
        }
        (p, grad)
    }

    /// Height `f(z)` and its gradient.
    pub fn height(&self, z: [f64; 2]) -> (f64, [f64; 2]) {
        let (p, gp) = self.polynomial(z);
        let norm = z[0].hypot(z[1]);
        let env = (-self.damping * norm).exp();
        let dnorm = if norm > 0.0 { [z[0] / norm, z[1] / norm] } else { [0.0, 0.0] };
        let grad = [
            env * (gp[0] - self.damping * p * dnorm[0]),
            env * (gp[1] - self.damping * p * dnorm[1]),
        ];
        (env * p, grad)
    }

    /// Undamped polynomial part of the height.
    pub fn polynomial_height(&self, z: [f64; 2]) -> f64 {
        self.polynomial(z).0
    }

    pub fn chart(&self, z: [f64; 2]) -> [f64; 3] {
        let v = array![z[0], z[1], self.height(z).0];
        let x = self.rotation.dot(&v);
        [x[0], x[1], x[2]]
    }

    /// Coordinates in the unrotated frame, `Rᵀ x`.
    pub fn unrotate(&self, x: [f64; 3]) -> [f64; 3] {
        let v = self.rotation.t().dot(&array![x[0], x[1], x[2]]);
        [v[0], v[1], v[2]]
    }

    /// Vertical distance to the surface in the unrotated frame.
    pub fn distance(&self, x: [f64; 3]) -> f64 {
        let z = self.unrotate(x);
        (self.height([z[0], z[1]]).0 - z[2]).abs()
    }
}

impl Chart for SurfaceSpec {
    fn manifold_dim(&self) -> usize {
        2
    }
    fn ambient_dim(&self) -> usize {
        3
    }
    fn embed(&self, u: &[f64]) -> Vec<f64> {
        self.chart([u[0], u[1]]).to_vec()
    }
    fn jacobian(&self, u: &[f64]) -> Array2<f64> {
        let (_, g) = self.height([u[0], u[1]]);
        let local = array![[1.0, 0.0], [0.0, 1.0], [g[0], g[1]]];
        self.rotation.dot(&local)
    }
    fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        let z = self.unrotate([x[0], x[1], x[2]]);
        vec![z[0], z[1]]
    }
}

/// Width of the second mixture component.
pub fn second_component_std(theta: f64) -> f64 {
    0.6 + 0.4 * theta
}

/// Latent mixture density `p(z | theta)`.
pub fn mixture_density(z: [f64; 2], theta: f64) -> f64 {
    let iso = |mean: [f64; 2], s: f64| {
        let d2 = (z[0] - mean[0]).powi(2) + (z[1] - mean[1]).powi(2);
        (-0.5 * d2 / (s * s)).exp() / (2.0 * PI * s * s)
    };
    0.6 * iso([1.0, -1.0], 2.0) + 0.4 * iso([-1.0, 1.0], second_component_std(theta))
}

/// Where the conditioning parameter of each sample comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThetaSource {
    Fixed(f64),
    /// Uniform on `[-1, 1]`, one draw per sample.
    Prior,
}

fn check_theta(theta: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta = {theta} lies outside the prior support [-1, 1]")));
    }
    Ok(())
}

/// Draws a latent point; returns it with the index of the component used.
pub fn sample_mixture<R: Rng>(theta: f64, rng: &mut R) -> ([f64; 2], usize) {
    let (mean, s, k) = if rng.random::<f64>() < 0.6 {
        ([1.0, -1.0], 2.0, 0)
    } else {
        ([-1.0, 1.0], second_component_std(theta), 1)
    };
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    ([mean[0] + s * a, mean[1] + s * b], k)
}

/// Surface samples with their parameters and latent coordinates.
pub fn sample_surface<R: Rng>(spec: &SurfaceSpec, count: usize, theta: ThetaSource, rng: &mut R) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if let ThetaSource::Fixed(t) = theta {
        check_theta(t)?;
    }
    let mut x = Array2::zeros((count, 3));
    let mut th = Array2::zeros((count, 1));
    let mut z = Array2::zeros((count, 2));
    for i in 0..count {
        let t = match theta {
            ThetaSource::Fixed(t) => t,
            ThetaSource::Prior => rng.random_range(-1.0..=1.0),
        };
        let (zi, _) = sample_mixture(t, rng);
        let xi = spec.chart(zi);
        for k in 0..3 {
            x[[i, k]] = xi[k];
        }
        th[[i, 0]] = t;
        z[[i, 0]] = zi[0];
        z[[i, 1]] = zi[1];
    }
    Ok(Dataset { x, theta: Some(th), z: Some(z) })
}

/// Adds isotropic Gaussian noise, the off-manifold construction used for
/// out-of-distribution scoring.
pub fn add_noise<R: Rng>(x: &Array2<f64>, std: f64, rng: &mut R) -> Array2<f64> {
    let noise = Normal::new(0.0, std).expect("valid");
    x.mapv(|v| v + noise.sample(rng))
}
