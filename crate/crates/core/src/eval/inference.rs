use std::f64::consts::PI;

use ndarray::Array2;

use crate::datasets::{second_component_std, SurfaceSpec};
use crate::error::{Error, Result};
use crate::models::{Chart, ManifoldFlow};

/// Exact likelihood of observed surface points under the latent mixture,
/// pushed onto the surface. Chart coordinates and Gram volumes are computed
/// once; only the mixture is re-evaluated per parameter value.
#[derive(Clone, Debug)]
pub struct SurfaceLikelihood {
    latents: Vec<[f64; 2]>,
    /// Sum over points of `-0.5 log det(J^T J)`.
    volume: f64,
}

impl SurfaceLikelihood {
    pub fn new(spec: &SurfaceSpec, x: &Array2<f64>) -> Result<Self> {
        if x.ncols() != 3 {
            return Err(Error::Dimension { what: "surface observations", expected: 3, got: x.ncols() });
        }
        let mut latents = Vec::with_capacity(x.nrows());
        let mut volume = 0.0;
        for row in x.rows() {
            let z = spec.coordinates(&row.to_vec());
            let j = spec.jacobian(&z);
            let g = j.t().dot(&j);
            let det = g[[0, 0]] * g[[1, 1]] - g[[0, 1]] * g[[1, 0]];
            if !(det > 0.0) {
                return Err(Error::DegenerateGram { pivot: det });
            }
            volume -= 0.5 * det.ln();
            latents.push([z[0], z[1]]);
        }
        Ok(Self { latents, volume })
    }

    /// Total log-likelihood with the second mixture component of width `std`.
    pub fn with_std(&self, std: f64) -> f64 {
        let log_iso = |z: [f64; 2], mean: [f64; 2], s: f64| {
            let d2 = (z[0] - mean[0]).powi(2) + (z[1] - mean[1]).powi(2);
            -0.5 * d2 / (s * s) - (2.0 * PI * s * s).ln()
        };
        let mut total = self.volume;
        for &z in &self.latents {
            let a = 0.6f64.ln() + log_iso(z, [1.0, -1.0], 2.0);
            let b = 0.4f64.ln() + log_iso(z, [-1.0, 1.0], std);
            let m = a.max(b);
            total += m + ((a - m).exp() + (b - m).exp()).ln();
        }
        total
    }

    /// Total log-likelihood at parameter `theta`.
    pub fn at(&self, theta: f64) -> f64 {
        self.with_std(second_component_std(theta))
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

/// Log-likelihood of `x` as a function of the context, up to an additive
/// constant, under a conditional model. Models whose manifold ignores the
/// context use Gram-free likelihood ratios against the zero context;
/// others evaluate full densities.
pub fn flow_log_likelihood<'a>(
    model: &'a ManifoldFlow,
    x: &'a Array2<f64>,
) -> Result<impl FnMut(&[f64]) -> Result<f64> + 'a> {
    if model.context_dim == 0 {
        return Err(Error::InvalidArgument("posterior inference needs a conditional model".into()));
    }
    if x.ncols() != model.d {
        return Err(Error::Dimension { what: "observations", expected: model.d, got: x.ncols() });
    }
    let k = model.context_dim;
    let rows = x.nrows();
    let ratio = model.variant.has_learned_manifold() && !model.manifold_conditional;
    let reference = Array2::<f64>::zeros((rows, k));
    Ok(move |theta: &[f64]| -> Result<f64> {
        if theta.len() != k {
            return Err(Error::Dimension { what: "parameter", expected: k, got: theta.len() });
        }
        let ctx = Array2::from_shape_fn((rows, k), |(_, j)| theta[j]);
        let values = if ratio {
            model.conditional_log_ratio(x, &ctx, &reference)?
        } else {
            model.log_prob(x, Some(&ctx))?.log_prob
        };
        Ok(values.iter().sum())
    })
}
