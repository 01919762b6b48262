use std::f64::consts::PI;
use std::fmt::Debug;

use ndarray::Array2;

/// A closed-form embedding of coordinates `u` (length `n`) into ambient
/// space (length `d`), with its analytic Jacobian and a left inverse.
pub trait Chart: Debug + Send + Sync {
    fn manifold_dim(&self) -> usize;
    fn ambient_dim(&self) -> usize;
    fn embed(&self, u: &[f64]) -> Vec<f64>;
    /// `d x n` Jacobian of [`Chart::embed`].
    fn jacobian(&self, u: &[f64]) -> Array2<f64>;
    /// Coordinates of the chart point associated with `x`; exact for points
    /// on the manifold.
    fn coordinates(&self, x: &[f64]) -> Vec<f64>;
}

/// `phi -> (cos phi, sin phi)`, with angles in `(-pi/2, 3pi/2]` so a
/// density centered at `pi/2` is never split by the branch cut.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnitCircle;

impl Chart for UnitCircle {
    fn manifold_dim(&self) -> usize {
        1
    }
    fn ambient_dim(&self) -> usize {
        2
    }
    fn embed(&self, u: &[f64]) -> Vec<f64> {
        vec![u[0].cos(), u[0].sin()]
    }
    fn jacobian(&self, u: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((2, 1), vec![-u[0].sin(), u[0].cos()]).unwrap()
    }
    fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        let phi = x[1].atan2(x[0]);
        vec![if phi <= -PI / 2.0 { phi + 2.0 * PI } else { phi }]
    }
}

/// `u -> u * direction`, a line through the origin.
#[derive(Clone, Debug)]
pub struct LinearChart {
    pub direction: Vec<f64>,
}

impl Chart for LinearChart {
    fn manifold_dim(&self) -> usize {
        1
    }
    fn ambient_dim(&self) -> usize {
        self.direction.len()
    }
    fn embed(&self, u: &[f64]) -> Vec<f64> {
        self.direction.iter().map(|a| a * u[0]).collect()
    }
    fn jacobian(&self, _u: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((self.direction.len(), 1), self.direction.clone()).unwrap()
    }
    fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        let dot: f64 = x.iter().zip(&self.direction).map(|(a, b)| a * b).sum();
        let norm2: f64 = self.direction.iter().map(|a| a * a).sum();
        vec![dot / norm2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_coordinates_round_trip() {
        for phi in [-1.2, 0.0, 1.0, PI / 2.0, 3.0, 4.5] {
            let x = UnitCircle.embed(&[phi]);
            let back = UnitCircle.coordinates(&x)[0];
            assert!((UnitCircle.embed(&[back])[0] - x[0]).abs() < 1e-14);
            assert!(back > -PI / 2.0 && back <= 1.5 * PI);
        }
    }

    #[test]
    fn linear_chart_left_inverse() {
        let c = LinearChart { direction: vec![1.0, 2.0] };
        assert_eq!(c.coordinates(&c.embed(&[0.7]))[0], 0.7);
    }
}
