//! Monotonic rational-quadratic splines with identity tails.
//!
//! On `[-B, B]` the map is piecewise rational-quadratic through `K + 1`
//! knots; outside it is the identity, and the boundary derivatives are fixed
//! to one so the pieces join smoothly. Two implementations live here: a
//! plain scalar one ([`rq_spline_elementwise`]) and a batched one built from
//! differentiable tape ops, used inside coupling layers.

use std::rc::Rc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ndiff::{Jet, Var};

pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Softplus offset that maps a zero raw derivative to exactly one.
fn derivative_shift() -> f64 {
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

/// Knot data for one scalar spline.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineParams {
    pub bound: f64,
    /// Bin widths, positive, summing to `2 * bound`.
    pub widths: Vec<f64>,
    /// Bin heights, positive, summing to `2 * bound`.
    pub heights: Vec<f64>,
    /// Derivatives at all `K + 1` knots, positive.
    pub derivatives: Vec<f64>,
}

impl SplineParams {
    /// Equal bins and unit derivatives: the identity map.
    pub fn identity(bins: usize, bound: f64) -> Self {
        let w = 2.0 * bound / bins as f64;
        Self {
            bound,
            widths: vec![w; bins],
            heights: vec![w; bins],
            derivatives: vec![1.0; bins + 1],
        }
    }

    /// Builds knots from unconstrained conditioner outputs, using the same
    /// parameterization as the coupling layers.
    pub fn from_unnormalized(uw: &[f64], uh: &[f64], ud: &[f64], bound: f64) -> Self {
        let k = uw.len();
        assert_eq!(uh.len(), k);
        assert_eq!(ud.len(), k - 1);
        let norm = |u: &[f64], min: f64| -> Vec<f64> {
            let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let frac: Vec<f64> = e.iter().map(|v| min + (1.0 - min * k as f64) * v / z).collect();
            // knots by cumulative sum, widths as knot differences
            let mut knots = vec![-bound];
            let mut acc = 0.0;
            for f in &frac {
                acc += f;
                knots.push(2.0 * bound * acc - bound);
            }
            knots.windows(2).map(|w| w[1] - w[0]).collect()
        };
        let shift = derivative_shift();
        let mut derivatives = vec![1.0];
        derivatives.extend(ud.iter().map(|v| MIN_DERIVATIVE + crate::ndiff::softplus_f64(v + shift)));
        derivatives.push(1.0);
        Self {
            bound,
            widths: norm(uw, MIN_BIN_WIDTH),
            heights: norm(uh, MIN_BIN_HEIGHT),
            derivatives,
        }
    }

    pub fn bins(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.widths.len();
        if k == 0 || self.heights.len() != k || self.derivatives.len() != k + 1 {
            return Err(Error::SplineParams(format!(
                "inconsistent lengths: {} widths, {} heights, {} derivatives",
                k,
                self.heights.len(),
                self.derivatives.len()
            )));
        }
        if !(self.bound > 0.0) {
            return Err(Error::SplineParams(format!("bound must be positive, got {}", self.bound)));
        }
        let check = |v: &[f64], what: &str| -> Result<()> {
            if let Some(bad) = v.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
                return Err(Error::SplineParams(format!("non-positive {what}: {bad}")));
            }
            Ok(())
        };
        check(&self.widths, "bin width")?;
        check(&self.heights, "bin height")?;
        check(&self.derivatives, "knot derivative")?;
        let span = 2.0 * self.bound;
        for (v, what) in [(&self.widths, "widths"), (&self.heights, "heights")] {
            let sum: f64 = v.iter().sum();
            if (sum - span).abs() > 1e-9 * span.max(1.0) {
                return Err(Error::SplineParams(format!("{what} sum to {sum}, expected {span}")));
            }
        }
        Ok(())
    }

    fn knots(v: &[f64], bound: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(v.len() + 1);
        let mut acc = -bound;
        out.push(acc);
        for w in v {
            acc += w;
            out.push(acc);
        }
        *out.last_mut().unwrap() = bound;
        out
    }

    fn bin(knots: &[f64], x: f64) -> usize {
        let k = knots.len() - 1;
        knots[1..k].iter().filter(|&&t| t <= x).count()
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        let xs = Self::knots(&self.widths, self.bound);
        let ys = Self::knots(&self.heights, self.bound);
        let k = Self::bin(&xs, x);
        let (w, h) = (self.widths[k], self.heights[k]);
        let (d0, d1) = (self.derivatives[k], self.derivatives[k + 1]);
        let s = h / w;
        let xi = (x - xs[k]) / w;
        let xi1 = xi * (1.0 - xi);
        let den = s + (d1 + d0 - 2.0 * s) * xi1;
        let y = ys[k] + h * (s * xi * xi + d0 * xi1) / den;
        let dnum = s * s * (d1 * xi * xi + 2.0 * s * xi1 + d0 * (1.0 - xi) * (1.0 - xi));
        (y, dnum.ln() - 2.0 * den.ln())
    }

    fn eval_inverse(&self, y: f64) -> (f64, f64) {
        let xs = Self::knots(&self.widths, self.bound);
        let ys = Self::knots(&self.heights, self.bound);
        let k = Self::bin(&ys, y);
        let (w, h) = (self.widths[k], self.heights[k]);
        let (d0, d1) = (self.derivatives[k], self.derivatives[k + 1]);
        let s = h / w;
        let dy = y - ys[k];
        let c2 = d1 + d0 - 2.0 * s;
        let a = h * (s - d0) + dy * c2;
        let b = h * d0 - dy * c2;
        let c = -s * dy;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        let xi = 2.0 * c / (-b - disc.sqrt());
        let x = xi * w + xs[k];
        let xi1 = xi * (1.0 - xi);
        let den = s + c2 * xi1;
        let dnum = s * s * (d1 * xi * xi + 2.0 * s * xi1 + d0 * (1.0 - xi) * (1.0 - xi));
        (x, -(dnum.ln() - 2.0 * den.ln()))
    }

    /// Inverse map; returns the log-derivative of the inverse.
    pub fn inverse(&self, y: f64) -> Result<(f64, f64)> {
        self.validate()?;
        if y < -self.bound || y > self.bound {
            return Ok((y, 0.0));
        }
        Ok(self.eval_inverse(y))
    }
}

/// Applies the spline to one value; returns `(output, log |d out / d in|)`.
pub fn rq_spline_elementwise(value: f64, knots: &SplineParams) -> Result<(f64, f64)> {
    knots.validate()?;
    if value < -knots.bound || value > knots.bound {
        return Ok((value, 0.0));
    }
    Ok(knots.eval(value))
}

/// Unconstrained spline parameters for one transformed column, as tape
/// values of shape (batch, K), (batch, K) and (batch, K - 1).
pub(crate) struct RawSpline<'a> {
    pub widths: &'a Jet,
    pub heights: &'a Jet,
    pub derivatives: &'a Jet,
}

struct Knots {
    // (batch, K + 1) knot positions and (batch, K) bin sizes
    pos: Jet,
    size: Jet,
}

fn knots_tape(raw: &Jet, min: f64, bound: f64) -> Knots {
    let (rows, k) = raw.shape();
    let frac = raw.softmax_rows().scale(1.0 - min * k as f64).offset(min);
    let cum = frac.cumsum_cols().scale(2.0 * bound).offset(-bound);
    let left = Jet::constant(Array2::from_elem((rows, 1), -bound));
    let pos = Jet::concat_cols(&[&left, &cum]);
    let size = pos.slice_cols(1, k + 1).sub(&pos.slice_cols(0, k));
    Knots { pos, size }
}

fn bin_indices(pos: &Array2<f64>, x: &Array2<f64>) -> Vec<usize> {
    let k = pos.ncols() - 1;
    (0..pos.nrows())
        .map(|i| {
            let v = x[[i, 0]];
            (1..k).filter(|&j| pos[[i, j]] <= v).count()
        })
        .collect()
}

/// Batched spline on a (batch, 1) column. Returns the mapped column and the
/// elementwise log-derivative of the applied direction.
pub(crate) fn rq_spline_tape(x: &Jet, raw: &RawSpline<'_>, bound: f64, inverse: bool) -> (Jet, Var) {
    let rows = x.rows();
    let k = raw.widths.cols();
    let w = knots_tape(raw.widths, MIN_BIN_WIDTH, bound);
    let h = knots_tape(raw.heights, MIN_BIN_HEIGHT, bound);
    let ones = Jet::constant(Array2::ones((rows, 1)));
    let inner = raw.derivatives.offset(derivative_shift()).softplus().offset(MIN_DERIVATIVE);
    let derivs = Jet::concat_cols(&[&ones, &inner, &ones]);

    let inside: Rc<Array2<bool>> = x.mask(|v| (-bound..=bound).contains(&v));
    let zeros = Jet::constant(Array2::zeros((rows, 1)));
    let x_in = Jet::select(&inside, x, &zeros);

    let search = if inverse { &h.pos } else { &w.pos };
    let idx = bin_indices(search.value(), x_in.value());
    let idx1: Vec<usize> = idx.iter().map(|i| i + 1).collect();
    debug_assert!(idx.iter().all(|&i| i < k));

    let xk = w.pos.gather_rows(&idx);
    let wk = w.size.gather_rows(&idx);
    let yk = h.pos.gather_rows(&idx);
    let hk = h.size.gather_rows(&idx);
    let d0 = derivs.gather_rows(&idx);
    let d1 = derivs.gather_rows(&idx1);
    let s = hk.div(&wk);
    let c2 = d1.add(&d0).sub(&s.scale(2.0));

    let (out, xi) = if inverse {
        let dy = x_in.sub(&yk);
        let a = hk.mul(&s.sub(&d0)).add(&dy.mul(&c2));
        let b = hk.mul(&d0).sub(&dy.mul(&c2));
        let c = s.mul(&dy).neg();
        let disc = b.square().sub(&a.mul(&c).scale(4.0));
        // guard tiny negative round-off before the square root
        let disc_ok = disc.mask(|v| v > 0.0);
        let disc = Jet::select(&disc_ok, &disc, &zeros);
        let xi = c.scale(2.0).div(&b.neg().sub(&disc.sqrt()));
        (xi.mul(&wk).add(&xk), xi)
    } else {
        let xi = x_in.sub(&xk).div(&wk);
        let xi1 = xi.mul(&xi.neg().offset(1.0));
        let num = hk.mul(&s.mul(&xi.square()).add(&d0.mul(&xi1)));
        let den = s.add(&c2.mul(&xi1));
        (yk.add(&num.div(&den)), xi)
    };

    let one_minus = xi.neg().offset(1.0);
    let xi1 = xi.mul(&one_minus);
    let den = s.add(&c2.mul(&xi1));
    let dnum = s
        .square()
        .mul(&d1.mul(&xi.square()).add(&s.mul(&xi1).scale(2.0)).add(&d0.mul(&one_minus.square())));
    let mut logd = dnum.val.ln().sub(&den.val.ln().scale(2.0));
    if inverse {
        logd = logd.neg();
    }
    let zero_v = Var::constant(Array2::zeros((rows, 1)));
    let logd = Var::select(&inside, &logd, &zero_v);
    (Jet::select(&inside, &out, x), logd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_knots(rng: &mut ChaCha8Rng, k: usize, bound: f64) -> SplineParams {
        let uw: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let uh: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ud: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
        SplineParams::from_unnormalized(&uw, &uh, &ud, bound)
    }

    #[test]
    fn identity_knots_are_identity() {
        let knots = SplineParams::identity(10, 6.0);
        let (y, ld) = rq_spline_elementwise(0.3, &knots).unwrap();
        assert!((y - 0.3).abs() < 1e-14);
        assert!(ld.abs() < 1e-14);
        let (y, ld) = rq_spline_elementwise(0.7, &knots).unwrap();
        assert!((y - 0.7).abs() < 1e-14 && ld.abs() < 1e-14);
    }

    #[test]
    fn tails_are_identity() {
        let knots = SplineParams::identity(10, 6.0);
        assert_eq!(rq_spline_elementwise(7.0, &knots).unwrap(), (7.0, 0.0));
        assert_eq!(knots.inverse(-9.5).unwrap(), (-9.5, 0.0));
    }

    #[test]
    fn single_bin_scale_two_segment_round_trips() {
        // one bin over [-1, 1] with slope-2 ends is not a linear map, but any
        // valid knot set must invert exactly
        let knots = SplineParams {
            bound: 1.0,
            widths: vec![2.0],
            heights: vec![2.0],
            derivatives: vec![2.0, 2.0],
        };
        for &x in &[-0.9, -0.3, 0.0, 0.41, 0.99] {
            let (y, ld) = rq_spline_elementwise(x, &knots).unwrap();
            let (back, ild) = knots.inverse(y).unwrap();
            assert!((back - x).abs() < 1e-10, "{x} -> {y} -> {back}");
            assert!((ld + ild).abs() < 1e-10);
        }
    }

    #[test]
    fn non_monotone_knots_rejected() {
        let mut knots = SplineParams::identity(4, 2.0);
        knots.derivatives[2] = -0.5;
        assert!(matches!(rq_spline_elementwise(0.1, &knots), Err(Error::SplineParams(_))));
        let mut knots = SplineParams::identity(4, 2.0);
        knots.widths[0] = -1.0;
        knots.widths[1] += 2.0;
        assert!(matches!(rq_spline_elementwise(0.1, &knots), Err(Error::SplineParams(_))));
    }

    #[test]
    fn random_knots_derivative_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let knots = random_knots(&mut rng, 8, 3.0);
            let x: f64 = rng.random_range(-2.9..2.9);
            let (_, ld) = rq_spline_elementwise(x, &knots).unwrap();
            let h = 1e-6;
            let up = rq_spline_elementwise(x + h, &knots).unwrap().0;
            let down = rq_spline_elementwise(x - h, &knots).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - ld.exp()).abs() < 1e-6 * fd.abs().max(1.0), "fd {fd} vs {}", ld.exp());
        }
    }

    #[test]
    fn tape_spline_matches_scalar_spline() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (k, bound, rows) = (6, 2.5, 40);
        let uw = Array2::from_shape_fn((rows, k), |_| rng.random_range(-2.0..2.0));
        let uh = Array2::from_shape_fn((rows, k), |_| rng.random_range(-2.0..2.0));
        let ud = Array2::from_shape_fn((rows, k - 1), |_| rng.random_range(-2.0..2.0));
        let x = Array2::from_shape_fn((rows, 1), |_| rng.random_range(-3.5..3.5));
        let (uwj, uhj, udj) = (Jet::constant(uw.clone()), Jet::constant(uh.clone()), Jet::constant(ud.clone()));
        let raw = RawSpline { widths: &uwj, heights: &uhj, derivatives: &udj };
        let (y, ld) = rq_spline_tape(&Jet::constant(x.clone()), &raw, bound, false);
        let (back, ild) = rq_spline_tape(&y, &raw, bound, true);
        for i in 0..rows {
            let knots = SplineParams::from_unnormalized(
                uw.row(i).as_slice().unwrap(),
                uh.row(i).as_slice().unwrap(),
                ud.row(i).as_slice().unwrap(),
                bound,
            );
            let (ys, lds) = rq_spline_elementwise(x[[i, 0]], &knots).unwrap();
            assert!((ys - y.value()[[i, 0]]).abs() < 1e-12);
            assert!((lds - ld.value()[[i, 0]]).abs() < 1e-10);
            assert!((back.value()[[i, 0]] - x[[i, 0]]).abs() < 1e-10);
            assert!((ld.value()[[i, 0]] + ild.value()[[i, 0]]).abs() < 1e-9);
        }
    }
}
