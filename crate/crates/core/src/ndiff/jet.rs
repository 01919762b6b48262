//! Forward tangents on top of the reverse tape.
//!
//! A [`Jet`] is a primal [`Var`] together with zero or more tangent
//! directions, each itself a `Var`. Tangent rules are written with tape ops,
//! so a Jacobian column obtained by pushing a tangent through a transform
//! stays differentiable with respect to every parameter the transform used
//! (forward-over-reverse). An empty tangent list means "all tangents are
//! zero", which is how parameters and data constants enter a computation.

use std::rc::Rc;

use ndarray::{Array2, Zip};

use super::tape::Var;

#[derive(Clone, Debug)]
pub struct Jet {
    pub val: Var,
    pub tan: Vec<Var>,
}

impl From<Var> for Jet {
    fn from(val: Var) -> Self {
        Jet { val, tan: Vec::new() }
    }
}

fn combine(
    a: &[Var],
    b: &[Var],
    both: impl Fn(&Var, &Var) -> Var,
    left: impl Fn(&Var) -> Var,
    right: impl Fn(&Var) -> Var,
) -> Vec<Var> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Vec::new(),
        (false, true) => a.iter().map(left).collect(),
        (true, false) => b.iter().map(right).collect(),
        (false, false) => {
            assert_eq!(a.len(), b.len(), "tangent counts differ");
            a.iter().zip(b).map(|(x, y)| both(x, y)).collect()
        }
    }
}

impl Jet {
    pub fn constant(value: Array2<f64>) -> Self {
        Var::constant(value).into()
    }

    pub fn with_tangents(val: Var, tan: Vec<Var>) -> Self {
        for t in &tan {
            assert_eq!(t.shape(), val.shape(), "tangent shape must equal value shape");
        }
        Jet { val, tan }
    }

    pub fn value(&self) -> &Array2<f64> {
        self.val.value()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.val.shape()
    }

    pub fn rows(&self) -> usize {
        self.val.rows()
    }

    pub fn cols(&self) -> usize {
        self.val.cols()
    }

    pub fn num_tangents(&self) -> usize {
        self.tan.len()
    }

    /// Drops the tangents, keeping the primal on the tape.
    pub fn primal(&self) -> Jet {
        self.val.clone().into()
    }

    fn map_tan(&self, f: impl Fn(&Var) -> Var) -> Vec<Var> {
        self.tan.iter().map(f).collect()
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet {
            val: self.val.add(&o.val),
            tan: combine(&self.tan, &o.tan, |a, b| a.add(b), |a| broadcast_like(a, &o.val), |b| broadcast_like(b, &self.val)),
        }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        Jet {
            val: self.val.sub(&o.val),
            tan: combine(&self.tan, &o.tan, |a, b| a.sub(b), |a| broadcast_like(a, &o.val), |b| broadcast_like(&b.neg(), &self.val)),
        }
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        Jet {
            val: self.val.mul(&o.val),
            tan: combine(
                &self.tan,
                &o.tan,
                |ta, tb| ta.mul(&o.val).add(&self.val.mul(tb)),
                |ta| ta.mul(&o.val),
                |tb| self.val.mul(tb),
            ),
        }
    }

    pub fn div(&self, o: &Jet) -> Jet {
        let val = self.val.div(&o.val);
        let tan = combine(
            &self.tan,
            &o.tan,
            |ta, tb| ta.sub(&val.mul(tb)).div(&o.val),
            |ta| ta.div(&o.val),
            |tb| val.mul(tb).div(&o.val).neg(),
        );
        Jet { val, tan }
    }

    pub fn neg(&self) -> Jet {
        Jet { val: self.val.neg(), tan: self.map_tan(|t| t.neg()) }
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet { val: self.val.scale(c), tan: self.map_tan(|t| t.scale(c)) }
    }

    pub fn offset(&self, c: f64) -> Jet {
        Jet { val: self.val.offset(c), tan: self.tan.clone() }
    }

    pub fn square(&self) -> Jet {
        Jet {
            val: self.val.square(),
            tan: self.map_tan(|t| t.mul(&self.val).scale(2.0)),
        }
    }

    pub fn exp(&self) -> Jet {
        let val = self.val.exp();
        let tan = self.map_tan(|t| t.mul(&val));
        Jet { val, tan }
    }

    pub fn ln(&self) -> Jet {
        Jet { val: self.val.ln(), tan: self.map_tan(|t| t.div(&self.val)) }
    }

    pub fn sqrt(&self) -> Jet {
        let val = self.val.sqrt();
        let tan = self.map_tan(|t| t.div(&val).scale(0.5));
        Jet { val, tan }
    }

    pub fn tanh(&self) -> Jet {
        let val = self.val.tanh();
        let tan = if self.tan.is_empty() {
            Vec::new()
        } else {
            let d = val.square().neg().offset(1.0);
            self.map_tan(|t| t.mul(&d))
        };
        Jet { val, tan }
    }

    pub fn sigmoid(&self) -> Jet {
        let val = self.val.sigmoid();
        let tan = if self.tan.is_empty() {
            Vec::new()
        } else {
            let d = val.mul(&val.neg().offset(1.0));
            self.map_tan(|t| t.mul(&d))
        };
        Jet { val, tan }
    }

    pub fn softplus(&self) -> Jet {
        let tan = if self.tan.is_empty() {
            Vec::new()
        } else {
            let d = self.val.sigmoid();
            self.map_tan(|t| t.mul(&d))
        };
        Jet { val: self.val.softplus(), tan }
    }

    pub fn relu(&self) -> Jet {
        let tan = if self.tan.is_empty() {
            Vec::new()
        } else {
            let mask = Var::constant(self.val.value().mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            self.map_tan(|t| t.mul(&mask))
        };
        Jet { val: self.val.relu(), tan }
    }

    pub fn sin(&self) -> Jet {
        let tan = if self.tan.is_empty() { Vec::new() } else {
            let c = self.val.cos();
            self.map_tan(|t| t.mul(&c))
        };
        Jet { val: self.val.sin(), tan }
    }

    pub fn cos(&self) -> Jet {
        let tan = if self.tan.is_empty() { Vec::new() } else {
            let s = self.val.sin().neg();
            self.map_tan(|t| t.mul(&s))
        };
        Jet { val: self.val.cos(), tan }
    }

    /// `atan2(self, x)`.
    pub fn atan2(&self, x: &Jet) -> Jet {
        let val = self.val.atan2(&x.val);
        let tan = if self.tan.is_empty() && x.tan.is_empty() {
            Vec::new()
        } else {
            let r2 = self.val.square().add(&x.val.square());
            combine(
                &self.tan,
                &x.tan,
                |ty, tx| x.val.mul(ty).sub(&self.val.mul(tx)).div(&r2),
                |ty| x.val.mul(ty).div(&r2),
                |tx| self.val.mul(tx).div(&r2).neg(),
            )
        };
        Jet { val, tan }
    }

    /// `self · w` for a matrix without tangent (a parameter).
    pub fn matmul_var(&self, w: &Var) -> Jet {
        Jet { val: self.val.matmul(w), tan: self.map_tan(|t| t.matmul(w)) }
    }

    /// `self · w + b` with parameters `w` and `b` (row vector).
    pub fn linear(&self, w: &Var, b: &Var) -> Jet {
        Jet { val: self.val.matmul(w).add(b), tan: self.map_tan(|t| t.matmul(w)) }
    }

    pub fn sum_cols(&self) -> Jet {
        Jet { val: self.val.sum_cols(), tan: self.map_tan(|t| t.sum_cols()) }
    }

    pub fn sum(&self) -> Jet {
        Jet { val: self.val.sum(), tan: self.map_tan(|t| t.sum()) }
    }

    pub fn mean(&self) -> Jet {
        Jet { val: self.val.mean(), tan: self.map_tan(|t| t.mean()) }
    }

    pub fn select_cols(&self, idx: &[usize]) -> Jet {
        Jet { val: self.val.select_cols(idx), tan: self.map_tan(|t| t.select_cols(idx)) }
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Jet {
        Jet {
            val: self.val.slice_cols(start, end),
            tan: self.map_tan(|t| t.slice_cols(start, end)),
        }
    }

    pub fn concat_cols(parts: &[&Jet]) -> Jet {
        let vals: Vec<&Var> = parts.iter().map(|p| &p.val).collect();
        let val = Var::concat_cols(&vals);
        let k = parts.iter().map(|p| p.tan.len()).max().unwrap_or(0);
        let tan = (0..k)
            .map(|i| {
                let zeros: Vec<Var> = parts
                    .iter()
                    .map(|p| match p.tan.get(i) {
                        Some(t) => t.clone(),
                        None => Var::constant(Array2::zeros(p.val.shape())),
                    })
                    .collect();
                let refs: Vec<&Var> = zeros.iter().collect();
                Var::concat_cols(&refs)
            })
            .collect();
        Jet { val, tan }
    }

    pub fn softmax_rows(&self) -> Jet {
        let val = self.val.softmax_rows();
        let tan = self.map_tan(|t| {
            let dot = val.mul(t).sum_cols();
            val.mul(&t.sub(&dot))
        });
        Jet { val, tan }
    }

    pub fn cumsum_cols(&self) -> Jet {
        Jet { val: self.val.cumsum_cols(), tan: self.map_tan(|t| t.cumsum_cols()) }
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Jet {
        Jet { val: self.val.gather_rows(idx), tan: self.map_tan(|t| t.gather_rows(idx)) }
    }

    /// Elementwise `mask ? a : b`.
    pub fn select(mask: &Rc<Array2<bool>>, a: &Jet, b: &Jet) -> Jet {
        let val = Var::select(mask, &a.val, &b.val);
        let zero = || Var::constant(Array2::zeros(val.shape()));
        let tan = combine(
            &a.tan,
            &b.tan,
            |ta, tb| Var::select(mask, ta, tb),
            |ta| Var::select(mask, ta, &zero()),
            |tb| Var::select(mask, &zero(), tb),
        );
        Jet { val, tan }
    }

    /// Elementwise mask for `self > threshold`, read off the primal.
    pub fn mask(&self, f: impl Fn(f64) -> bool) -> Rc<Array2<bool>> {
        Rc::new(self.val.value().mapv(f))
    }

    /// Elementwise combination of two primal arrays into a mask.
    pub fn mask2(a: &Jet, b: &Jet, f: impl Fn(f64, f64) -> bool) -> Rc<Array2<bool>> {
        Rc::new(Zip::from(a.value()).and(b.value()).map_collect(|&x, &y| f(x, y)))
    }
}

// a one-sided tangent must take the broadcast shape of the result
fn broadcast_like(t: &Var, other: &Var) -> Var {
    let (r, c) = t.shape();
    let (ro, co) = other.shape();
    let target = (r.max(ro), c.max(co));
    if (r, c) == target {
        t.clone()
    } else {
        t.add(&Var::constant(Array2::zeros(target)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Tape;
    use ndarray::array;

    #[test]
    fn tangent_of_linear_map_is_column() {
        let a = Var::constant(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        // row-vector convention: y = x · A with x ∈ R^2
        let x = Jet::with_tangents(
            Var::constant(array![[0.3, -0.1]]),
            vec![Var::constant(array![[1.0, 0.0]])],
        );
        let y = x.matmul_var(&a);
        assert_eq!(y.tan[0].value(), &array![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn tangent_of_square() {
        let x = Jet::with_tangents(
            Var::constant(array![[1.0, 2.0]]),
            vec![Var::constant(array![[1.0, 1.0]])],
        );
        assert_eq!(x.square().tan[0].value(), &array![[2.0, 4.0]]);
    }

    #[test]
    fn tangents_are_differentiable() {
        // d/dw of the tangent of (w*x)^2 in direction 1 at x: 2 w^2 x, derivative 4 w x
        let tape = Tape::new();
        let w = tape.leaf(array![[1.5]]);
        let x = Jet::with_tangents(Var::constant(array![[2.0]]), vec![Var::constant(array![[1.0]])]);
        let y = x.matmul_var(&w).square();
        let loss = y.tan[0].sum();
        assert!((loss.item() - 2.0 * 1.5 * 1.5 * 2.0).abs() < 1e-12);
        let g = tape.gradients(&loss).unwrap().wrt(&w)[[0, 0]];
        assert!((g - 4.0 * 1.5 * 2.0).abs() < 1e-12);
    }
}
