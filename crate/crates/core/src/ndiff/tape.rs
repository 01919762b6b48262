//! Reverse-mode tape over dense `f64` matrices.
//!
//! Every [`Var`] holds an immutable value. Values that depend on a tracked
//! leaf are recorded on a [`Tape`] together with a closure mapping the
//! output cotangent to the input cotangents. Values that depend on nothing
//! tracked are plain constants and never touch a tape, so evaluation without
//! gradients costs no more than the arithmetic itself.
//!
//! The tape is append-only: a node's parents always have smaller indices,
//! so walking the node list backwards is a valid topological order.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

type Backward = Box<dyn Fn(&Array2<f64>, &[bool]) -> Vec<Option<Array2<f64>>>>;

struct Node {
    parents: Vec<usize>,
    // which of the op's inputs were tracked, in input order
    tracked: Vec<bool>,
    backward: Option<Backward>,
}

/// Append-only record of tracked operations.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a tracked leaf (a trainable parameter or an input we want
    /// the gradient of).
    pub fn leaf(&self, value: Array2<f64>) -> Var {
        let id = self.push(Node {
            parents: Vec::new(),
            tracked: Vec::new(),
            backward: None,
        });
        Var {
            value: Rc::new(value),
            node: Some((self.clone(), id)),
        }
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    /// Backpropagates from a scalar (1×1) node.
    pub fn gradients(&self, loss: &Var) -> Result<Gradients> {
        if loss.value.dim() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.value.dim()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; nodes.len()];
        let Some((tape, root)) = &loss.node else {
            return Ok(Gradients { grads });
        };
        if !self.same(tape) {
            return Err(Error::Contract("loss was recorded on a different tape".into()));
        }
        grads[*root] = Some(Array2::ones((1, 1)));
        for id in (0..=*root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let input_grads = backward(&g, &node.tracked);
                let mut parent = node.parents.iter();
                for (gi, tracked) in input_grads.into_iter().zip(&node.tracked) {
                    if !tracked {
                        continue;
                    }
                    let pid = *parent.next().expect("parent list out of sync");
                    if let Some(gi) = gi {
                        match &mut grads[pid] {
                            Some(acc) => *acc += &gi,
                            slot @ None => *slot = Some(gi),
                        }
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward pass, indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if `var` did not influence the
    /// loss or is an untracked constant.
    pub fn wrt(&self, var: &Var) -> Array2<f64> {
        match &var.node {
            Some((_, id)) => match self.grads.get(*id).and_then(|g| g.as_ref()) {
                Some(g) => g.clone(),
                None => Array2::zeros(var.value.raw_dim()),
            },
            None => Array2::zeros(var.value.raw_dim()),
        }
    }
}

/// A node in the differentiable computation: an immutable matrix value plus
/// (if it depends on a tracked leaf) its position on a tape.
#[derive(Clone)]
pub struct Var {
    value: Rc<Array2<f64>>,
    node: Option<(Tape, usize)>,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.dim())
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

fn unbroadcast(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut out = g.clone();
    if shape.0 == 1 && out.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible shapes for broadcasting: {a:?} vs {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn full(shape: (usize, usize), v: &Array2<f64>) -> Array2<f64> {
    v.broadcast(shape).expect("broadcast").to_owned()
}

impl Var {
    /// An untracked constant.
    pub fn constant(value: Array2<f64>) -> Self {
        Self {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Array2::from_elem((1, 1), v))
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.value
    }

    pub fn shared_value(&self) -> Rc<Array2<f64>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn rows(&self) -> usize {
        self.value.nrows()
    }

    pub fn cols(&self) -> usize {
        self.value.ncols()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a 1×1 node.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.value[[0, 0]]
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Var {
        Var {
            value: Rc::clone(&self.value),
            node: None,
        }
    }

    /// Records a custom primitive. `backward` receives the output cotangent
    /// and a mask of which inputs are tracked, and returns one cotangent per
    /// input (or `None` where it is not needed).
    pub fn custom<F>(value: Array2<f64>, inputs: &[&Var], backward: F) -> Var
    where
        F: Fn(&Array2<f64>, &[bool]) -> Vec<Option<Array2<f64>>> + 'static,
    {
        let mut tape: Option<&Tape> = None;
        let mut parents = Vec::new();
        let mut tracked = Vec::with_capacity(inputs.len());
        for v in inputs {
            match &v.node {
                Some((t, id)) => {
                    if let Some(existing) = tape {
                        assert!(existing.same(t), "inputs recorded on different tapes");
                    } else {
                        tape = Some(t);
                    }
                    parents.push(*id);
                    tracked.push(true);
                }
                None => tracked.push(false),
            }
        }
        let Some(tape) = tape else {
            return Var::constant(value);
        };
        let tape = tape.clone();
        let id = tape.push(Node {
            parents,
            tracked,
            backward: Some(Box::new(backward)),
        });
        Var {
            value: Rc::new(value),
            node: Some((tape, id)),
        }
    }

    fn unary<F>(&self, value: Array2<f64>, local: F) -> Var
    where
        F: Fn(&Array2<f64>) -> Array2<f64> + 'static,
    {
        Var::custom(value, &[self], move |g, _| vec![Some(local(g))])
    }

    // ----- elementwise binary ops (with row/column broadcasting) -----

    pub fn add(&self, other: &Var) -> Var {
        let value = &*self.value + &*other.value;
        let (sa, sb) = (self.shape(), other.shape());
        Var::custom(value, &[self, other], move |g, t| {
            vec![
                t[0].then(|| unbroadcast(g, sa)),
                t[1].then(|| unbroadcast(g, sb)),
            ]
        })
    }

    pub fn sub(&self, other: &Var) -> Var {
        let value = &*self.value - &*other.value;
        let (sa, sb) = (self.shape(), other.shape());
        Var::custom(value, &[self, other], move |g, t| {
            vec![
                t[0].then(|| unbroadcast(g, sa)),
                t[1].then(|| unbroadcast(&-g, sb)),
            ]
        })
    }

    pub fn mul(&self, other: &Var) -> Var {
        let value = &*self.value * &*other.value;
        let (a, b) = (self.shared_value(), other.shared_value());
        Var::custom(value, &[self, other], move |g, t| {
            vec![
                t[0].then(|| unbroadcast(&(g * &*b), a.dim())),
                t[1].then(|| unbroadcast(&(g * &*a), b.dim())),
            ]
        })
    }

    pub fn div(&self, other: &Var) -> Var {
        let value = &*self.value / &*other.value;
        let (a, b) = (self.shared_value(), other.shared_value());
        Var::custom(value, &[self, other], move |g, t| {
            let gb = g / &*b;
            vec![
                t[0].then(|| unbroadcast(&gb, a.dim())),
                t[1].then(|| {
                    let shape = broadcast_shape(a.dim(), b.dim());
                    let q = full(shape, &a) / &*b;
                    unbroadcast(&(-&gb * &q), b.dim())
                }),
            ]
        })
    }

    // ----- scalar and elementwise unary ops -----

    pub fn neg(&self) -> Var {
        self.unary(-&*self.value, |g| -g)
    }

    pub fn scale(&self, c: f64) -> Var {
        self.unary(&*self.value * c, move |g| g * c)
    }

    pub fn offset(&self, c: f64) -> Var {
        self.unary(&*self.value + c, |g| g.clone())
    }

    pub fn square(&self) -> Var {
        let x = self.shared_value();
        self.unary(self.value.mapv(|v| v * v), move |g| g * &*x * 2.0)
    }

    pub fn exp(&self) -> Var {
        let y = Rc::new(self.value.mapv(f64::exp));
        let yc = Rc::clone(&y);
        Var::custom((*y).clone(), &[self], move |g, _| vec![Some(g * &*yc)])
    }

    pub fn ln(&self) -> Var {
        let x = self.shared_value();
        self.unary(self.value.mapv(f64::ln), move |g| g / &*x)
    }

    pub fn sqrt(&self) -> Var {
        let y = Rc::new(self.value.mapv(f64::sqrt));
        let yc = Rc::clone(&y);
        Var::custom((*y).clone(), &[self], move |g, _| {
            vec![Some(Zip::from(g).and(&*yc).map_collect(|&g, &y| 0.5 * g / y))]
        })
    }

    pub fn tanh(&self) -> Var {
        let y = Rc::new(self.value.mapv(f64::tanh));
        let yc = Rc::clone(&y);
        Var::custom((*y).clone(), &[self], move |g, _| {
            vec![Some(Zip::from(g).and(&*yc).map_collect(|&g, &y| g * (1.0 - y * y)))]
        })
    }

    pub fn sigmoid(&self) -> Var {
        let y = Rc::new(self.value.mapv(sigmoid));
        let yc = Rc::clone(&y);
        Var::custom((*y).clone(), &[self], move |g, _| {
            vec![Some(Zip::from(g).and(&*yc).map_collect(|&g, &y| g * y * (1.0 - y)))]
        })
    }

    pub fn softplus(&self) -> Var {
        let x = self.shared_value();
        self.unary(self.value.mapv(softplus), move |g| {
            Zip::from(g).and(&*x).map_collect(|&g, &x| g * sigmoid(x))
        })
    }

    pub fn relu(&self) -> Var {
        let x = self.shared_value();
        self.unary(self.value.mapv(|v| v.max(0.0)), move |g| {
            Zip::from(g)
                .and(&*x)
                .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 })
        })
    }

    pub fn sin(&self) -> Var {
        let x = self.shared_value();
        self.unary(self.value.mapv(f64::sin), move |g| g * &x.mapv(f64::cos))
    }

    pub fn cos(&self) -> Var {
        let x = self.shared_value();
        self.unary(self.value.mapv(f64::cos), move |g| -(g * &x.mapv(f64::sin)))
    }

    /// Elementwise `atan2(y, x)` with `self` as `y`.
    pub fn atan2(&self, x: &Var) -> Var {
        let (yv, xv) = (self.shared_value(), x.shared_value());
        let value = Zip::from(&*yv).and(&*xv).map_collect(|&y, &x| y.atan2(x));
        Var::custom(value, &[self, x], move |g, t| {
            let r2 = Zip::from(&*yv).and(&*xv).map_collect(|&y, &x| x * x + y * y);
            vec![
                t[0].then(|| g * &*xv / &r2),
                t[1].then(|| -(g * &*yv) / &r2),
            ]
        })
    }

    // ----- linear algebra -----

    pub fn matmul(&self, other: &Var) -> Var {
        let value = self.value.dot(&*other.value);
        let (a, b) = (self.shared_value(), other.shared_value());
        Var::custom(value, &[self, other], move |g, t| {
            vec![
                t[0].then(|| g.dot(&b.t())),
                t[1].then(|| a.t().dot(g)),
            ]
        })
    }

    pub fn transpose(&self) -> Var {
        self.unary(self.value.t().to_owned(), |g| g.t().to_owned())
    }

    /// Inverse of a small square matrix (Gauss-Jordan with partial pivoting).
    pub fn inverse(&self) -> Result<Var> {
        let inv = Rc::new(invert(&self.value)?);
        let ic = Rc::clone(&inv);
        Ok(Var::custom((*inv).clone(), &[self], move |g, _| {
            // d(A^-1) = -A^-1 dA A^-1  =>  gA = -A^-T g A^-T
            vec![Some(-ic.t().dot(g).dot(&ic.t()))]
        }))
    }

    // ----- reductions -----

    /// Row sums, shape (rows, 1).
    pub fn sum_cols(&self) -> Var {
        let cols = self.cols();
        self.unary(
            self.value.sum_axis(Axis(1)).insert_axis(Axis(1)),
            move |g| g.broadcast((g.nrows(), cols)).unwrap().to_owned(),
        )
    }

    /// Column sums, shape (1, cols).
    pub fn sum_rows(&self) -> Var {
        let rows = self.rows();
        self.unary(
            self.value.sum_axis(Axis(0)).insert_axis(Axis(0)),
            move |g| g.broadcast((rows, g.ncols())).unwrap().to_owned(),
        )
    }

    pub fn sum(&self) -> Var {
        let shape = self.shape();
        self.unary(Array2::from_elem((1, 1), self.value.sum()), move |g| {
            Array2::from_elem(shape, g[[0, 0]])
        })
    }

    pub fn mean(&self) -> Var {
        let n = self.value.len() as f64;
        self.sum().scale(1.0 / n)
    }

    // ----- structural ops -----

    /// Gathers columns by index (repeats allowed).
    pub fn select_cols(&self, idx: &[usize]) -> Var {
        let idx: Rc<[usize]> = idx.into();
        let value = self.value.select(Axis(1), &idx);
        let cols = self.cols();
        self.unary(value, move |g| {
            let mut out = Array2::zeros((g.nrows(), cols));
            for (j, &c) in idx.iter().enumerate() {
                let mut dst = out.column_mut(c);
                dst += &g.column(j);
            }
            out
        })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Var {
        let cols = self.cols();
        self.unary(self.value.slice(s![.., start..end]).to_owned(), move |g| {
            let mut out = Array2::zeros((g.nrows(), cols));
            out.slice_mut(s![.., start..end]).assign(g);
            out
        })
    }

    pub fn concat_cols(parts: &[&Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = parts.iter().map(|p| p.rows()).max().unwrap();
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = Array2::zeros((rows, total));
        let mut at = 0;
        for p in parts {
            let w = p.cols();
            value
                .slice_mut(s![.., at..at + w])
                .assign(&p.value.broadcast((rows, w)).expect("concat rows"));
            at += w;
        }
        let prow: Vec<usize> = parts.iter().map(|p| p.rows()).collect();
        Var::custom(value, parts, move |g, t| {
            let mut at = 0;
            let mut out = Vec::with_capacity(widths.len());
            for (i, &w) in widths.iter().enumerate() {
                if t[i] {
                    let gi = g.slice(s![.., at..at + w]).to_owned();
                    out.push(Some(unbroadcast(&gi, (prow[i], w))));
                } else {
                    out.push(None);
                }
                at += w;
            }
            out
        })
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&self) -> Var {
        let mut y = self.value.as_ref().clone();
        for mut row in y.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            row /= z;
        }
        let y = Rc::new(y);
        let yc = Rc::clone(&y);
        Var::custom((*y).clone(), &[self], move |g, _| {
            let gy = g * &*yc;
            let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
            vec![Some(&gy - &(&*yc * &dot))]
        })
    }

    /// Running sum along each row.
    pub fn cumsum_cols(&self) -> Var {
        let mut y = self.value.as_ref().clone();
        y.accumulate_axis_inplace(Axis(1), |&prev, cur| *cur += prev);
        self.unary(y, |g| {
            // reverse cumulative sum
            let mut out = g.clone();
            let n = out.ncols();
            for mut row in out.rows_mut() {
                for j in (0..n.saturating_sub(1)).rev() {
                    row[j] += row[j + 1];
                }
            }
            out
        })
    }

    /// Picks `self[i, idx[i]]` for every row, shape (rows, 1).
    pub fn gather_rows(&self, idx: &[usize]) -> Var {
        assert_eq!(idx.len(), self.rows());
        let idx: Rc<[usize]> = idx.into();
        let value = Array2::from_shape_fn((self.rows(), 1), |(i, _)| self.value[[i, idx[i]]]);
        let shape = self.shape();
        self.unary(value, move |g| {
            let mut out = Array2::zeros(shape);
            for (i, &j) in idx.iter().enumerate() {
                out[[i, j]] = g[[i, 0]];
            }
            out
        })
    }

    /// Elementwise `mask ? self : other`. Shapes must agree exactly.
    pub fn select(mask: &Rc<Array2<bool>>, on_true: &Var, on_false: &Var) -> Var {
        assert_eq!(on_true.shape(), on_false.shape());
        assert_eq!(mask.dim(), on_true.shape());
        let value = Zip::from(&**mask)
            .and(&*on_true.value)
            .and(&*on_false.value)
            .map_collect(|&m, &a, &b| if m { a } else { b });
        let m = Rc::clone(mask);
        Var::custom(value, &[on_true, on_false], move |g, t| {
            vec![
                t[0].then(|| Zip::from(g).and(&*m).map_collect(|&g, &m| if m { g } else { 0.0 })),
                t[1].then(|| Zip::from(g).and(&*m).map_collect(|&g, &m| if m { 0.0 } else { g })),
            ]
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Contract(format!("cannot invert {:?} matrix", a.dim())));
    }
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        if m[[pivot, col]].abs() < 1e-300 {
            return Err(Error::Contract("singular matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                m.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
        }
        let p = m[[col, col]];
        for k in 0..n {
            m[[col, k]] /= p;
            inv[[col, k]] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[[row, col]];
                if f != 0.0 {
                    for k in 0..n {
                        m[[row, k]] -= f * m[[col, k]];
                        inv[[row, k]] -= f * inv[[col, k]];
                    }
                }
            }
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let p = tape.leaf(array![[3.0]]);
        let loss = p.mul(&p);
        let g = tape.gradients(&loss).unwrap();
        assert_eq!(g.wrt(&p)[[0, 0]], 6.0);
    }

    #[test]
    fn sum_of_squares() {
        let tape = Tape::new();
        let p = tape.leaf(array![[1.0, 2.0, 3.0]]);
        let loss = p.square().sum();
        assert_eq!(loss.item(), 14.0);
        let g = tape.gradients(&loss).unwrap();
        assert_eq!(g.wrt(&p), array![[2.0, 4.0, 6.0]]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let p = tape.leaf(array![[1.0, 2.0]]);
        assert!(matches!(tape.gradients(&p), Err(Error::Contract(_))));
    }

    #[test]
    fn untouched_params_get_zero_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(array![[1.0]]);
        let b = tape.leaf(array![[5.0, 6.0]]);
        let g = tape.gradients(&a.scale(2.0).sum()).unwrap();
        assert_eq!(g.wrt(&b), array![[0.0, 0.0]]);
    }

    #[test]
    fn constants_stay_off_the_tape() {
        let tape = Tape::new();
        let c = Var::constant(array![[1.0, 2.0]]);
        let d = c.exp().sum();
        assert!(!d.is_tracked());
        assert!(tape.is_empty());
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // y = (x*x) + (x*x) reusing one node vs two independent copies
        let tape = Tape::new();
        let x = tape.leaf(array![[1.5, -0.5]]);
        let sq = x.square();
        let loss = sq.add(&sq).sum();
        let shared = tape.gradients(&loss).unwrap().wrt(&x);

        let tape2 = Tape::new();
        let x1 = tape2.leaf(array![[1.5, -0.5]]);
        let x2 = tape2.leaf(array![[1.5, -0.5]]);
        let loss2 = x1.square().add(&x2.square()).sum();
        let g2 = tape2.gradients(&loss2).unwrap();
        let dup = g2.wrt(&x1) + g2.wrt(&x2);
        assert_eq!(shared, dup);
    }

    #[test]
    fn broadcasting_bias_gradient_sums_rows() {
        let tape = Tape::new();
        let x = Var::constant(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = tape.leaf(array![[0.5, -0.5]]);
        let loss = x.add(&b).sum();
        assert_eq!(tape.gradients(&loss).unwrap().wrt(&b), array![[3.0, 3.0]]);
    }

    #[test]
    fn inverse_matches_identity() {
        let a = array![[2.0, 1.0, 0.0], [0.5, 3.0, 1.0], [0.0, -1.0, 4.0]];
        let inv = invert(&a).unwrap();
        let prod = a.dot(&inv);
        for ((i, j), v) in prod.indexed_iter() {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-12);
        }
    }
}
