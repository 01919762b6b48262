use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::ndiff::Var;

/// Solver settings for entropic optimal transport with cost `|x - y|² / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornOptions {
    /// Entropic regularization strength.
    pub blur: f64,
    /// Iteration cap at the target regularization.
    pub max_iter: usize,
    /// Stop once the L1 marginal residual falls below this.
    pub tolerance: f64,
    /// Geometric decay of the regularization during the warm start.
    pub scaling: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { blur: 0.05, max_iter: 200, tolerance: 1e-6, scaling: 0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct OtSolution {
    /// Dual objective at the returned potentials.
    pub value: f64,
    /// Transport plan, `(x rows, y rows)`.
    pub plan: Array2<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn half_sq_dist(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), y.nrows()), |(i, j)| {
        0.5 * x.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    })
}

/// `out_i = -eps * log sum_j w_j exp((pot_j - cost_ij) / eps)`, with the
/// cost indexed `[i, j]` (or `[j, i]` when `transposed`).
fn soft_min(cost: &Array2<f64>, transposed: bool, log_w: f64, pot: &Array1<f64>, eps: f64) -> Array1<f64> {
    let rows = if transposed { cost.ncols() } else { cost.nrows() };
    let mut out = Array1::zeros(rows);
    let mut buf = vec![0.0; pot.len()];
    for i in 0..rows {
        let mut top = f64::NEG_INFINITY;
        for (j, b) in buf.iter_mut().enumerate() {
            let c = if transposed { cost[[j, i]] } else { cost[[i, j]] };
            *b = (pot[j] - c) / eps;
            top = top.max(*b);
        }
        let s: f64 = buf.iter().map(|b| (b - top).exp()).sum();
        out[i] = -eps * (log_w + top + s.ln());
    }
    out
}

const RELAXATION: f64 = 1.5;
const NEWTON_AFTER: usize = 30;
const NEWTON_MAX_ROWS: usize = 1500;

/// Column potential that makes the column marginals exact for row
/// potential `f`, with the resulting plan and its row-marginal error.
struct Marginals {
    g: Array1<f64>,
    plan: Array2<f64>,
    rows: Array1<f64>,
    residual: f64,
}

impl Marginals {
    fn new(cost: &Array2<f64>, log_a: f64, log_b: f64, f: &Array1<f64>, eps: f64) -> Self {
        let g = soft_min(cost, true, log_a, f, eps);
        let plan = Array2::from_shape_fn(cost.dim(), |(i, j)| (log_a + log_b + (f[i] + g[j] - cost[[i, j]]) / eps).exp());
        let rows = plan.sum_axis(Axis(1));
        let a = log_a.exp();
        let residual = rows.iter().map(|r| (r - a).abs()).sum();
        Self { g, plan, rows, residual }
    }

    /// Newton step for the row-marginal equations. Their Jacobian is a
    /// weighted graph Laplacian; the constant null direction is pinned by a
    /// rank-one shift.
    fn newton_direction(&self, log_a: f64, log_b: f64, eps: f64) -> Option<Array1<f64>> {
        let n = self.rows.len();
        let inv_b = (-log_b).exp();
        let mut jac = self.plan.dot(&self.plan.t()) * (-inv_b / eps);
        for i in 0..n {
            jac[[i, i]] += self.rows[i] / eps;
        }
        jac += 1.0 / n as f64;
        let inv = crate::ndiff::invert(&jac).ok()?;
        let a = log_a.exp();
        let err = self.rows.mapv(|r| r - a);
        let step = -inv.dot(&err);
        step.iter().all(|v| v.is_finite()).then_some(step)
    }
}

/// Entropy-regularized transport between the uniform empirical measures on
/// the rows of `x` and `y`, solved in the log domain.
pub fn entropic_ot(x: ArrayView2<f64>, y: ArrayView2<f64>, opts: &SinkhornOptions) -> Result<OtSolution> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::InvalidArgument("transport needs non-empty point sets".into()));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension { what: "transport point set", expected: x.ncols(), got: y.ncols() });
    }
    if !(opts.blur > 0.0) || !(opts.scaling > 0.0 && opts.scaling < 1.0) {
        return Err(Error::InvalidArgument(format!("bad Sinkhorn options {opts:?}")));
    }
    let cost = half_sq_dist(x, y);
    let (n, m) = (x.nrows(), y.nrows());
    let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
    let eps = opts.blur;

    let mut g = Array1::zeros(m);
    let mut stage = cost.iter().cloned().fold(0.0, f64::max).max(eps);
    while stage > eps {
        let f = soft_min(&cost, false, log_b, &g, stage);
        g = soft_min(&cost, true, log_a, &f, stage);
        stage *= opts.scaling;
    }
    let mut f = soft_min(&cost, false, log_b, &g, eps);
    let mut iterations = 0;
    let newton = n <= NEWTON_MAX_ROWS;
    while iterations < opts.max_iter {
        iterations += 1;
        let g_exact = soft_min(&cost, true, log_a, &f, eps);
        let f_next = soft_min(&cost, false, log_b, &g_exact, eps);
        // row marginals of the plan (f, g_exact) are a_i exp((f_i - f_next_i) / eps)
        let proxy = f.iter().zip(&f_next).map(|(a, b)| ((a - b) / eps).exp_m1().abs()).sum::<f64>() / n as f64;
        if !(proxy >= opts.tolerance) || (newton && iterations >= NEWTON_AFTER) {
            break;
        }
        g = &g * (1.0 - RELAXATION) + &(g_exact * RELAXATION);
        f = &f * (1.0 - RELAXATION) + &(soft_min(&cost, false, log_b, &g, eps) * RELAXATION);
    }
    let mut state = Marginals::new(&cost, log_a, log_b, &f, eps);
    // Sinkhorn stalls when the plan is nearly block diagonal; Newton steps
    // on the row potential converge from the warm start.
    while newton && iterations < opts.max_iter && state.residual >= opts.tolerance {
        iterations += 1;
        let Some(step) = state.newton_direction(log_a, log_b, eps) else { break };
        let mut t = 1.0;
        loop {
            let trial = &f + &(&step * t);
            let next = Marginals::new(&cost, log_a, log_b, &trial, eps);
            if next.residual < state.residual || t < 1e-4 {
                f = trial;
                state = next;
                break;
            }
            t *= 0.5;
        }
    }
    let residual = state.residual;
    if !(residual < opts.tolerance) {
        return Err(Error::SinkhornNotConverged { iterations, residual });
    }
    let value = f.sum() / n as f64 + state.g.sum() / m as f64;
    Ok(OtSolution { value, plan: state.plan, iterations, residual })
}

/// Entropic transport of the uniform measure on the rows of `x` onto
/// itself. The alternating iteration oscillates on symmetric problems, so
/// this averages each potential with its own update instead.
pub fn entropic_self_ot(x: ArrayView2<f64>, opts: &SinkhornOptions) -> Result<OtSolution> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("transport needs non-empty point sets".into()));
    }
    if !(opts.blur > 0.0) || !(opts.scaling > 0.0 && opts.scaling < 1.0) {
        return Err(Error::InvalidArgument(format!("bad Sinkhorn options {opts:?}")));
    }
    let cost = half_sq_dist(x, x);
    let n = x.nrows();
    let log_a = -(n as f64).ln();
    let eps = opts.blur;
    let mut f = Array1::zeros(n);
    let mut stage = cost.iter().cloned().fold(0.0, f64::max).max(eps);
    while stage > eps {
        f = (&f + &soft_min(&cost, false, log_a, &f, stage)) * 0.5;
        stage *= opts.scaling;
    }
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let next = soft_min(&cost, false, log_a, &f, eps);
        residual = f.iter().zip(&next).map(|(a, b)| ((a - b) / eps).exp_m1().abs()).sum::<f64>() / n as f64;
        if !(residual >= opts.tolerance) {
            break;
        }
        f = (&f + &next) * 0.5;
    }
    if !(residual < opts.tolerance) {
        return Err(Error::SinkhornNotConverged { iterations, residual });
    }
    let value = 2.0 * f.sum() / n as f64;
    let plan = Array2::from_shape_fn((n, n), |(i, j)| (2.0 * log_a + (f[i] + f[j] - cost[[i, j]]) / eps).exp());
    Ok(OtSolution { value, plan, iterations, residual })
}

/// Gradients of `sum_ij plan_ij |x_i - y_j|² / 2` with respect to `x`
/// and `y`.
fn plan_gradients(plan: &Array2<f64>, x: ArrayView2<f64>, y: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let row = plan.sum_axis(Axis(1)).insert_axis(Axis(1));
    let col = plan.sum_axis(Axis(0)).insert_axis(Axis(1));
    let gx = &x * &row - plan.dot(&y);
    let gy = &y * &col - plan.t().dot(&x);
    (gx, gy)
}

/// Debiased Sinkhorn divergence
/// `OT(x, y) - OT(x, x) / 2 - OT(y, y) / 2` between the rows of two sets,
/// differentiable in both (gradients from the optimal plans).
pub fn sinkhorn_divergence(x: &Var, y: &Var, opts: &SinkhornOptions) -> Result<Var> {
    let (xv, yv) = (x.value().view(), y.value().view());
    let xy = entropic_ot(xv, yv, opts)?;
    let xx = entropic_self_ot(xv, opts)?;
    let yy = entropic_self_ot(yv, opts)?;
    let value = xy.value - 0.5 * xx.value - 0.5 * yy.value;
    let (gx_xy, gy_xy) = plan_gradients(&xy.plan, xv, yv);
    let (a, b) = plan_gradients(&xx.plan, xv, xv);
    let gx = gx_xy - &((a + b) * 0.5);
    let (a, b) = plan_gradients(&yy.plan, yv, yv);
    let gy = gy_xy - &((a + b) * 0.5);
    Ok(Var::custom(Array2::from_elem((1, 1), value), &[x, y], move |g, t| {
        let s = g[[0, 0]];
        vec![t[0].then(|| &gx * s), t[1].then(|| &gy * s)]
    }))
}
