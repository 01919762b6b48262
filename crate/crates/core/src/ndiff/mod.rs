//! Dense reverse-mode differentiation with forward tangents.

mod jet;
mod params;
mod tape;

pub use jet::Jet;
pub use params::{grad, Bound, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{invert, Gradients, Tape, Var};
pub(crate) use tape::softplus as softplus_f64;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Jacobian-vector product of `func` at `point` along `tangent`.
///
/// The result is a graph node: when `func` closes over tracked parameters,
/// gradients of any function of the returned column flow back into them.
pub fn jvp<F>(func: F, point: &Var, tangent: &Array2<f64>) -> Result<Var>
where
    F: FnOnce(&Jet) -> Result<Jet>,
{
    if tangent.dim() != point.shape() {
        return Err(Error::Dimension {
            what: "jvp tangent",
            expected: point.cols(),
            got: tangent.ncols(),
        });
    }
    let input = Jet::with_tangents(point.clone(), vec![Var::constant(tangent.clone())]);
    let out = func(&input)?;
    Ok(match out.tan.into_iter().next() {
        Some(t) => t,
        None => Var::constant(Array2::zeros(out.val.shape())),
    })
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Cap on checked entries per parameter array (evenly strided).
    pub max_entries_per_param: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries_per_param: usize::MAX,
            floor: 1e-6,
        }
    }
}

/// Checks the gradient of a scalar function of `store` against central
/// finite differences. `func` builds the scalar from bound parameters; it is
/// called once on a recording tape and twice per checked entry on constants.
pub fn gradient_check<F>(
    func: F,
    store: &ParamStore,
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&Bound) -> Result<Var>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape, |_| true);
    let loss = func(&bound)?;
    let analytic = grad(&tape, &loss, &bound)?;

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
        tolerance,
        passed: true,
    };
    let names: Vec<(ParamId, String, usize)> = store
        .iter()
        .map(|(id, name, p)| (id, name.to_string(), p.value.len()))
        .collect();
    for (k, (id, name, len)) in names.into_iter().enumerate() {
        let stride = len.div_ceil(opts.max_entries_per_param.max(1)).max(1);
        for flat in (0..len).step_by(stride) {
            let orig = store.get(id).as_slice().expect("contiguous")[flat];
            let eval = |work: &mut ParamStore, v: f64| -> Result<f64> {
                work.get_mut(id).as_slice_mut().expect("contiguous")[flat] = v;
                Ok(func(&work.frozen())?.item())
            };
            let up = eval(&mut work, orig + opts.step)?;
            let down = eval(&mut work, orig - opts.step)?;
            work.get_mut(id).as_slice_mut().unwrap()[flat] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[k].as_slice().unwrap()[flat];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), flat));
            }
        }
    }
    report.passed = report.max_rel_error.is_finite() && report.max_rel_error < tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn jvp_of_linear_map_picks_column() {
        let a = Var::constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let x = Var::constant(array![[0.2, 0.7]]);
        let col = jvp(|j| Ok(j.matmul_var(&a)), &x, &array![[1.0, 0.0]]).unwrap();
        // row convention x·A: direction e0 picks the first row of A
        assert_eq!(col.value(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn jvp_of_elementwise_square() {
        let x = Var::constant(array![[1.0, 2.0]]);
        let t = jvp(|j| Ok(j.square()), &x, &array![[1.0, 1.0]]).unwrap();
        assert_eq!(t.value(), &array![[2.0, 4.0]]);
    }

    #[test]
    fn jvp_rejects_wrong_tangent_size() {
        let x = Var::constant(array![[1.0, 2.0]]);
        let err = jvp(|j| Ok(j.square()), &x, &array![[1.0, 1.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn log_det_of_diagonal() {
        // loss = log det diag(a, b) = ln a + ln b at (2, 5): gradient (1/2, 1/5)
        let mut store = ParamStore::new();
        let id = store.insert("d", array![[2.0, 5.0]], ParamGroup::Manifold);
        let tape = Tape::new();
        let bound = store.bind(&tape, |_| true);
        let loss = bound.get(id).ln().sum();
        let g = grad(&tape, &loss, &bound).unwrap();
        // finite-difference oracle, step 1e-6
        let f = |a: f64, b: f64| a.ln() + b.ln();
        let h = 1e-6;
        let fd_a = (f(2.0 + h, 5.0) - f(2.0 - h, 5.0)) / (2.0 * h);
        let fd_b = (f(2.0, 5.0 + h) - f(2.0, 5.0 - h)) / (2.0 * h);
        assert!((g[0][[0, 0]] - fd_a).abs() < 1e-8);
        assert!((g[0][[0, 1]] - fd_b).abs() < 1e-8);
        assert!((g[0][[0, 0]] - 0.5).abs() < 1e-12);
        assert!((g[0][[0, 1]] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn quadratic_gradient_check() {
        let mut store = ParamStore::new();
        let id = store.insert("w", array![[0.3, -1.2, 2.0]], ParamGroup::Density);
        let target = Var::constant(array![[1.0, 0.5, -0.5]]);
        let report = gradient_check(
            |b| Ok(b.get(id).sub(&target).square().sum()),
            &store,
            1e-7,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 3);
    }
}
