use ndarray::Array2;
use rand::Rng;

use super::nets::{OutputInit, ResidualNet};
use super::spline::{rq_spline_tape, RawSpline};
use crate::ndiff::{Bound, Jet, ParamGroup, ParamStore, Var};

/// Elementwise map applied to the transformed half.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CouplingKind {
    /// `x = z * exp(s) + t` with a soft-clamped log-scale `s`.
    Affine,
    /// Rational-quadratic spline on `(-bound, bound)`.
    Spline { bins: usize, bound: f64 },
}

impl CouplingKind {
    fn params_per_dim(self) -> usize {
        match self {
            CouplingKind::Affine => 2,
            CouplingKind::Spline { bins, .. } => 3 * bins - 1,
        }
    }
}

/// Coupling layer: coordinates in `identity` pass through and, together with
/// the optional context, parameterize an elementwise bijection of the rest.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub dim: usize,
    pub identity: Vec<usize>,
    pub transformed: Vec<usize>,
    pub kind: CouplingKind,
    pub context_dim: usize,
    net: ResidualNet,
    // column order that undoes `identity ++ transformed`
    restore: Vec<usize>,
}

/// Bound on the magnitude of the affine log-scale.
const LOG_SCALE_CLAMP: f64 = 3.0;

impl Coupling {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        dim: usize,
        transformed: Vec<usize>,
        kind: CouplingKind,
        context_dim: usize,
        hidden: usize,
        blocks: usize,
        rng: &mut R,
    ) -> Self {
        let identity: Vec<usize> = (0..dim).filter(|i| !transformed.contains(i)).collect();
        let order: Vec<usize> = identity.iter().chain(&transformed).copied().collect();
        let mut restore = vec![0; dim];
        for (pos, &i) in order.iter().enumerate() {
            restore[i] = pos;
        }
        let net = ResidualNet::new(
            store,
            prefix,
            group,
            identity.len() + context_dim,
            hidden,
            transformed.len() * kind.params_per_dim(),
            blocks,
            OutputInit::Zero,
            rng,
        );
        Self { dim, identity, transformed, kind, context_dim, net, restore }
    }

    pub fn apply(&self, p: &Bound, z: &Jet, ctx: Option<&Var>, inverse: bool) -> (Jet, Var) {
        let rows = z.rows();
        let pass = z.select_cols(&self.identity);
        let mut cond_parts: Vec<Jet> = vec![if self.identity.is_empty() {
            Jet::constant(Array2::zeros((rows, 0)))
        } else {
            pass.clone()
        }];
        if let Some(c) = ctx {
            let c = if c.rows() == rows {
                c.clone()
            } else {
                Var::constant(Array2::zeros((rows, c.cols()))).add(c)
            };
            cond_parts.push(Jet::from(c));
        }
        let cond = Jet::concat_cols(&cond_parts.iter().collect::<Vec<_>>());
        let params = self.net.forward(p, &cond);
        let m = self.transformed.len();

        let (moved, logdet) = match self.kind {
            CouplingKind::Affine => {
                let zt = z.select_cols(&self.transformed);
                let log_scale = params
                    .slice_cols(0, m)
                    .scale(1.0 / LOG_SCALE_CLAMP)
                    .tanh()
                    .scale(LOG_SCALE_CLAMP);
                let shift = params.slice_cols(m, 2 * m);
                if inverse {
                    let out = zt.sub(&shift).mul(&log_scale.neg().exp());
                    (out, log_scale.val.sum_cols().neg())
                } else {
                    let out = zt.mul(&log_scale.exp()).add(&shift);
                    (out, log_scale.val.sum_cols())
                }
            }
            CouplingKind::Spline { bins, bound } => {
                let per = 3 * bins - 1;
                let mut cols = Vec::with_capacity(m);
                let mut logdet: Option<Var> = None;
                for (j, &c) in self.transformed.iter().enumerate() {
                    let base = j * per;
                    let uw = params.slice_cols(base, base + bins);
                    let uh = params.slice_cols(base + bins, base + 2 * bins);
                    let ud = params.slice_cols(base + 2 * bins, base + per);
                    let raw = RawSpline { widths: &uw, heights: &uh, derivatives: &ud };
                    let (y, ld) = rq_spline_tape(&z.slice_cols(c, c + 1), &raw, bound, inverse);
                    cols.push(y);
                    logdet = Some(match logdet {
                        Some(acc) => acc.add(&ld),
                        None => ld,
                    });
                }
                let out = Jet::concat_cols(&cols.iter().collect::<Vec<_>>());
                (out, logdet.unwrap_or_else(|| Var::constant(Array2::zeros((rows, 1)))))
            }
        };
        let joined = Jet::concat_cols(&[&pass, &moved]);
        (joined.select_cols(&self.restore), logdet)
    }
}
