//! Invertible building blocks and their composition.
//!
//! Every transform maps `(batch, dim)` rows to rows of the same width and
//! reports a per-row log-absolute-determinant column. Inputs are [`Jet`]s,
//! so Jacobian-vector products ride along with the same code path.

mod coupling;
mod linear;
mod nets;
mod polar;
mod spline;

pub use coupling::{Coupling, CouplingKind};
pub use linear::{LuLinear, Permutation};
pub use nets::{OutputInit, ResidualNet};
pub use polar::Polar;
pub use spline::{rq_spline_elementwise, SplineParams, MIN_BIN_HEIGHT, MIN_BIN_WIDTH, MIN_DERIVATIVE};

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ndiff::{Bound, Jet, ParamGroup, ParamStore, Var};

/// One invertible layer.
#[derive(Clone, Debug)]
pub enum Transform {
    Coupling(Coupling),
    Permutation(Permutation),
    LuLinear(LuLinear),
    Polar(Polar),
}

impl Transform {
    pub fn dim(&self) -> usize {
        match self {
            Transform::Coupling(c) => c.dim,
            Transform::Permutation(p) => p.dim(),
            Transform::LuLinear(l) => l.dim,
            Transform::Polar(_) => 2,
        }
    }

    pub fn context_dim(&self) -> usize {
        match self {
            Transform::Coupling(c) => c.context_dim,
            _ => 0,
        }
    }

    fn apply(&self, p: &Bound, z: &Jet, ctx: Option<&Var>, inverse: bool) -> Result<(Jet, Var)> {
        match self {
            Transform::Coupling(c) => Ok(c.apply(p, z, ctx, inverse)),
            Transform::Permutation(perm) => Ok(perm.apply(z, inverse)),
            Transform::LuLinear(l) => l.apply(p, z, inverse),
            Transform::Polar(pl) => Ok(pl.apply(z, inverse)),
        }
    }
}

/// Layers applied in order on the forward pass and in reverse on the
/// inverse pass. An empty flow is the identity.
#[derive(Clone, Debug)]
pub struct Flow {
    dim: usize,
    context_dim: usize,
    layers: Vec<Transform>,
}

fn check_input(what: &'static str, dim: usize, z: &Jet) -> Result<()> {
    if z.cols() != dim {
        return Err(Error::Dimension { what, expected: dim, got: z.cols() });
    }
    Ok(())
}

fn check_finite(what: &str, out: &Jet, ld: &Var) -> Result<()> {
    if out.value().iter().chain(ld.value().iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} produced a non-finite value")));
    }
    Ok(())
}

impl Flow {
    pub fn new(dim: usize, layers: Vec<Transform>) -> Result<Self> {
        let mut context_dim = 0;
        for (i, t) in layers.iter().enumerate() {
            if t.dim() != dim {
                return Err(Error::Dimension { what: "flow layer", expected: dim, got: t.dim() });
            }
            let c = t.context_dim();
            if c > 0 {
                if context_dim > 0 && c != context_dim {
                    return Err(Error::InvalidArgument(format!(
                        "layer {i} expects context of size {c}, earlier layers {context_dim}"
                    )));
                }
                context_dim = c;
            }
        }
        Ok(Self { dim, context_dim, layers })
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, context_dim: 0, layers: Vec::new() }
    }

    /// `other` after `self`.
    pub fn then(self, other: Flow) -> Result<Flow> {
        if self.dim != other.dim {
            return Err(Error::Dimension { what: "flow composition", expected: self.dim, got: other.dim });
        }
        let mut layers = self.layers;
        layers.extend(other.layers);
        Flow::new(self.dim, layers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn layers(&self) -> &[Transform] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Transform] {
        &mut self.layers
    }

    fn check_context(&self, rows: usize, ctx: Option<&Var>) -> Result<()> {
        match (self.context_dim, ctx) {
            (0, None) => Ok(()),
            (0, Some(_)) => Err(Error::InvalidArgument("context given to an unconditional flow".into())),
            (_, None) => Err(Error::InvalidArgument("conditional flow requires a context".into())),
            (c, Some(v)) => {
                if v.cols() != c {
                    return Err(Error::Dimension { what: "context", expected: c, got: v.cols() });
                }
                if v.rows() != rows && v.rows() != 1 {
                    return Err(Error::Dimension { what: "context rows", expected: rows, got: v.rows() });
                }
                Ok(())
            }
        }
    }

    fn run(&self, p: &Bound, z: &Jet, ctx: Option<&Var>, inverse: bool) -> Result<(Jet, Var)> {
        check_input(if inverse { "flow inverse input" } else { "flow forward input" }, self.dim, z)?;
        self.check_context(z.rows(), ctx)?;
        let mut cur = z.clone();
        let mut total = Var::constant(Array2::zeros((z.rows(), 1)));
        let mut step = |t: &Transform| -> Result<()> {
            let c = if t.context_dim() > 0 { ctx } else { None };
            let (next, ld) = t.apply(p, &cur, c, inverse)?;
            cur = next;
            total = total.add(&ld);
            Ok(())
        };
        if inverse {
            self.layers.iter().rev().try_for_each(&mut step)?;
        } else {
            self.layers.iter().try_for_each(&mut step)?;
        }
        check_finite(if inverse { "flow inverse" } else { "flow forward" }, &cur, &total)?;
        Ok((cur, total))
    }

    /// `(x, log|det dx/dz|)` per row.
    pub fn forward(&self, p: &Bound, z: &Jet, ctx: Option<&Var>) -> Result<(Jet, Var)> {
        self.run(p, z, ctx, false)
    }

    /// `(z, log|det dz/dx|)` per row.
    pub fn inverse(&self, p: &Bound, x: &Jet, ctx: Option<&Var>) -> Result<(Jet, Var)> {
        self.run(p, x, ctx, true)
    }

    /// Permutations in layer order; these are structural, not trainable.
    pub fn permutations(&self) -> Vec<&Permutation> {
        self.layers
            .iter()
            .filter_map(|t| match t {
                Transform::Permutation(p) => Some(p),
                _ => None,
            })
            .collect()
    }

    /// Replaces the permutations in layer order.
    pub fn set_permutations(&mut self, perms: Vec<Permutation>) -> Result<()> {
        let slots = self.permutations().len();
        if perms.len() != slots {
            return Err(Error::Format(format!("expected {slots} permutations, found {}", perms.len())));
        }
        let mut it = perms.into_iter();
        for t in &mut self.layers {
            if let Transform::Permutation(slot) = t {
                let p = it.next().expect("counted");
                if p.dim() != slot.dim() {
                    return Err(Error::Format("permutation size mismatch".into()));
                }
                *slot = p;
            }
        }
        Ok(())
    }
}

/// Architecture of a stack of coupling layers.
#[derive(Clone, Debug)]
pub struct StackConfig {
    pub layers: usize,
    pub kind: CouplingKind,
    pub hidden: usize,
    pub blocks: usize,
    pub context_dim: usize,
    /// Random permutation before every coupling layer.
    pub permute: bool,
    /// LU-decomposed linear layer before every coupling layer.
    pub linear: bool,
}

impl StackConfig {
    pub fn spline(layers: usize, bins: usize, bound: f64) -> Self {
        Self {
            layers,
            kind: CouplingKind::Spline { bins, bound },
            hidden: 100,
            blocks: 2,
            context_dim: 0,
            permute: true,
            linear: false,
        }
    }

    pub fn affine(layers: usize) -> Self {
        Self { kind: CouplingKind::Affine, ..Self::spline(layers, 1, 1.0) }
    }
}

/// Builds alternating-mask coupling layers, optionally interleaved with
/// random permutations drawn from `rng` and LU layers.
pub fn coupling_stack<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    group: ParamGroup,
    dim: usize,
    cfg: &StackConfig,
    rng: &mut R,
) -> Result<Flow> {
    if dim == 0 {
        return Err(Error::InvalidArgument("coupling stack needs dim >= 1".into()));
    }
    let half = dim / 2;
    let mut layers = Vec::new();
    for i in 0..cfg.layers {
        if cfg.permute && dim > 1 {
            layers.push(Transform::Permutation(Permutation::random(dim, rng)));
        }
        if cfg.linear {
            layers.push(Transform::LuLinear(LuLinear::new(store, &format!("{prefix}.{i}.lu"), group, dim)));
        }
        let transformed: Vec<usize> = if i % 2 == 0 { (half..dim).collect() } else { (0..half).collect() };
        let transformed = if transformed.is_empty() { (0..dim).collect() } else { transformed };
        layers.push(Transform::Coupling(Coupling::new(
            store,
            &format!("{prefix}.{i}.coupling"),
            group,
            dim,
            transformed,
            cfg.kind,
            cfg.context_dim,
            cfg.hidden,
            cfg.blocks,
            rng,
        )));
    }
    Flow::new(dim, layers)
}

/// Appends `d - n` zeros to each row.
pub fn pad(u: &Jet, d: usize) -> Result<Jet> {
    let n = u.cols();
    if n > d {
        return Err(Error::InvalidArgument(format!("cannot pad {n} coordinates to {d}")));
    }
    if n == d {
        return Ok(u.clone());
    }
    let zeros = Jet::constant(Array2::zeros((u.rows(), d - n)));
    Ok(Jet::concat_cols(&[u, &zeros]))
}

/// Keeps the first `n` coordinates of each row.
pub fn proj(z: &Jet, n: usize) -> Result<Jet> {
    let d = z.cols();
    if n > d {
        return Err(Error::InvalidArgument(format!("cannot project {d} coordinates to {n}")));
    }
    Ok(if n == d { z.clone() } else { z.slice_cols(0, n) })
}

/// [`pad`] on a single vector.
pub fn pad_vec(u: &[f64], d: usize) -> Result<Vec<f64>> {
    if u.len() > d {
        return Err(Error::InvalidArgument(format!("cannot pad {} coordinates to {d}", u.len())));
    }
    let mut out = u.to_vec();
    out.resize(d, 0.0);
    Ok(out)
}

/// [`proj`] on a single vector.
pub fn proj_vec(z: &[f64], n: usize) -> Result<Vec<f64>> {
    if n > z.len() {
        return Err(Error::InvalidArgument(format!("cannot project {} coordinates to {n}", z.len())));
    }
    Ok(z[..n].to_vec())
}
