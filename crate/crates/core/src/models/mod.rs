//! Flow models with a learned or prescribed manifold and exact densities.
//!
//! All variants share one parameter store and one evaluation path built on
//! tape values, so training code and plain evaluation agree to the bit. The
//! array-level methods (`af_log_prob`, `mflow_log_prob`, ...) evaluate on
//! frozen parameters in parallel chunks.

mod chart;

pub use chart::{Chart, LinearChart, UnitCircle};

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ndiff::{Bound, Jet, ParamGroup, ParamStore, Var};
use crate::transforms::{coupling_stack, pad, proj, Flow, LuLinear, OutputInit, ResidualNet, StackConfig, Transform};

/// Distance beyond which a point is rejected by the prescribed-chart model.
pub const OFF_MANIFOLD_TOLERANCE: f64 = 1e-6;

const CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Ambient flow: `n = d`, standard normal base.
    Af,
    /// Prescribed chart with a learned density on it.
    Fom,
    /// Ambient flow with a narrow base density off the first `n` latents.
    Pie,
    /// Learned manifold through zero padding; exact density on the manifold.
    MFlow,
    /// As `MFlow`, with a separate encoder for the projection.
    MeFlow,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Af => "af",
            Variant::Fom => "fom",
            Variant::Pie => "pie",
            Variant::MFlow => "mflow",
            Variant::MeFlow => "meflow",
        }
    }

    pub fn has_learned_manifold(self) -> bool {
        matches!(self, Variant::MFlow | Variant::MeFlow)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "af" => Variant::Af,
            "fom" => Variant::Fom,
            "pie" => Variant::Pie,
            "mflow" | "m-flow" => Variant::MFlow,
            "meflow" | "me-flow" => Variant::MeFlow,
            other => return Err(Error::InvalidArgument(format!("unknown model variant {other}"))),
        })
    }
}

/// Architecture of the latent density transform `h`.
#[derive(Clone, Debug)]
pub enum LatentSpec {
    /// Affine map with learnable location and (LU-factored) scale.
    Gaussian,
    Stack(StackConfig),
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Manifold dimension.
    pub n: usize,
    /// Ambient dimension.
    pub d: usize,
    pub context_dim: usize,
    /// Whether `f` (and the encoder) also see the context.
    pub manifold_conditional: bool,
    /// Off-manifold base scale for PIE.
    pub epsilon: f64,
    pub f: StackConfig,
    pub h: LatentSpec,
    pub encoder_hidden: usize,
    pub encoder_blocks: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, n: usize, d: usize) -> Self {
        Self {
            variant,
            n,
            d,
            context_dim: 0,
            manifold_conditional: false,
            epsilon: if variant == Variant::Pie { 0.01 } else { 1.0 },
            f: StackConfig::spline(5, 10, 6.0),
            h: LatentSpec::Stack(StackConfig::spline(5, 10, 6.0)),
            encoder_hidden: 100,
            encoder_blocks: 2,
        }
    }
}

/// Array-level result of a density evaluation.
#[derive(Clone, Debug)]
pub struct Density {
    /// Log-density in nats per point.
    pub log_prob: Vec<f64>,
    /// Euclidean reconstruction error per point (zero for ambient models).
    pub recon: Vec<f64>,
}

/// Tape-level result of a density evaluation.
#[derive(Clone, Debug)]
pub struct TapeDensity {
    /// (batch, 1)
    pub log_prob: Var,
    /// Squared reconstruction error, (batch, 1).
    pub recon_sq: Var,
    /// Manifold coordinates, (batch, n).
    pub u: Var,
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub u: Array2<f64>,
    pub x_rec: Array2<f64>,
    pub recon: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Draw from the full generative model (PIE and AF also draw `v`).
    Full,
    /// PIE only: fix the off-manifold latents to zero.
    Manifold,
}

/// One flow model and its parameters.
#[derive(Debug)]
pub struct ManifoldFlow {
    pub variant: Variant,
    pub n: usize,
    pub d: usize,
    pub epsilon: f64,
    pub context_dim: usize,
    pub manifold_conditional: bool,
    pub f: Flow,
    pub h: Flow,
    pub encoder: Option<ResidualNet>,
    pub chart: Option<Arc<dyn Chart>>,
    pub store: ParamStore,
    gram_evaluations: AtomicU64,
}

impl Clone for ManifoldFlow {
    fn clone(&self) -> Self {
        Self {
            variant: self.variant,
            n: self.n,
            d: self.d,
            epsilon: self.epsilon,
            context_dim: self.context_dim,
            manifold_conditional: self.manifold_conditional,
            f: self.f.clone(),
            h: self.h.clone(),
            encoder: self.encoder.clone(),
            chart: self.chart.clone(),
            store: self.store.clone(),
            gram_evaluations: AtomicU64::new(self.gram_evaluations()),
        }
    }
}

/// `log N(z; 0, scale² I)` summed over columns; `(batch, 1)`.
pub fn normal_log_prob(z: &Var, scale: f64) -> Var {
    let k = z.cols() as f64;
    let norm = -0.5 * k * (2.0 * PI).ln() - k * scale.ln();
    if z.cols() == 0 {
        return Var::constant(Array2::from_elem((z.rows(), 1), 0.0));
    }
    z.square().sum_cols().scale(-0.5 / (scale * scale)).offset(norm)
}

/// Converts a log-density in nats to bits per ambient dimension
/// (negative log-likelihood convention).
pub fn bits_per_dim(log_prob: f64, d: usize) -> f64 {
    -log_prob / (d as f64 * std::f64::consts::LN_2)
}

fn build_latent<R: Rng>(
    store: &mut ParamStore,
    spec: &LatentSpec,
    n: usize,
    context_dim: usize,
    rng: &mut R,
) -> Result<Flow> {
    match spec {
        LatentSpec::Gaussian => Flow::new(n, vec![Transform::LuLinear(LuLinear::new(store, "h.affine", ParamGroup::Density, n))]),
        LatentSpec::Stack(cfg) => {
            let cfg = StackConfig { context_dim, ..cfg.clone() };
            coupling_stack(store, "h", ParamGroup::Density, n, &cfg, rng)
        }
    }
}

fn rows_of(ctx: Option<&Array2<f64>>, range: &Range<usize>) -> Option<Var> {
    ctx.map(|c| {
        if c.nrows() == 1 {
            Var::constant(c.clone())
        } else {
            Var::constant(c.slice(s![range.clone(), ..]).to_owned())
        }
    })
}

fn chunk_ranges(rows: usize) -> Vec<Range<usize>> {
    (0..rows.div_ceil(CHUNK)).map(|i| i * CHUNK..((i + 1) * CHUNK).min(rows)).collect()
}

fn column(v: &Var) -> Vec<f64> {
    v.value().column(0).to_vec()
}

impl ManifoldFlow {
    /// Builds a model with fresh parameters; transforms start at the
    /// identity and the encoder at a random initialization.
    pub fn build<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        if cfg.variant == Variant::Fom {
            return Err(Error::InvalidArgument("prescribed-chart models are built with ManifoldFlow::fom".into()));
        }
        let mut store = ParamStore::new();
        let f_ctx = if cfg.manifold_conditional { cfg.context_dim } else { 0 };
        let f_cfg = StackConfig { context_dim: f_ctx, ..cfg.f.clone() };
        let f = coupling_stack(&mut store, "f", ParamGroup::Manifold, cfg.d, &f_cfg, rng)?;
        let h = if cfg.variant == Variant::Af {
            Flow::identity(cfg.d)
        } else {
            build_latent(&mut store, &cfg.h, cfg.n, cfg.context_dim, rng)?
        };
        let encoder = (cfg.variant == Variant::MeFlow).then(|| {
            ResidualNet::new(
                &mut store,
                "e",
                ParamGroup::Encoder,
                cfg.d + f_ctx,
                cfg.encoder_hidden,
                cfg.n,
                cfg.encoder_blocks,
                OutputInit::Uniform,
                rng,
            )
        });
        let n = if cfg.variant == Variant::Af { cfg.d } else { cfg.n };
        let epsilon = if cfg.variant == Variant::Af { 1.0 } else { cfg.epsilon };
        Self::from_parts(
            cfg.variant,
            n,
            cfg.d,
            f,
            h,
            encoder,
            None,
            store,
            epsilon,
            cfg.context_dim,
            cfg.manifold_conditional,
        )
    }

    /// Prescribed-chart model: the manifold is `chart`, only `h` is learned.
    pub fn fom<R: Rng>(chart: Arc<dyn Chart>, h: &LatentSpec, context_dim: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let (n, d) = (chart.manifold_dim(), chart.ambient_dim());
        let h = build_latent(&mut store, h, n, context_dim, rng)?;
        Self::from_parts(Variant::Fom, n, d, Flow::identity(d), h, None, Some(chart), store, 1.0, context_dim, false)
    }

    /// Assembles a model from hand-built pieces, checking consistency.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        variant: Variant,
        n: usize,
        d: usize,
        f: Flow,
        h: Flow,
        encoder: Option<ResidualNet>,
        chart: Option<Arc<dyn Chart>>,
        store: ParamStore,
        epsilon: f64,
        context_dim: usize,
        manifold_conditional: bool,
    ) -> Result<Self> {
        if n > d || n == 0 {
            return Err(Error::InvalidArgument(format!("need 1 <= n <= d, got n = {n}, d = {d}")));
        }
        if f.dim() != d {
            return Err(Error::Dimension { what: "manifold transform", expected: d, got: f.dim() });
        }
        if h.dim() != n {
            return Err(Error::Dimension { what: "latent transform", expected: n, got: h.dim() });
        }
        match variant {
            Variant::Af if n != d || epsilon != 1.0 => {
                return Err(Error::InvalidArgument("ambient flows need n = d and epsilon = 1".into()));
            }
            Variant::Pie if !(epsilon > 0.0 && epsilon <= 1.0) => {
                return Err(Error::InvalidArgument(format!("PIE needs 0 < epsilon <= 1, got {epsilon}")));
            }
            Variant::MeFlow if encoder.is_none() => {
                return Err(Error::InvalidArgument("Me-flow needs an encoder".into()));
            }
            Variant::Fom if chart.is_none() => {
                return Err(Error::InvalidArgument("FOM needs a prescribed chart".into()));
            }
            _ => {}
        }
        if f.context_dim() > 0 && (!manifold_conditional || f.context_dim() != context_dim) {
            return Err(Error::InvalidArgument("manifold transform context does not match the model".into()));
        }
        if h.context_dim() > 0 && h.context_dim() != context_dim {
            return Err(Error::InvalidArgument("latent transform context does not match the model".into()));
        }
        Ok(Self {
            variant,
            n,
            d,
            epsilon,
            context_dim,
            manifold_conditional,
            f,
            h,
            encoder,
            chart,
            store,
            gram_evaluations: AtomicU64::new(0),
        })
    }

    /// Number of points for which a Gram determinant has been evaluated.
    pub fn gram_evaluations(&self) -> u64 {
        self.gram_evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_gram_evaluations(&self) {
        self.gram_evaluations.store(0, Ordering::Relaxed);
    }

    fn require(&self, ok: bool, op: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::Unsupported(format!("{op} is not defined for {} models", self.variant)))
        }
    }

    fn check_context(&self, rows: usize, ctx: Option<&Var>) -> Result<()> {
        match (self.context_dim, ctx) {
            (0, None) => Ok(()),
            (0, Some(_)) => Err(Error::InvalidArgument("context passed to an unconditional model".into())),
            (_, None) => Err(Error::InvalidArgument("conditional model needs a context".into())),
            (c, Some(v)) if v.cols() != c => Err(Error::Dimension { what: "context", expected: c, got: v.cols() }),
            (_, Some(v)) if v.rows() != 1 && v.rows() != rows => {
                Err(Error::Dimension { what: "context rows", expected: rows, got: v.rows() })
            }
            _ => Ok(()),
        }
    }

    fn ctx_f<'a>(&self, ctx: Option<&'a Var>) -> Option<&'a Var> {
        if self.f.context_dim() > 0 {
            ctx
        } else {
            None
        }
    }

    fn ctx_h<'a>(&self, ctx: Option<&'a Var>) -> Option<&'a Var> {
        if self.h.context_dim() > 0 {
            ctx
        } else {
            None
        }
    }

    // ----- tape-level building blocks -------------------------------------

    /// `log p_u(u)` through the latent flow, `(batch, 1)`.
    pub fn latent_log_prob(&self, p: &Bound, u: &Var, ctx: Option<&Var>) -> Result<Var> {
        let (base, ld) = self.h.inverse(p, &Jet::from(u.clone()), self.ctx_h(ctx))?;
        Ok(normal_log_prob(&base.val, 1.0).add(&ld))
    }

    /// `-1/2 log det(J_gᵀ J_g)` at manifold coordinates `u`, `(batch, 1)`.
    pub fn gram_log_det(&self, p: &Bound, u: &Var, ctx: Option<&Var>) -> Result<Var> {
        let (rows, n) = u.shape();
        let basis: Vec<Var> = (0..n)
            .map(|i| Var::constant(Array2::from_shape_fn((rows, n), |(_, j)| (i == j) as u8 as f64)))
            .collect();
        let z = pad(&Jet::with_tangents(u.clone(), basis), self.d)?;
        let (x, _) = self.f.forward(p, &z, self.ctx_f(ctx))?;
        self.gram_evaluations.fetch_add(rows as u64, Ordering::Relaxed);
        if x.tan.len() != n {
            return Err(Error::DegenerateGram { pivot: 0.0 });
        }
        let gram = |i: usize, j: usize| x.tan[i].mul(&x.tan[j]).sum_cols();
        // Cholesky factor of the n x n Gram matrix, one (batch, 1) entry at a time
        let mut l: Vec<Vec<Option<Var>>> = vec![vec![None; n]; n];
        let entry = |l: &Vec<Vec<Option<Var>>>, i: usize, k: usize| l[i][k].clone().expect("filled");
        let mut pivots = Vec::with_capacity(n);
        for j in 0..n {
            let mut diag = gram(j, j);
            for k in 0..j {
                diag = diag.sub(&entry(&l, j, k).square());
            }
            let worst = diag.value().iter().cloned().fold(f64::INFINITY, f64::min);
            if !(worst > 0.0) || !worst.is_finite() {
                return Err(Error::DegenerateGram { pivot: worst });
            }
            let ljj = diag.sqrt();
            for i in j + 1..n {
                let mut off = gram(i, j);
                for k in 0..j {
                    off = off.sub(&entry(&l, i, k).mul(&entry(&l, j, k)));
                }
                l[i][j] = Some(off.div(&ljj));
            }
            l[j][j] = Some(ljj);
            pivots.push(diag);
        }
        let mut total = pivots[0].ln();
        for p in &pivots[1..] {
            total = total.add(&p.ln());
        }
        Ok(total.scale(-0.5))
    }

    /// Manifold coordinates, reconstruction and squared error.
    pub fn project_tape(&self, p: &Bound, x: &Var, ctx: Option<&Var>) -> Result<(Var, Var, Var)> {
        self.require(self.variant.has_learned_manifold(), "projection")?;
        let u = match &self.encoder {
            Some(e) if self.variant == Variant::MeFlow => {
                let mut input = Jet::from(x.clone());
                if let Some(c) = self.ctx_f(ctx) {
                    input = Jet::concat_cols(&[&input, &Jet::from(c.clone())]);
                }
                let u = e.forward(p, &input).val;
                if u.value().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("encoder".into()));
                }
                u
            }
            _ => {
                let (z, _) = self.f.inverse(p, &Jet::from(x.clone()), self.ctx_f(ctx))?;
                proj(&z, self.n)?.val
            }
        };
        let (x_rec, _) = self.f.forward(p, &pad(&Jet::from(u.clone()), self.d)?, self.ctx_f(ctx))?;
        let recon_sq = x.sub(&x_rec.val).square().sum_cols();
        Ok((u, x_rec.val, recon_sq))
    }

    /// Log-density of every row of `x`. With `include_gram = false` the
    /// learned-manifold variants drop the Gram term (useful when only
    /// latent-flow gradients are needed).
    pub fn log_prob_tape(&self, p: &Bound, x: &Var, ctx: Option<&Var>, include_gram: bool) -> Result<TapeDensity> {
        if x.cols() != self.d {
            return Err(Error::Dimension { what: "model input", expected: self.d, got: x.cols() });
        }
        self.check_context(x.rows(), ctx)?;
        let rows = x.rows();
        let zeros = || Var::constant(Array2::zeros((rows, 1)));
        match self.variant {
            Variant::Af | Variant::Pie => {
                let (z, ld) = self.f.inverse(p, &Jet::from(x.clone()), self.ctx_f(ctx))?;
                let u = z.val.slice_cols(0, self.n);
                let v = z.val.slice_cols(self.n, self.d);
                let log_prob = self
                    .latent_log_prob(p, &u, ctx)?
                    .add(&normal_log_prob(&v, self.epsilon))
                    .add(&ld);
                Ok(TapeDensity { log_prob, recon_sq: zeros(), u })
            }
            Variant::MFlow | Variant::MeFlow => {
                let (u, _, recon_sq) = self.project_tape(p, x, ctx)?;
                let mut log_prob = self.latent_log_prob(p, &u, ctx)?;
                if include_gram {
                    log_prob = log_prob.add(&self.gram_log_det(p, &u, ctx)?);
                }
                Ok(TapeDensity { log_prob, recon_sq, u })
            }
            Variant::Fom => {
                let chart = self.chart.as_ref().expect("checked at construction");
                let mut u = Array2::zeros((rows, self.n));
                let mut gram_term = Array2::zeros((rows, 1));
                for (i, row) in x.value().outer_iter().enumerate() {
                    let row = row.to_vec();
                    let coords = chart.coordinates(&row);
                    let distance = chart
                        .embed(&coords)
                        .iter()
                        .zip(&row)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    if distance > OFF_MANIFOLD_TOLERANCE {
                        return Err(Error::OffManifold { distance });
                    }
                    let j = chart.jacobian(&coords);
                    let g = j.t().dot(&j);
                    gram_term[[i, 0]] = -0.5 * spd_log_det(&g)?;
                    u.row_mut(i).assign(&ndarray::ArrayView1::from(&coords));
                }
                let u = Var::constant(u);
                let log_prob = self.latent_log_prob(p, &u, ctx)?.add(&Var::constant(gram_term));
                Ok(TapeDensity { log_prob, recon_sq: zeros(), u })
            }
        }
    }

    /// Pushes base samples through the generative direction. `base` is
    /// `(batch, n)`; `off` holds PIE/AF off-manifold latents `(batch, d - n)`
    /// (zeros when absent).
    pub fn generate_tape(&self, p: &Bound, base: &Var, off: Option<&Var>, ctx: Option<&Var>) -> Result<Var> {
        if base.cols() != self.n {
            return Err(Error::Dimension { what: "base sample", expected: self.n, got: base.cols() });
        }
        self.check_context(base.rows(), ctx)?;
        let (u, _) = self.h.forward(p, &Jet::from(base.clone()), self.ctx_h(ctx))?;
        match self.variant {
            Variant::Fom => {
                let chart = self.chart.as_ref().expect("checked at construction");
                let mut x = Array2::zeros((base.rows(), self.d));
                for (i, row) in u.value().outer_iter().enumerate() {
                    x.row_mut(i).assign(&ndarray::Array1::from(chart.embed(&row.to_vec())));
                }
                Ok(Var::constant(x))
            }
            _ => {
                let z = match off {
                    Some(v) if self.n < self.d => Jet::concat_cols(&[&u, &Jet::from(v.clone())]),
                    _ => pad(&u, self.d)?,
                };
                Ok(self.f.forward(p, &z, self.ctx_f(ctx))?.0.val)
            }
        }
    }

    // ----- array-level API -------------------------------------------------

    fn chunked<T: Send>(
        &self,
        rows: usize,
        f: impl Fn(&Bound, Range<usize>) -> Result<Vec<T>> + Sync,
    ) -> Result<Vec<T>> {
        let parts: Vec<Result<Vec<T>>> = chunk_ranges(rows)
            .into_par_iter()
            .map(|r| f(&self.store.frozen(), r))
            .collect();
        let mut out = Vec::with_capacity(rows);
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }

    fn check_ctx_array(&self, rows: usize, ctx: Option<&Array2<f64>>) -> Result<()> {
        match ctx {
            Some(c) if c.nrows() != 1 && c.nrows() != rows => {
                Err(Error::Dimension { what: "context rows", expected: rows, got: c.nrows() })
            }
            _ => Ok(()),
        }
    }

    /// Log-density and reconstruction error for any variant.
    pub fn log_prob(&self, x: &Array2<f64>, ctx: Option<&Array2<f64>>) -> Result<Density> {
        self.check_ctx_array(x.nrows(), ctx)?;
        let pairs = self.chunked(x.nrows(), |p, r| {
            let c = rows_of(ctx, &r);
            let xv = Var::constant(x.slice(s![r.clone(), ..]).to_owned());
            let out = self.log_prob_tape(p, &xv, c.as_ref(), true)?;
            let lp = column(&out.log_prob);
            let rec = column(&out.recon_sq);
            Ok(lp.into_iter().zip(rec.into_iter().map(f64::sqrt)).collect())
        })?;
        let (log_prob, recon) = pairs.into_iter().unzip();
        Ok(Density { log_prob, recon })
    }

    pub fn af_log_prob(&self, x: &Array2<f64>, ctx: Option<&Array2<f64>>) -> Result<Vec<f64>> {
        self.require(self.variant == Variant::Af, "af_log_prob")?;
        Ok(self.log_prob(x, ctx)?.log_prob)
    }

    pub fn pie_log_prob(&self, x: &Array2<f64>, ctx: Option<&Array2<f64>>) -> Result<Vec<f64>> {
        self.require(self.variant == Variant::Pie, "pie_log_prob")?;
        Ok(self.log_prob(x, ctx)?.log_prob)
    }

    /// Log-density of the projected point and the reconstruction error.
    pub fn mflow_log_prob(&self, x: &Array2<f64>, ctx: Option<&Array2<f64>>) -> Result<Density> {
        self.require(self.variant.has_learned_manifold(), "mflow_log_prob")?;
        self.log_prob(x, ctx)
    }

    pub fn fom_log_prob(&self, x: &Array2<f64>, ctx: Option<&Array2<f64>>) -> Result<Vec<f64>> {
        self.require(self.variant == Variant::Fom, "fom_log_prob")?;
        Ok(self.log_prob(x, ctx)?.log_prob)
    }

    pub fn mflow_project(&self, x: &Array2<f64>, ctx: Option<&Array2<f64>>) -> Result<Projection> {
        self.require(self.variant.has_learned_manifold(), "mflow_project")?;
        self.check_ctx_array(x.nrows(), ctx)?;
        let (n, d) = (self.n, self.d);
        let rows = self.chunked(x.nrows(), |p, r| {
            let c = rows_of(ctx, &r);
            let xv = Var::constant(x.slice(s![r.clone(), ..]).to_owned());
            if xv.cols() != d {
                return Err(Error::Dimension { what: "model input", expected: d, got: xv.cols() });
            }
            self.check_context(xv.rows(), c.as_ref())?;
            let (u, xr, rsq) = self.project_tape(p, &xv, c.as_ref())?;
            Ok((0..xv.rows())
                .map(|i| (u.value().row(i).to_vec(), xr.value().row(i).to_vec(), rsq.value()[[i, 0]].sqrt()))
                .collect())
        })?;
        let count = rows.len();
        let mut u = Array2::zeros((count, n));
        let mut x_rec = Array2::zeros((count, d));
        let mut recon = Vec::with_capacity(count);
        for (i, (ur, xr, e)) in rows.into_iter().enumerate() {
            u.row_mut(i).assign(&ndarray::Array1::from(ur));
            x_rec.row_mut(i).assign(&ndarray::Array1::from(xr));
            recon.push(e);
        }
        Ok(Projection { u, x_rec, recon })
    }

    pub fn mflow_gram_logdet(&self, u: &Array2<f64>, ctx: Option<&Array2<f64>>) -> Result<Vec<f64>> {
        self.require(self.variant.has_learned_manifold(), "mflow_gram_logdet")?;
        if u.ncols() != self.n {
            return Err(Error::Dimension { what: "manifold coordinates", expected: self.n, got: u.ncols() });
        }
        self.check_ctx_array(u.nrows(), ctx)?;
        self.chunked(u.nrows(), |p, r| {
            let c = rows_of(ctx, &r);
            let uv = Var::constant(u.slice(s![r, ..]).to_owned());
            Ok(column(&self.gram_log_det(p, &uv, c.as_ref())?))
        })
    }

    /// `log p_x(f(u, 0))`: the PIE density restricted to its manifold,
    /// which is not normalized on the manifold.
    pub fn slice_pie_unnorm_log_prob(&self, u: &Array2<f64>, ctx: Option<&Array2<f64>>) -> Result<Vec<f64>> {
        self.require(self.variant == Variant::Pie, "slice_pie_unnorm_log_prob")?;
        if u.ncols() != self.n {
            return Err(Error::Dimension { what: "manifold coordinates", expected: self.n, got: u.ncols() });
        }
        self.check_ctx_array(u.nrows(), ctx)?;
        self.chunked(u.nrows(), |p, r| {
            let c = rows_of(ctx, &r);
            let uv = Var::constant(u.slice(s![r.clone(), ..]).to_owned());
            self.check_context(uv.rows(), c.as_ref())?;
            let z = pad(&Jet::from(uv.clone()), self.d)?;
            let (_, ld) = self.f.forward(p, &z, self.ctx_f(c.as_ref()))?;
            let v = Var::constant(Array2::zeros((uv.rows(), self.d - self.n)));
            let lp = self
                .latent_log_prob(p, &uv, c.as_ref())?
                .add(&normal_log_prob(&v, self.epsilon))
                .sub(&ld);
            Ok(column(&lp))
        })
    }

    /// `log p(x | theta0) - log p(x | theta1)` for models whose manifold does
    /// not depend on the context. The Gram terms cancel and are never
    /// computed.
    pub fn conditional_log_ratio(&self, x: &Array2<f64>, theta0: &Array2<f64>, theta1: &Array2<f64>) -> Result<Vec<f64>> {
        self.require(self.variant.has_learned_manifold(), "conditional_log_ratio")?;
        if self.manifold_conditional {
            return Err(Error::Unsupported(
                "likelihood ratios without Gram terms need a context-independent manifold".into(),
            ));
        }
        if self.context_dim == 0 {
            return Err(Error::InvalidArgument("conditional_log_ratio needs a conditional model".into()));
        }
        self.check_ctx_array(x.nrows(), Some(theta0))?;
        self.check_ctx_array(x.nrows(), Some(theta1))?;
        self.chunked(x.nrows(), |p, r| {
            let t0 = rows_of(Some(theta0), &r).unwrap();
            let t1 = rows_of(Some(theta1), &r).unwrap();
            let xv = Var::constant(x.slice(s![r.clone(), ..]).to_owned());
            self.check_context(xv.rows(), Some(&t0))?;
            self.check_context(xv.rows(), Some(&t1))?;
            let (u, _, _) = self.project_tape(p, &xv, None)?;
            let a = self.latent_log_prob(p, &u, Some(&t0))?;
            let b = self.latent_log_prob(p, &u, Some(&t1))?;
            Ok(column(&a.sub(&b)))
        })
    }

    /// Draws `count` samples from the model.
    pub fn sample<R: Rng>(
        &self,
        count: usize,
        ctx: Option<&Array2<f64>>,
        rng: &mut R,
        mode: SampleMode,
    ) -> Result<Array2<f64>> {
        if mode == SampleMode::Manifold && self.variant != Variant::Pie {
            return Err(Error::Unsupported("manifold-mode sampling is PIE-only".into()));
        }
        self.check_ctx_array(count, ctx)?;
        let base = Array2::from_shape_fn((count, self.n), |_| rng.sample::<f64, _>(StandardNormal));
        let off = match (self.variant, mode) {
            (Variant::Pie, SampleMode::Full) => Some(Array2::from_shape_fn((count, self.d - self.n), |_| {
                self.epsilon * rng.sample::<f64, _>(StandardNormal)
            })),
            _ => None,
        };
        let rows = self.chunked(count, |p, r| {
            let c = rows_of(ctx, &r);
            let b = Var::constant(base.slice(s![r.clone(), ..]).to_owned());
            let o = off.as_ref().map(|o| Var::constant(o.slice(s![r.clone(), ..]).to_owned()));
            let x = self.generate_tape(p, &b, o.as_ref(), c.as_ref())?;
            Ok(x.value().outer_iter().map(|row| row.to_vec()).collect::<Vec<_>>())
        })?;
        let mut out = Array2::zeros((count, self.d));
        for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
            dst.assign(&ndarray::Array1::from(src));
        }
        Ok(out)
    }
}

/// Log-determinant of a symmetric positive-definite matrix by Cholesky.
pub fn spd_log_det(g: &Array2<f64>) -> Result<f64> {
    let n = g.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    let mut acc = 0.0;
    for j in 0..n {
        let mut diag = g[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::DegenerateGram { pivot: diag });
        }
        l[[j, j]] = diag.sqrt();
        acc += diag.ln();
        for i in j + 1..n {
            let mut v = g[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / l[[j, j]];
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests;
