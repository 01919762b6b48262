use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::ndiff::{Bound, Jet, ParamGroup, ParamId, ParamStore, Var};

/// Fixed reordering of coordinates: `x[i] = z[perm[i]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut inv = vec![usize::MAX; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            if p >= perm.len() || inv[p] != usize::MAX {
                return Err(crate::Error::InvalidArgument(format!("not a permutation: {perm:?}")));
            }
            inv[p] = i;
        }
        Ok(Self { perm, inv })
    }

    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..dim).collect();
        perm.shuffle(rng);
        Self::new(perm).expect("shuffle is a permutation")
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn apply(&self, z: &Jet, inverse: bool) -> (Jet, Var) {
        let out = z.select_cols(if inverse { &self.inv } else { &self.perm });
        (out, Var::constant(Array2::zeros((z.rows(), 1))))
    }
}

/// Invertible linear layer `x = z Wᵀ + b` with `W = L U`, `L` unit lower
/// triangular and `U` upper triangular with diagonal `exp(log_diag)`.
#[derive(Clone, Debug)]
pub struct LuLinear {
    pub dim: usize,
    lower: ParamId,
    upper: ParamId,
    log_diag: ParamId,
    bias: ParamId,
}

fn tri_masks(d: usize) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let lower = Array2::from_shape_fn((d, d), |(i, j)| (i > j) as u8 as f64);
    let upper = Array2::from_shape_fn((d, d), |(i, j)| (i < j) as u8 as f64);
    (lower, upper, Array2::eye(d))
}

impl LuLinear {
    /// Identity-initialized layer.
    pub fn new(store: &mut ParamStore, prefix: &str, group: ParamGroup, dim: usize) -> Self {
        Self::with_values(
            store,
            prefix,
            group,
            Array2::zeros((dim, dim)),
            Array2::zeros((dim, dim)),
            Array2::zeros((1, dim)),
            Array2::zeros((1, dim)),
        )
    }

    /// Layer with explicit factors; only the strict triangles of `lower` and
    /// `upper` are used.
    pub fn with_values(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        lower: Array2<f64>,
        upper: Array2<f64>,
        log_diag: Array2<f64>,
        bias: Array2<f64>,
    ) -> Self {
        let dim = log_diag.ncols();
        Self {
            dim,
            lower: store.insert(format!("{prefix}.lower"), lower, group),
            upper: store.insert(format!("{prefix}.upper"), upper, group),
            log_diag: store.insert(format!("{prefix}.log_diag"), log_diag, group),
            bias: store.insert(format!("{prefix}.bias"), bias, group),
        }
    }

    fn weight(&self, p: &Bound) -> Var {
        let (ml, mu, eye) = tri_masks(self.dim);
        let eye = Var::constant(eye);
        let l = p.get(self.lower).mul(&Var::constant(ml)).add(&eye);
        let u = p
            .get(self.upper)
            .mul(&Var::constant(mu))
            .add(&eye.mul(&p.get(self.log_diag).exp()));
        l.matmul(&u)
    }

    pub fn apply(&self, p: &Bound, z: &Jet, inverse: bool) -> Result<(Jet, Var)> {
        let w = self.weight(p);
        let bias = p.get(self.bias);
        let ld = Var::constant(Array2::zeros((z.rows(), 1))).add(&p.get(self.log_diag).sum_cols());
        Ok(if inverse {
            let winv = w.inverse()?;
            let centered = z.sub(&Jet::from(bias.clone()));
            (centered.matmul_var(&winv.transpose()), ld.neg())
        } else {
            (z.matmul_var(&w.transpose()).add(&Jet::from(bias.clone())), ld)
        })
    }
}
