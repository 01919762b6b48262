use ndarray::Array2;
use rand::Rng;

use crate::ndiff::{Bound, Jet, ParamGroup, ParamId, ParamStore};

/// How the output layer of a [`ResidualNet`] starts out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputInit {
    /// All-zero output weights and biases: the net outputs zeros, so a
    /// coupling layer using it starts as the identity.
    Zero,
    /// Uniform fan-in initialization like the hidden layers.
    Uniform,
}

/// Residual multilayer perceptron: an input layer, `blocks` pre-activation
/// residual blocks of two linear layers each, and an output layer.
#[derive(Clone, Debug)]
pub struct ResidualNet {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    w_in: ParamId,
    b_in: ParamId,
    blocks: Vec<[ParamId; 4]>,
    w_out: ParamId,
    b_out: ParamId,
}

fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    if limit == 0.0 {
        return Array2::zeros((rows, cols));
    }
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl ResidualNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        blocks: usize,
        init: OutputInit,
        rng: &mut R,
    ) -> Self {
        let fan = |n: usize| if n == 0 { 0.0 } else { 1.0 / (n as f64).sqrt() };
        let w_in = store.insert(format!("{prefix}.in.w"), uniform(rng, input_dim, hidden, fan(input_dim)), group);
        let b_in = store.insert(format!("{prefix}.in.b"), uniform(rng, 1, hidden, fan(input_dim)), group);
        let blocks = (0..blocks)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                [
                    store.insert(format!("{p}.w1"), uniform(rng, hidden, hidden, fan(hidden)), group),
                    store.insert(format!("{p}.b1"), uniform(rng, 1, hidden, fan(hidden)), group),
                    // second layer of each block starts near zero
                    store.insert(format!("{p}.w2"), uniform(rng, hidden, hidden, 1e-3), group),
                    store.insert(format!("{p}.b2"), uniform(rng, 1, hidden, 1e-3), group),
                ]
            })
            .collect();
        let out_limit = match init {
            OutputInit::Zero => 0.0,
            OutputInit::Uniform => fan(hidden),
        };
        let w_out = store.insert(format!("{prefix}.out.w"), uniform(rng, hidden, output_dim, out_limit), group);
        let b_out = store.insert(format!("{prefix}.out.b"), uniform(rng, 1, output_dim, out_limit), group);
        Self { input_dim, hidden, output_dim, w_in, b_in, blocks, w_out, b_out }
    }

    pub fn forward(&self, p: &Bound, x: &Jet) -> Jet {
        debug_assert_eq!(x.cols(), self.input_dim);
        let mut h = x.linear(p.get(self.w_in), p.get(self.b_in));
        for [w1, b1, w2, b2] in &self.blocks {
            let t = h.relu().linear(p.get(*w1), p.get(*b1));
            let t = t.relu().linear(p.get(*w2), p.get(*b2));
            h = h.add(&t);
        }
        h.relu().linear(p.get(self.w_out), p.get(self.b_out))
    }
}
