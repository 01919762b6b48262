use ndarray::Array2;

use crate::ndiff::{ParamId, ParamStore};

/// Cosine-annealed learning rate at `step` of `total` (reaches zero at
/// `step == total`).
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total) as f64) / total as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Scales the selected gradients so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], ids: &[ParamId], max_norm: f64) -> f64 {
    let norm = ids
        .iter()
        .map(|id| grads[id.0].iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for id in ids {
            grads[id.0].mapv_inplace(|g| g * s);
        }
    }
    norm
}

/// Adaptive-moment optimizer with decoupled weight decay over a fixed
/// subset of a parameter store.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    ids: Vec<ParamId>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    steps: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, weight_decay: f64) -> Self {
        let zeros: Vec<Array2<f64>> = ids.iter().map(|&id| Array2::zeros(store.get(id).dim())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, ids, m: zeros.clone(), v: zeros, steps: 0 }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update with learning rate `lr`. `grads` is indexed like the
    /// store (as returned by [`crate::ndiff::grad`]).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array2<f64>], lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        let (b1, b2, eps, decay) = (self.beta1, self.beta2, self.eps, lr * self.weight_decay);
        for (k, &id) in self.ids.iter().enumerate() {
            let g = &grads[id.0];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= decay * *p;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::ParamGroup;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        let id = store.insert("w", array![[0.3, -2.0]], ParamGroup::Density);
        let mut opt = AdamW::new(&store, vec![id], 0.0);
        for _ in 0..5 {
            opt.step(&mut store, &[Array2::zeros((1, 2))], 1e-2);
        }
        assert_eq!(store.get(id), &array![[0.3, -2.0]]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.insert("w", array![[1.0]], ParamGroup::Manifold);
        let mut opt = AdamW::new(&store, vec![id], 0.0);
        let lr = 3e-4;
        opt.step(&mut store, &[array![[0.7]]], lr);
        // m̂ = g, v̂ = g², so the move is lr · g / (|g| + eps)
        let expected = 1.0 - lr * 0.7 / (0.7 + 1e-8);
        assert!((store.get(id)[[0, 0]] - expected).abs() < 1e-15);
        assert!((1.0 - store.get(id)[[0, 0]] - lr).abs() < 1e-10);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut store = ParamStore::new();
        let id = store.insert("w", array![[2.0]], ParamGroup::Manifold);
        let mut opt = AdamW::new(&store, vec![id], 0.1);
        opt.step(&mut store, &[array![[0.0]]], 0.5);
        assert!((store.get(id)[[0, 0]] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1.0, 0, 100), 1.0);
        assert!((cosine_lr(1.0, 50, 100) - 0.5).abs() < 1e-15);
        assert!(cosine_lr(1.0, 99, 100) < 1e-3);
        assert!(cosine_lr(1.0, 100, 100).abs() < 1e-15);
    }

    #[test]
    fn clipping_rescales_selected() {
        let mut store = ParamStore::new();
        let a = store.insert("a", array![[0.0, 0.0]], ParamGroup::Manifold);
        let _b = store.insert("b", array![[0.0]], ParamGroup::Density);
        let mut grads = vec![array![[30.0, 40.0]], array![[100.0]]];
        let norm = clip_global_norm(&mut grads, &[a], 5.0);
        assert_eq!(norm, 50.0);
        assert!((grads[0][[0, 0]] - 3.0).abs() < 1e-12 && (grads[0][[0, 1]] - 4.0).abs() < 1e-12);
        assert_eq!(grads[1][[0, 0]], 100.0);
    }
}
