use crate::error::{Error, Result};
use crate::models::ManifoldFlow;
use crate::ndiff::{Bound, Var};

fn nonempty(x: &Var) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("loss needs a non-empty batch".into()));
    }
    Ok(())
}

/// `lambda_m` times the mean squared distance between each point and its
/// projection onto the learned manifold.
pub fn loss_recon(model: &ManifoldFlow, p: &Bound, x: &Var, ctx: Option<&Var>, lambda_m: f64) -> Result<Var> {
    nonempty(x)?;
    let (_, _, recon_sq) = model.project_tape(p, x, ctx)?;
    Ok(recon_sq.mean().scale(lambda_m))
}

/// `lambda_d` times the mean negative log-density. Without the Gram term
/// the value only has correct gradients for the latent-flow parameters.
pub fn loss_nll(
    model: &ManifoldFlow,
    p: &Bound,
    x: &Var,
    ctx: Option<&Var>,
    lambda_d: f64,
    include_gram: bool,
) -> Result<Var> {
    nonempty(x)?;
    let d = model.log_prob_tape(p, x, ctx, include_gram)?;
    Ok(d.log_prob.mean().scale(-lambda_d))
}

/// Weighted mean negative log-density (Gram term included) plus weighted
/// mean squared reconstruction error.
pub fn loss_simultaneous(
    model: &ManifoldFlow,
    p: &Bound,
    x: &Var,
    ctx: Option<&Var>,
    nll_weight: f64,
    lambda: f64,
) -> Result<Var> {
    nonempty(x)?;
    if !model.variant.has_learned_manifold() {
        return Err(Error::Unsupported(format!(
            "simultaneous loss needs a learned manifold, got {}",
            model.variant
        )));
    }
    let d = model.log_prob_tape(p, x, ctx, true)?;
    Ok(d.log_prob.mean().scale(-nll_weight).add(&d.recon_sq.mean().scale(lambda)))
}

/// Naive line-model objective on the plane: weighted negative
/// log-likelihood of the projected coordinate plus weighted mean squared
/// distance to the line.
pub fn line_toy_loss(alpha: f64, sigma: f64, data: &ndarray::Array2<f64>, nll_weight: f64, lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for row in data.rows() {
        let (ll, r) = crate::datasets::line_toy(alpha, sigma, [row[0], row[1]])?;
        total += -nll_weight * ll + lambda * r * r;
    }
    Ok(total / data.nrows().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LatentSpec, ModelConfig, Variant};
    use crate::ndiff::{gradient_check, grad, GradCheckOptions, ParamGroup, Tape};
    use crate::transforms::StackConfig;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn model(variant: Variant, n: usize, d: usize, seed: u64, perturb: f64) -> ManifoldFlow {
        let mut cfg = ModelConfig::new(variant, n, d);
        cfg.f = StackConfig { hidden: 8, blocks: 1, permute: false, ..StackConfig::spline(3, 4, 3.0) };
        cfg.h = LatentSpec::Stack(StackConfig { hidden: 8, blocks: 1, ..StackConfig::spline(2, 4, 3.0) });
        cfg.encoder_hidden = 8;
        cfg.encoder_blocks = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ManifoldFlow::build(&cfg, &mut rng).unwrap();
        m.store.perturb(&mut rng, perturb);
        m
    }

    #[test]
    fn recon_of_identity_projection() {
        let m = model(Variant::MFlow, 1, 2, 0, 0.0);
        let x = Var::constant(array![[0.0, 1.0], [0.0, -1.0]]);
        let l = loss_recon(&m, &m.store.frozen(), &x, None, 1.0).unwrap();
        assert!((l.item() - 1.0).abs() < 1e-12);
        let l1000 = loss_recon(&m, &m.store.frozen(), &x, None, 1000.0).unwrap();
        assert!((l1000.item() - 1000.0).abs() < 1e-9);
        let on = Var::constant(array![[0.3, 0.0], [-2.0, 0.0]]);
        assert!(loss_recon(&m, &m.store.frozen(), &on, None, 1000.0).unwrap().item().abs() < 1e-12);
    }

    #[test]
    fn nll_of_identity_model() {
        let m = model(Variant::MFlow, 2, 2, 0, 0.0);
        let x = Var::constant(array![[0.0, 0.0]]);
        let l = loss_nll(&m, &m.store.frozen(), &x, None, 1.0, true).unwrap();
        assert!((l.item() - (2.0 * PI).ln()).abs() < 1e-12);
        assert!((l.item() - 1.8379).abs() < 1e-4);
    }

    #[test]
    fn gram_term_only_affects_manifold_gradients() {
        let m = model(Variant::MFlow, 1, 2, 3, 0.05);
        let x = Var::constant(array![[0.4, 0.2], [-0.7, 0.1], [1.1, -0.3]]);
        let grads = |gram: bool| {
            let tape = Tape::new();
            let p = m.store.bind(&tape, |_| true);
            let l = loss_nll(&m, &p, &x, None, 1.0, gram).unwrap();
            grad(&tape, &l, &p).unwrap()
        };
        let (with, without) = (grads(true), grads(false));
        let mut f_diff: f64 = 0.0;
        for (id, _, param) in m.store.iter() {
            let diff = (&with[id.0] - &without[id.0]).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            match param.group {
                ParamGroup::Density => assert!(diff < 1e-12, "h gradient changed by {diff}"),
                _ => f_diff = f_diff.max(diff),
            }
        }
        assert!(f_diff > 1e-6);
    }

    #[test]
    fn simultaneous_equals_nll_on_manifold() {
        let m = model(Variant::MFlow, 1, 2, 5, 0.05);
        // project arbitrary points first so the batch lies on the manifold
        let proj = m.mflow_project(&array![[0.3, 0.5], [-1.0, 0.2]], None).unwrap();
        let x = Var::constant(proj.x_rec);
        let p = m.store.frozen();
        let s = loss_simultaneous(&m, &p, &x, None, 0.1, 1234.0).unwrap().item();
        let nll = loss_nll(&m, &p, &x, None, 0.1, true).unwrap().item();
        assert!((s - nll).abs() < 1e-8, "{s} vs {nll}");
    }

    #[test]
    fn simultaneous_gradient_check() {
        let m = model(Variant::MFlow, 1, 2, 7, 0.05);
        let x = Var::constant(array![[0.4, 0.2], [-0.7, 0.1]]);
        let report = gradient_check(
            |p| loss_simultaneous(&m, p, &x, None, 0.1, 10.0),
            &m.store,
            1e-4,
            &GradCheckOptions { max_entries_per_param: 6, ..Default::default() },
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn line_toy_pathology() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = crate::datasets::sample_line(2000, PI / 2.0, 1.0, &mut rng);
        // with a small reconstruction weight the degenerate configuration wins
        let truth = line_toy_loss(PI / 2.0, 1.0, &data, 1.0, 0.1).unwrap();
        let bad = line_toy_loss(0.01, 0.01, &data, 1.0, 0.1).unwrap();
        assert!(bad < truth, "{bad} vs {truth}");
        // a large weight restores the true configuration
        let truth = line_toy_loss(PI / 2.0, 1.0, &data, 0.1, 1000.0).unwrap();
        let bad = line_toy_loss(0.01, 0.01, &data, 0.1, 1000.0).unwrap();
        assert!(truth < bad);
    }
}
