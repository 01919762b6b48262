use super::*;
use crate::ndiff::Tape;
use crate::transforms::{Coupling, CouplingKind, Polar};
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LN_2PI: f64 = 1.8378770664093453;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scaling(store: &mut ParamStore, name: &str, d: usize, factor: f64) -> Flow {
    let lu = LuLinear::with_values(
        store,
        name,
        ParamGroup::Manifold,
        Array2::zeros((d, d)),
        Array2::zeros((d, d)),
        Array2::from_elem((1, d), factor.ln()),
        Array2::zeros((1, d)),
    );
    Flow::new(d, vec![Transform::LuLinear(lu)]).unwrap()
}

fn plain(variant: Variant, n: usize, d: usize, f: Flow, store: ParamStore, eps: f64) -> ManifoldFlow {
    let h = Flow::identity(if variant == Variant::Af { d } else { n });
    ManifoldFlow::from_parts(variant, n, d, f, h, None, None, store, eps, 0, false).unwrap()
}

fn small_stack(layers: usize) -> StackConfig {
    StackConfig { hidden: 16, blocks: 1, linear: true, ..StackConfig::spline(layers, 6, 4.0) }
}

/// Random (perturbed) f of the given width, plus its store.
fn random_f(d: usize, seed: u64) -> (ParamStore, Flow) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let f = coupling_stack(&mut store, "f", ParamGroup::Manifold, d, &small_stack(3), &mut r).unwrap();
    store.perturb(&mut r, 0.1);
    (store, f)
}

fn random_points(rows: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, d), |_| r.random_range(-2.0..2.0))
}

#[test]
fn af_identity_at_origin() {
    let m = plain(Variant::Af, 2, 2, Flow::identity(2), ParamStore::new(), 1.0);
    let lp = m.af_log_prob(&array![[0.0, 0.0]], None).unwrap();
    assert!((lp[0] + LN_2PI).abs() < 1e-12);
    assert!((lp[0] + 1.8379).abs() < 1e-4);
}

#[test]
fn af_scale_by_two() {
    let mut store = ParamStore::new();
    let f = scaling(&mut store, "s", 2, 2.0);
    let m = plain(Variant::Af, 2, 2, f, store, 1.0);
    let lp = m.af_log_prob(&array![[0.0, 0.0]], None).unwrap();
    assert!((lp[0] - (-LN_2PI - 2.0 * 2f64.ln())).abs() < 1e-12);
}

#[test]
fn wrong_variant_is_unsupported() {
    let m = plain(Variant::Af, 2, 2, Flow::identity(2), ParamStore::new(), 1.0);
    assert!(matches!(m.pie_log_prob(&array![[0.0, 0.0]], None), Err(Error::Unsupported(_))));
    assert!(matches!(m.mflow_project(&array![[0.0, 0.0]], None), Err(Error::Unsupported(_))));
}

#[test]
fn invalid_configurations_rejected() {
    let bad = ManifoldFlow::from_parts(Variant::Pie, 1, 2, Flow::identity(2), Flow::identity(1), None, None, ParamStore::new(), 0.0, 0, false);
    assert!(bad.is_err());
    let bad = ManifoldFlow::from_parts(Variant::MFlow, 3, 2, Flow::identity(2), Flow::identity(3), None, None, ParamStore::new(), 1.0, 0, false);
    assert!(bad.is_err());
    let bad = ManifoldFlow::from_parts(Variant::Af, 1, 2, Flow::identity(2), Flow::identity(1), None, None, ParamStore::new(), 1.0, 0, false);
    assert!(bad.is_err());
}

#[test]
fn pie_with_unit_epsilon_is_ambient_flow() {
    let (store, f) = random_f(2, 1);
    let pie = plain(Variant::Pie, 1, 2, f.clone(), store.clone(), 1.0);
    let af = plain(Variant::Af, 2, 2, f, store, 1.0);
    let x = random_points(200, 2, 2);
    let a = pie.pie_log_prob(&x, None).unwrap();
    let b = af.af_log_prob(&x, None).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn pie_factorized_gaussian() {
    let m = plain(Variant::Pie, 1, 2, Flow::identity(2), ParamStore::new(), 0.01);
    let lp = m.pie_log_prob(&array![[0.0, 0.0]], None).unwrap()[0];
    let expected = -0.5 * LN_2PI + (-0.5 * LN_2PI - 0.01f64.ln());
    assert!((lp - expected).abs() < 1e-12);
    assert!((lp - (-0.9189 + 3.6862)).abs() < 1e-4);
}

#[test]
fn polar_pie_slice_differs_from_manifold_density_by_radius() {
    let polar = Flow::new(2, vec![Transform::Polar(Polar::RadiusAngle)]).unwrap();
    let eps = 0.3;
    let pie = plain(Variant::Pie, 1, 2, polar.clone(), ParamStore::new(), eps);
    let mf = plain(Variant::MFlow, 1, 2, polar, ParamStore::new(), 1.0);
    let log_pv0 = -0.5 * LN_2PI - eps.ln();
    for r in [0.5, 1.0, 2.0] {
        let slice = pie.slice_pie_unnorm_log_prob(&array![[r]], None).unwrap()[0];
        let on_manifold = mf.mflow_log_prob(&array![[r, 0.0]], None).unwrap().log_prob[0];
        let ratio = (slice - log_pv0).exp() / on_manifold.exp();
        assert!((ratio - 1.0 / r).abs() < 1e-12, "r = {r}: {ratio}");
    }
}

#[test]
fn slice_shift_under_epsilon_change_is_constant() {
    let (store, f) = random_f(2, 3);
    let a = plain(Variant::Pie, 1, 2, f.clone(), store.clone(), 0.1);
    let b = plain(Variant::Pie, 1, 2, f, store, 0.5);
    let u = random_points(20, 1, 4);
    let la = a.slice_pie_unnorm_log_prob(&u, None).unwrap();
    let lb = b.slice_pie_unnorm_log_prob(&u, None).unwrap();
    let shift = la[0] - lb[0];
    assert!((shift - (0.5f64.ln() - 0.1f64.ln())).abs() < 1e-12);
    for (p, q) in la.iter().zip(&lb) {
        assert!((p - q - shift).abs() < 1e-12);
    }
}

#[test]
fn identity_projection() {
    let m = plain(Variant::MFlow, 1, 2, Flow::identity(2), ParamStore::new(), 1.0);
    let pr = m.mflow_project(&array![[3.0, 4.0]], None).unwrap();
    assert_eq!(pr.u, array![[3.0]]);
    assert_eq!(pr.x_rec, array![[3.0, 0.0]]);
    assert_eq!(pr.recon, vec![4.0]);
}

#[test]
fn samples_lie_on_manifold_and_projection_is_idempotent() {
    let (store, f) = random_f(3, 5);
    let m = plain(Variant::MFlow, 2, 3, f, store, 1.0);
    let xs = m.sample(300, None, &mut rng(6), SampleMode::Full).unwrap();
    let pr = m.mflow_project(&xs, None).unwrap();
    assert!(pr.recon.iter().all(|e| *e < 1e-6));
    let off = random_points(100, 3, 7);
    let first = m.mflow_project(&off, None).unwrap();
    let second = m.mflow_project(&first.x_rec, None).unwrap();
    assert!(second.recon.iter().all(|e| *e < 1e-8));
}

#[test]
fn gram_of_identity_and_scaling() {
    let m = plain(Variant::MFlow, 1, 2, Flow::identity(2), ParamStore::new(), 1.0);
    assert!(m.mflow_gram_logdet(&array![[0.3]], None).unwrap()[0].abs() < 1e-15);
    let mut store = ParamStore::new();
    let f = scaling(&mut store, "s", 2, 2.0);
    let m = plain(Variant::MFlow, 1, 2, f, store, 1.0);
    let g = m.mflow_gram_logdet(&array![[0.3], [-1.0]], None).unwrap();
    for v in g {
        assert!((v + 2f64.ln()).abs() < 1e-12);
    }
    assert_eq!(m.gram_evaluations(), 2);
}

#[test]
fn square_gram_matches_forward_logdet() {
    let (store, f) = random_f(2, 8);
    let m = plain(Variant::MFlow, 2, 2, f.clone(), store.clone(), 1.0);
    let u = random_points(50, 2, 9);
    let g = m.mflow_gram_logdet(&u, None).unwrap();
    let (_, ld) = f.forward(&store.frozen(), &Jet::constant(u), None).unwrap();
    for (a, b) in g.iter().zip(ld.value().iter()) {
        assert!((a + b).abs() < 1e-8);
    }
}

#[test]
fn identity_mflow_density() {
    let m = plain(Variant::MFlow, 1, 2, Flow::identity(2), ParamStore::new(), 1.0);
    let d = m.mflow_log_prob(&array![[0.5, 0.3]], None).unwrap();
    assert!((d.log_prob[0] - (-0.5 * LN_2PI - 0.125)).abs() < 1e-12);
    assert!((d.log_prob[0] + 1.0439).abs() < 1e-4);
    assert!((d.recon[0] - 0.3).abs() < 1e-12);
}

#[test]
fn square_mflow_equals_ambient_flow() {
    for d in 1..=3 {
        let (store, f) = random_f(d, 10 + d as u64);
        let mf = plain(Variant::MFlow, d, d, f.clone(), store.clone(), 1.0);
        let af = plain(Variant::Af, d, d, f, store, 1.0);
        let x = random_points(300, d, 20);
        let a = mf.mflow_log_prob(&x, None).unwrap().log_prob;
        let b = af.af_log_prob(&x, None).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-8, "d = {d}: {p} vs {q}");
        }
    }
}

fn circle_fom() -> ManifoldFlow {
    let m = ManifoldFlow::fom(Arc::new(UnitCircle), &LatentSpec::Gaussian, 0, &mut rng(0)).unwrap();
    let mut m = m;
    m.store.set("h.affine.log_diag", array![[(PI / 4.0).ln()]]).unwrap();
    m.store.set("h.affine.bias", array![[PI / 2.0]]).unwrap();
    m
}

#[test]
fn fom_unit_circle() {
    let m = circle_fom();
    let lp = m.fom_log_prob(&array![[0.0, 1.0]], None).unwrap()[0];
    let expected = -((2.0 * PI).sqrt() * PI / 4.0).ln();
    assert!((lp - expected).abs() < 1e-12);
    assert!((lp + 0.6774).abs() < 1e-4);
    assert!(matches!(m.fom_log_prob(&array![[0.0, 1.1]], None), Err(Error::OffManifold { .. })));
}

#[test]
fn fom_linear_chart_gram() {
    let m = ManifoldFlow::fom(Arc::new(LinearChart { direction: vec![1.0, 2.0] }), &LatentSpec::Gaussian, 0, &mut rng(0)).unwrap();
    let u: f64 = 0.4;
    let lp = m.fom_log_prob(&array![[u, 2.0 * u]], None).unwrap()[0];
    assert!((lp - (-0.5 * LN_2PI - 0.5 * u * u - 0.5 * 5f64.ln())).abs() < 1e-12);
}

#[test]
fn mflow_with_polar_chart_reproduces_fom() {
    let fom = circle_fom();
    let mut store = fom.store.clone();
    let h = fom.h.clone();
    let f = Flow::new(2, vec![Transform::Polar(Polar::AngleLogRadius)]).unwrap();
    store.set("h.affine.bias", array![[PI / 2.0]]).unwrap();
    let mf = ManifoldFlow::from_parts(Variant::MFlow, 1, 2, f, h, None, None, store, 1.0, 0, false).unwrap();
    let mut r = rng(3);
    let x = Array2::from_shape_fn((100, 2), |_| 0.0);
    let x = {
        let mut x = x;
        for mut row in x.rows_mut() {
            let phi: f64 = r.random_range(-1.0..4.0);
            row[0] = phi.cos();
            row[1] = phi.sin();
        }
        x
    };
    let a = fom.fom_log_prob(&x, None).unwrap();
    let b = mf.mflow_log_prob(&x, None).unwrap().log_prob;
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-6, "{p} vs {q}");
    }
}

/// Latent flow u = base + theta with a one-hidden-unit-pair ReLU net.
fn shift_by_context() -> ManifoldFlow {
    let mut store = ParamStore::new();
    let c = Coupling::new(&mut store, "hc", ParamGroup::Density, 1, vec![0], CouplingKind::Affine, 1, 2, 0, &mut rng(0));
    store.set("hc.in.w", array![[1.0, -1.0]]).unwrap();
    store.set("hc.in.b", array![[0.0, 0.0]]).unwrap();
    store.set("hc.out.w", array![[0.0, 1.0], [0.0, -1.0]]).unwrap();
    let h = Flow::new(1, vec![Transform::Coupling(c)]).unwrap();
    ManifoldFlow::from_parts(Variant::MFlow, 1, 2, Flow::identity(2), h, None, None, store, 1.0, 1, false).unwrap()
}

#[test]
fn gaussian_log_ratio() {
    let m = shift_by_context();
    let r = m.conditional_log_ratio(&array![[0.0, 0.4]], &array![[0.0]], &array![[1.0]]).unwrap();
    assert!((r[0] - 0.5).abs() < 1e-12);
    let same = m.conditional_log_ratio(&array![[0.3, 0.4]], &array![[0.7]], &array![[0.7]]).unwrap();
    assert_eq!(same[0], 0.0);
    assert_eq!(m.gram_evaluations(), 0);
}

#[test]
fn log_ratio_matches_full_densities_without_gram() {
    let mut cfg = ModelConfig::new(Variant::MFlow, 2, 3);
    cfg.context_dim = 2;
    cfg.f = small_stack(2);
    cfg.h = LatentSpec::Stack(small_stack(2));
    let mut m = ManifoldFlow::build(&cfg, &mut rng(1)).unwrap();
    m.store.perturb(&mut rng(2), 0.1);
    let x = random_points(200, 3, 3);
    let t0 = random_points(200, 2, 4);
    let t1 = random_points(200, 2, 5);
    let ratio = m.conditional_log_ratio(&x, &t0, &t1).unwrap();
    assert_eq!(m.gram_evaluations(), 0);
    let a = m.mflow_log_prob(&x, Some(&t0)).unwrap().log_prob;
    let b = m.mflow_log_prob(&x, Some(&t1)).unwrap().log_prob;
    for i in 0..200 {
        assert!((ratio[i] - (a[i] - b[i])).abs() < 1e-10);
    }
    assert_eq!(m.gram_evaluations(), 400);
}

#[test]
fn log_ratio_rejects_conditional_manifold() {
    let mut cfg = ModelConfig::new(Variant::MFlow, 1, 2);
    cfg.context_dim = 1;
    cfg.manifold_conditional = true;
    cfg.f = small_stack(1);
    cfg.h = LatentSpec::Stack(small_stack(1));
    let m = ManifoldFlow::build(&cfg, &mut rng(1)).unwrap();
    let err = m.conditional_log_ratio(&array![[0.0, 0.0]], &array![[0.0]], &array![[1.0]]);
    assert!(matches!(err, Err(Error::Unsupported(_))));
}

#[test]
fn gram_term_does_not_touch_latent_gradients() {
    let mut cfg = ModelConfig::new(Variant::MFlow, 1, 2);
    cfg.f = small_stack(2);
    cfg.h = LatentSpec::Stack(small_stack(2));
    let mut m = ManifoldFlow::build(&cfg, &mut rng(4)).unwrap();
    m.store.perturb(&mut rng(5), 0.1);
    let x = Var::constant(random_points(64, 2, 6));
    let grads = |include: bool| {
        let tape = Tape::new();
        let p = m.store.bind(&tape, |g| g == ParamGroup::Density);
        let lp = m.log_prob_tape(&p, &x, None, include).unwrap().log_prob.mean();
        crate::ndiff::grad(&tape, &lp, &p).unwrap()
    };
    let (with, without) = (grads(true), grads(false));
    for (a, b) in with.iter().zip(&without) {
        assert!(a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-12));
    }
    assert!(with.iter().any(|a| a.iter().any(|v| *v != 0.0)));
}

#[test]
fn identity_model_samples() {
    let m = plain(Variant::MFlow, 1, 2, Flow::identity(2), ParamStore::new(), 1.0);
    let xs = m.sample(100_000, None, &mut rng(11), SampleMode::Full).unwrap();
    assert!(xs.column(1).iter().all(|v| *v == 0.0));
    let mean = xs.mean_axis(Axis(0)).unwrap();
    assert!(mean[0].abs() < 0.01 && mean[1].abs() < 0.01);
}

#[test]
fn pie_sampling_modes() {
    let eps = 0.05;
    let m = plain(Variant::Pie, 1, 2, Flow::identity(2), ParamStore::new(), eps);
    let on = m.sample(1000, None, &mut rng(1), SampleMode::Manifold).unwrap();
    assert!(on.column(1).iter().all(|v| *v == 0.0));
    let full = m.sample(20_000, None, &mut rng(2), SampleMode::Full).unwrap();
    let var = full.column(1).iter().map(|v| v * v).sum::<f64>() / 20_000.0;
    // sample variance of N(0, eps²) has relative sd sqrt(2 / N) = 1%
    assert!((var.sqrt() / eps - 1.0).abs() < 0.03);
    let mf = plain(Variant::MFlow, 1, 2, Flow::identity(2), ParamStore::new(), 1.0);
    assert!(mf.sample(1, None, &mut rng(0), SampleMode::Manifold).is_err());
}

#[test]
fn meflow_projects_through_encoder() {
    let mut cfg = ModelConfig::new(Variant::MeFlow, 1, 2);
    cfg.f = small_stack(2);
    cfg.h = LatentSpec::Stack(small_stack(1));
    cfg.encoder_hidden = 8;
    cfg.encoder_blocks = 1;
    let m = ManifoldFlow::build(&cfg, &mut rng(3)).unwrap();
    let x = random_points(10, 2, 4);
    let pr = m.mflow_project(&x, None).unwrap();
    // f starts at the identity, so reconstructions are (e(x), 0)
    for i in 0..10 {
        assert_eq!(pr.x_rec[[i, 1]], 0.0);
        assert!((pr.x_rec[[i, 0]] - pr.u[[i, 0]]).abs() < 1e-12);
    }
    let lp = m.mflow_log_prob(&x, None).unwrap();
    assert!(lp.log_prob.iter().all(|v| v.is_finite()));
}

#[test]
fn bits_conversion() {
    assert!((bits_per_dim(-2.0 * std::f64::consts::LN_2, 2) - 1.0).abs() < 1e-15);
}
