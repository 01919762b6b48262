use super::*;
use crate::datasets::sample_circle;
use crate::models::{LatentSpec, ModelConfig};
use crate::ndiff::ParamGroup;
use crate::transforms::StackConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_model(variant: Variant, n: usize, d: usize, latent: LatentSpec, seed: u64) -> ManifoldFlow {
    let mut cfg = ModelConfig::new(variant, n, d);
    cfg.f = StackConfig { hidden: 32, blocks: 1, ..StackConfig::spline(5, 8, 3.0) };
    cfg.h = latent;
    cfg.encoder_hidden = 16;
    cfg.encoder_blocks = 1;
    ManifoldFlow::build(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn circle_model(seed: u64) -> ManifoldFlow {
    let h = LatentSpec::Stack(StackConfig { hidden: 16, blocks: 1, ..StackConfig::spline(2, 6, 3.0) });
    small_model(Variant::MFlow, 1, 2, h, seed)
}

fn circle_data(count: usize, seed: u64) -> Dataset {
    Dataset::new(sample_circle(count, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
}

fn quick_plan(schedule: Schedule, epochs: usize) -> TrainPlan {
    TrainPlan { epochs, batch_manifold: 50, batch_density: 50, learning_rate: 3e-3, ..TrainPlan::new(schedule) }
}

fn values(store: &ParamStore, groups: &[ParamGroup]) -> Vec<Array2<f64>> {
    store.ids_in(groups).into_iter().map(|id| store.get(id).clone()).collect()
}

fn mean_recon(model: &ManifoldFlow, x: &Array2<f64>) -> f64 {
    let r = model.mflow_project(x, None).unwrap().recon;
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

#[test]
fn manifold_epoch_reduces_reconstruction() {
    let mut model = circle_model(1);
    let test = circle_data(500, 99).x;
    let before = mean_recon(&model, &test);
    let h_before = values(&model.store, &[ParamGroup::Density]);
    let log = train_md(&mut model, &circle_data(1000, 2), &quick_plan(Schedule::MdSequential, 1), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(log.labels(), ["m"]);
    let after = mean_recon(&model, &test);
    assert!(after < before, "{after} !< {before}");
    assert_eq!(values(&model.store, &[ParamGroup::Density]), h_before);
}

#[test]
fn density_phase_keeps_manifold_bitwise() {
    let data = circle_data(600, 4);
    let run = |epochs| {
        let mut model = circle_model(5);
        let log = train_md(&mut model, &data, &quick_plan(Schedule::MdSequential, epochs), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        (model, log)
    };
    let (m1, _) = run(1);
    let (m2, log) = run(2);
    assert_eq!(log.labels(), ["m", "d"]);
    let f = [ParamGroup::Manifold, ParamGroup::Encoder];
    assert_eq!(values(&m1.store, &f), values(&m2.store, &f));
    assert_ne!(values(&m1.store, &[ParamGroup::Density]), values(&m2.store, &[ParamGroup::Density]));
}

#[test]
fn alternating_labels_and_checkpoint_rule() {
    let data = circle_data(400, 7);
    let plan = quick_plan(Schedule::MdAlternating, 4);
    let mut model = circle_model(8);
    let log = train_md(&mut model, &data, &plan, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(log.labels(), ["m", "d", "m", "d"]);
    assert!(log.records.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    let min = log.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(log.final_validation(), Some(min));

    // reproduce the held-out split and score the returned model on it
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let val = Var::constant(data.select(&order[data.len() - 40..]).x);
    let p = model.store.frozen();
    let crit = loss_recon(&model, &p, &val, None, plan.lambda_m).unwrap().item()
        + loss_nll(&model, &p, &val, None, plan.lambda_d, false).unwrap().item();
    assert!((crit - min).abs() < 1e-9 * min.abs().max(1.0), "{crit} vs {min}");
}

#[test]
fn identical_seeds_reproduce_runs() {
    let data = circle_data(300, 10);
    let run = || {
        let mut model = circle_model(11);
        let log = train(&mut model, &data, &quick_plan(Schedule::MdAlternating, 2), &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        (log, values(&model.store, &[ParamGroup::Manifold, ParamGroup::Density, ParamGroup::Encoder]))
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn simultaneous_schedule_phases() {
    let data = circle_data(300, 13);
    let plan = quick_plan(Schedule::Simultaneous, 10);
    assert_eq!(plan.epoch_phases(Variant::MFlow).unwrap().iter().map(|p| p.label()).collect::<Vec<_>>(),
        ["pre", "s", "s", "s", "s", "s", "s", "s", "s", "post"]);
    assert!(plan.epoch_phases(Variant::Af).unwrap().iter().all(|&p| p == Phase::Simultaneous));
    let plan = TrainPlan { epochs: 3, pretrain_fraction: 0.34, posttrain_fraction: 0.34, ..plan };
    let mut model = circle_model(14);
    let log = train_simultaneous(&mut model, &data, &plan, &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
    assert_eq!(log.labels(), ["pre", "s", "post"]);
    assert_eq!(log.restored, [0, 1, 2]);
}

#[test]
fn schedule_requirements() {
    let data = circle_data(100, 16);
    let mut af = small_model(Variant::Af, 2, 2, LatentSpec::Gaussian, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(train_md(&mut af, &data, &quick_plan(Schedule::MdSequential, 2), &mut rng), Err(Error::Unsupported(_))));
    assert!(train_md(&mut af, &data, &quick_plan(Schedule::Ot, 2), &mut rng).is_err());
    let log = train(&mut af, &data, &quick_plan(Schedule::Simultaneous, 1), &mut rng).unwrap();
    assert!(log.records[0].val_loss.is_finite());
    assert!("md-alternating".parse::<Schedule>().unwrap() == Schedule::MdAlternating);
    assert!("bogus".parse::<Schedule>().is_err());
}

#[test]
fn nan_parameters_abort_without_update() {
    let mut model = circle_model(18);
    let id = model.store.id("f.0.coupling.out.b").unwrap();
    model.store.get_mut(id)[[0, 0]] = f64::NAN;
    let snapshot = values(&model.store, &[ParamGroup::Manifold]);
    let err = train(&mut model, &circle_data(100, 19), &quick_plan(Schedule::MdSequential, 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. } | Error::NonFinite(_) | Error::SplineParams(_)), "{err}");
    let after = values(&model.store, &[ParamGroup::Manifold]);
    for (a, b) in after.iter().zip(&snapshot) {
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn transport_loss_decreases() {
    // data: N(0, 2²) along the first axis; the untrained model emits N(0, 1)
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let n = 223;
    let x = Array2::from_shape_fn((n, 2), |(_, j)| if j == 0 { 2.0 * rng.sample::<f64, _>(StandardNormal) } else { 0.0 });
    let data = Dataset::new(x.clone());
    let mut model = small_model(Variant::MFlow, 1, 2, LatentSpec::Gaussian, 21);
    let plan = TrainPlan { epochs: 1, batch_ot: 10, learning_rate: 3e-2, ..TrainPlan::new(Schedule::Ot) };
    let noise = draw_noise(&model, 200, &mut ChaCha8Rng::seed_from_u64(22));
    let score = |m: &ManifoldFlow| {
        let p = m.store.frozen();
        phase_loss(m, &plan, Phase::Transport, &p, &Var::constant(x.slice(s![..200, ..]).to_owned()), None, Some(&noise))
            .unwrap()
            .item()
    };
    let before = score(&model);
    let log = train_adversarial(&mut model, &data, &plan, &mut rng).unwrap();
    assert_eq!(log.labels(), ["ot"]);
    let after = score(&model);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn otd_alternates_transport_and_density() {
    let phases = TrainPlan { epochs: 4, ..TrainPlan::new(Schedule::Otd) }.epoch_phases(Variant::MFlow).unwrap();
    assert_eq!(phases, [Phase::Transport, Phase::Density, Phase::Transport, Phase::Density]);
    assert!(TrainPlan::new(Schedule::Ot).epoch_phases(Variant::Fom).is_err());
}
