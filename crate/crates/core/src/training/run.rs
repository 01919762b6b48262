use std::ops::Range;
use std::time::Instant;

use indexmap::IndexMap;
use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    clip_global_norm, cosine_lr, loss_nll, loss_recon, loss_simultaneous, sinkhorn_divergence, AdamW, EpochRecord,
    Phase, PhaseLog, Schedule, TrainPlan,
};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::models::{ManifoldFlow, Variant};
use crate::ndiff::{grad, Bound, ParamStore, Tape, Var};

const EVAL_CHUNK: usize = 1000;

/// Base and off-manifold latents for a batch of model samples.
struct Noise {
    base: Var,
    off: Option<Var>,
}

fn draw_noise<R: Rng>(model: &ManifoldFlow, rows: usize, rng: &mut R) -> Noise {
    let base = Array2::from_shape_fn((rows, model.n), |_| rng.sample::<f64, _>(StandardNormal));
    let off = (model.variant == Variant::Pie).then(|| {
        Var::constant(Array2::from_shape_fn((rows, model.d - model.n), |_| {
            model.epsilon * rng.sample::<f64, _>(StandardNormal)
        }))
    });
    Noise { base: Var::constant(base), off }
}

fn context(model: &ManifoldFlow, data: &Dataset) -> Result<Option<Array2<f64>>> {
    if model.context_dim == 0 {
        return Ok(None);
    }
    match &data.theta {
        Some(t) if t.ncols() == model.context_dim => Ok(Some(t.clone())),
        Some(t) => Err(Error::Dimension { what: "training context", expected: model.context_dim, got: t.ncols() }),
        None => Err(Error::InvalidArgument("conditional model needs parameter columns in the data".into())),
    }
}

fn phase_loss(
    model: &ManifoldFlow,
    plan: &TrainPlan,
    phase: Phase,
    p: &Bound,
    x: &Var,
    ctx: Option<&Var>,
    noise: Option<&Noise>,
) -> Result<Var> {
    match phase {
        Phase::Pretrain | Phase::Manifold => loss_recon(model, p, x, ctx, plan.lambda_m),
        Phase::Simultaneous if model.variant.has_learned_manifold() => {
            loss_simultaneous(model, p, x, ctx, plan.nll_weight, plan.lambda_m)
        }
        Phase::Simultaneous => loss_nll(model, p, x, ctx, plan.nll_weight, true),
        Phase::Density => loss_nll(model, p, x, ctx, plan.lambda_d, false),
        Phase::Posttrain => loss_nll(model, p, x, ctx, plan.nll_weight, false),
        Phase::Transport => {
            let noise = noise.expect("transport phases draw noise");
            let generated = model.generate_tape(p, &noise.base, noise.off.as_ref(), ctx)?;
            Ok(sinkhorn_divergence(x, &generated, &plan.sinkhorn)?.scale(plan.ot_weight))
        }
    }
}

/// Held-out data with its context and the fixed noise used to score
/// transport phases deterministically.
struct Validation {
    x: Array2<f64>,
    ctx: Option<Array2<f64>>,
    transport_rows: usize,
    noise: Option<Noise>,
}

fn rows(a: &Array2<f64>, r: Range<usize>) -> Var {
    Var::constant(a.slice(s![r, ..]).to_owned())
}

fn validation_loss(model: &ManifoldFlow, plan: &TrainPlan, phases: &[Phase], val: &Validation) -> Result<f64> {
    let p = model.store.frozen();
    let total = val.x.nrows();
    let mut sum = 0.0;
    for &phase in phases {
        if phase == Phase::Transport {
            let r = 0..val.transport_rows;
            let ctx = val.ctx.as_ref().map(|c| rows(c, r.clone()));
            sum += phase_loss(model, plan, phase, &p, &rows(&val.x, r), ctx.as_ref(), val.noise.as_ref())?.item();
            continue;
        }
        let mut acc = 0.0;
        for start in (0..total).step_by(EVAL_CHUNK) {
            let r = start..(start + EVAL_CHUNK).min(total);
            let ctx = val.ctx.as_ref().map(|c| rows(c, r.clone()));
            let l = phase_loss(model, plan, phase, &p, &rows(&val.x, r.clone()), ctx.as_ref(), None)?;
            acc += l.item() * r.len() as f64;
        }
        sum += acc / total as f64;
    }
    Ok(sum)
}

/// Consecutive epochs restored together, with the phases whose validation
/// losses are summed to pick the snapshot.
fn blocks(schedule: Schedule, phases: &[Phase]) -> Vec<(Range<usize>, Vec<Phase>)> {
    if schedule.alternating() {
        let mut crit: Vec<Phase> = Vec::new();
        for p in phases {
            if !crit.contains(p) {
                crit.push(*p);
            }
        }
        return vec![(0..phases.len(), crit)];
    }
    let mut out: Vec<(Range<usize>, Vec<Phase>)> = Vec::new();
    for (e, &p) in phases.iter().enumerate() {
        match out.last_mut() {
            Some((r, c)) if c[0] == p => r.end = e + 1,
            _ => out.push((e..e + 1, vec![p])),
        }
    }
    out
}

fn diverged(phase: Phase, epoch: usize, step: usize, loss: f64) -> Error {
    Error::Diverged { phase: phase.label().to_string(), epoch, step, loss }
}

/// Trains `model` on `data` following `plan`. The held-out split and batch
/// order come from `rng`, so equal seeds reproduce runs exactly. On a
/// non-finite loss or gradient the offending update is skipped and
/// [`Error::Diverged`] is returned with the model left at its last finite
/// parameters.
pub fn train<R: Rng>(model: &mut ManifoldFlow, data: &Dataset, plan: &TrainPlan, rng: &mut R) -> Result<PhaseLog> {
    let phases = plan.epoch_phases(model.variant)?;
    if data.x.ncols() != model.d {
        return Err(Error::Dimension { what: "training data", expected: model.d, got: data.x.ncols() });
    }
    let count = data.len();
    let n_val = ((plan.validation_fraction * count as f64).ceil() as usize).max(1);
    if count < n_val + 1 {
        return Err(Error::InvalidArgument(format!("{count} samples cannot be split for validation")));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    let train_set = data.select(&order[..count - n_val]);
    let val_set = data.select(&order[count - n_val..]);
    let train_ctx = context(model, &train_set)?;
    let transport_rows = val_set.len().min(plan.batch_ot);
    let val = Validation {
        ctx: context(model, &val_set)?,
        noise: phases.contains(&Phase::Transport).then(|| draw_noise(model, transport_rows, rng)),
        x: val_set.x,
        transport_rows,
    };
    let n_train = train_set.len();

    let mut optimizers: IndexMap<Phase, (AdamW, usize)> = IndexMap::new();
    for &phase in &phases {
        let per_epoch = n_train.div_ceil(plan.batch_size(phase));
        let entry = optimizers.entry(phase).or_insert_with(|| {
            (AdamW::new(&model.store, model.store.ids_in(phase.groups()), plan.weight_decay), 0)
        });
        entry.1 += per_epoch;
    }

    let mut log = PhaseLog::default();
    let mut idx: Vec<usize> = (0..n_train).collect();
    for (range, criterion) in blocks(plan.schedule, &phases) {
        let mut best: Option<(f64, usize, ParamStore)> = None;
        for epoch in range {
            let phase = phases[epoch];
            let start = Instant::now();
            let (opt, total_steps) = optimizers.get_mut(&phase).expect("registered");
            let ids = opt.ids().to_vec();
            idx.shuffle(rng);
            let mut loss_sum = 0.0;
            let mut batches = 0;
            for (step, batch) in idx.chunks(plan.batch_size(phase)).enumerate() {
                let x = Var::constant(train_set.x.select(Axis(0), batch));
                let ctx = train_ctx.as_ref().map(|c| Var::constant(c.select(Axis(0), batch)));
                let noise = (phase == Phase::Transport).then(|| draw_noise(model, batch.len(), rng));
                let tape = Tape::new();
                let groups = phase.groups();
                let p = model.store.bind(&tape, |g| groups.contains(&g));
                let loss = phase_loss(model, plan, phase, &p, &x, ctx.as_ref(), noise.as_ref())?;
                let value = loss.item();
                if !value.is_finite() {
                    return Err(diverged(phase, epoch, step, value));
                }
                let mut grads = grad(&tape, &loss, &p)?;
                let norm = clip_global_norm(&mut grads, &ids, plan.clip_norm);
                if !norm.is_finite() {
                    return Err(diverged(phase, epoch, step, value));
                }
                let lr = cosine_lr(plan.learning_rate, opt.steps() as usize, *total_steps);
                opt.step(&mut model.store, &grads, lr);
                loss_sum += value;
                batches += 1;
            }
            let val_loss = validation_loss(model, plan, &criterion, &val)?;
            if val_loss.is_nan() {
                return Err(diverged(phase, epoch, batches, val_loss));
            }
            let record = EpochRecord {
                epoch,
                phase,
                train_loss: loss_sum / batches as f64,
                val_loss,
                seconds: start.elapsed().as_secs_f64(),
                snapshot: epoch,
            };
            log::info!(
                "epoch {epoch} [{phase}] train {:.6} val {:.6} ({:.1}s)",
                record.train_loss,
                record.val_loss,
                record.seconds
            );
            if best.as_ref().is_none_or(|b| val_loss < b.0) {
                best = Some((val_loss, epoch, model.store.clone()));
            }
            log.records.push(record);
        }
        let (_, epoch, store) = best.expect("blocks are non-empty");
        model.store = store;
        log.restored.push(epoch);
    }
    Ok(log)
}

fn require(plan: &TrainPlan, allowed: &[Schedule], what: &str) -> Result<()> {
    if allowed.contains(&plan.schedule) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} does not run schedule {}", plan.schedule)))
    }
}

/// Manifold/density training (sequential or alternating).
pub fn train_md<R: Rng>(model: &mut ManifoldFlow, data: &Dataset, plan: &TrainPlan, rng: &mut R) -> Result<PhaseLog> {
    require(plan, &[Schedule::MdSequential, Schedule::MdAlternating], "train_md")?;
    train(model, data, plan, rng)
}

/// Simultaneous training with optional pre- and post-training phases.
pub fn train_simultaneous<R: Rng>(
    model: &mut ManifoldFlow,
    data: &Dataset,
    plan: &TrainPlan,
    rng: &mut R,
) -> Result<PhaseLog> {
    require(plan, &[Schedule::Simultaneous], "train_simultaneous")?;
    train(model, data, plan, rng)
}

/// Transport training, optionally interleaved with density epochs.
pub fn train_adversarial<R: Rng>(
    model: &mut ManifoldFlow,
    data: &Dataset,
    plan: &TrainPlan,
    rng: &mut R,
) -> Result<PhaseLog> {
    require(plan, &[Schedule::Ot, Schedule::Otd], "train_adversarial")?;
    train(model, data, plan, rng)
}

#[cfg(test)]
mod tests;
