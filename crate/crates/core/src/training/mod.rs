//! Losses, optimizer and training schedules.

mod losses;
mod optim;
mod run;
mod sinkhorn;

pub use losses::{line_toy_loss, loss_nll, loss_recon, loss_simultaneous};
pub use optim::{clip_global_norm, cosine_lr, AdamW};
pub use run::{train, train_adversarial, train_md, train_simultaneous};
pub use sinkhorn::{entropic_ot, entropic_self_ot, sinkhorn_divergence, OtSolution, SinkhornOptions};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::Variant;
use crate::ndiff::ParamGroup;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Schedule {
    /// Joint likelihood and reconstruction objective.
    Simultaneous,
    /// All manifold epochs, then all density epochs.
    MdSequential,
    /// Manifold and density epochs interleaved.
    MdAlternating,
    /// Sample-based transport objective only.
    Ot,
    /// Transport epochs interleaved with density epochs.
    Otd,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Simultaneous => "S",
            Schedule::MdSequential => "MD-sequential",
            Schedule::MdAlternating => "MD-alternating",
            Schedule::Ot => "OT",
            Schedule::Otd => "OTD",
        }
    }

    fn alternating(self) -> bool {
        matches!(self, Schedule::MdAlternating | Schedule::Otd)
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "s" | "simultaneous" => Ok(Schedule::Simultaneous),
            "md-sequential" | "md" => Ok(Schedule::MdSequential),
            "md-alternating" => Ok(Schedule::MdAlternating),
            "ot" => Ok(Schedule::Ot),
            "otd" | "ot-d" => Ok(Schedule::Otd),
            other => Err(Error::InvalidArgument(format!("unknown schedule {other:?}"))),
        }
    }
}

/// What one epoch optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Reconstruction only, before simultaneous training.
    Pretrain,
    Simultaneous,
    /// Reconstruction; updates the manifold transform and encoder.
    Manifold,
    /// Likelihood without the Gram term; updates the latent flow.
    Density,
    /// Transport distance to model samples; updates both transforms.
    Transport,
    /// Likelihood with the manifold frozen, after simultaneous training.
    Posttrain,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Pretrain => "pre",
            Phase::Simultaneous => "s",
            Phase::Manifold => "m",
            Phase::Density => "d",
            Phase::Transport => "ot",
            Phase::Posttrain => "post",
        }
    }

    /// Parameter groups the phase is allowed to change.
    pub fn groups(self) -> &'static [ParamGroup] {
        match self {
            Phase::Pretrain | Phase::Manifold => &[ParamGroup::Manifold, ParamGroup::Encoder],
            Phase::Simultaneous => &[ParamGroup::Manifold, ParamGroup::Density, ParamGroup::Encoder],
            Phase::Density | Phase::Posttrain => &[ParamGroup::Density],
            Phase::Transport => &[ParamGroup::Manifold, ParamGroup::Density],
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub schedule: Schedule,
    pub epochs: usize,
    /// Batch size of reconstruction and simultaneous phases.
    pub batch_manifold: usize,
    /// Batch size of likelihood phases.
    pub batch_density: usize,
    /// Batch size of transport phases (data and model samples alike).
    pub batch_ot: usize,
    /// Weight of the mean squared reconstruction error.
    pub lambda_m: f64,
    /// Weight of the mean negative log-likelihood in density phases.
    pub lambda_d: f64,
    /// Weight of the mean negative log-likelihood in simultaneous training.
    pub nll_weight: f64,
    pub ot_weight: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub sinkhorn: SinkhornOptions,
    /// Share of the data held out for checkpoint selection.
    pub validation_fraction: f64,
    /// Share of epochs spent in reconstruction-only pre-training (S only).
    pub pretrain_fraction: f64,
    /// Share of epochs spent in latent-only post-training (S only).
    pub posttrain_fraction: f64,
    pub clip_norm: f64,
}

impl TrainPlan {
    pub fn new(schedule: Schedule) -> Self {
        Self {
            schedule,
            epochs: 50,
            batch_manifold: 100,
            batch_density: 100,
            batch_ot: 1000,
            lambda_m: 1000.0,
            lambda_d: 1.0,
            nll_weight: 0.1,
            ot_weight: 10.0,
            learning_rate: 3e-4,
            weight_decay: 1e-6,
            sinkhorn: SinkhornOptions::default(),
            validation_fraction: 0.1,
            pretrain_fraction: 0.1,
            posttrain_fraction: 0.1,
            clip_norm: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_manifold == 0 || self.batch_density == 0 || self.batch_ot == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation fraction {} outside (0, 1)", self.validation_fraction));
        }
        let (pre, post) = (self.pretrain_fraction, self.posttrain_fraction);
        if !(pre >= 0.0 && post >= 0.0 && pre + post < 1.0) {
            return bad(format!("pre/post fractions {pre}, {post} must be non-negative and sum below 1"));
        }
        if !(self.learning_rate > 0.0 && self.weight_decay >= 0.0 && self.clip_norm > 0.0) {
            return bad("learning rate and clip norm must be positive, weight decay non-negative".into());
        }
        for (name, w) in [("lambda_m", self.lambda_m), ("lambda_d", self.lambda_d), ("nll_weight", self.nll_weight), ("ot_weight", self.ot_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Phase of every epoch for a model of the given variant.
    pub fn epoch_phases(&self, variant: Variant) -> Result<Vec<Phase>> {
        self.validate()?;
        let e = self.epochs;
        let learned = variant.has_learned_manifold();
        let need_learned = |what: &str| -> Result<()> {
            if learned {
                Ok(())
            } else {
                Err(Error::Unsupported(format!("{what} training needs a learned manifold, got {variant}")))
            }
        };
        Ok(match self.schedule {
            Schedule::Simultaneous if !learned => vec![Phase::Simultaneous; e],
            Schedule::Simultaneous => {
                let pre = (self.pretrain_fraction * e as f64).round() as usize;
                let post = (self.posttrain_fraction * e as f64).round() as usize;
                let main = e.saturating_sub(pre + post).max(1);
                let mut out = vec![Phase::Pretrain; pre];
                out.extend(std::iter::repeat_n(Phase::Simultaneous, main));
                out.extend(std::iter::repeat_n(Phase::Posttrain, post));
                out
            }
            Schedule::MdSequential => {
                need_learned("manifold/density")?;
                let m = e.div_ceil(2);
                let mut out = vec![Phase::Manifold; m];
                out.extend(std::iter::repeat_n(Phase::Density, e - m));
                out
            }
            Schedule::MdAlternating => {
                need_learned("manifold/density")?;
                (0..e).map(|i| if i % 2 == 0 { Phase::Manifold } else { Phase::Density }).collect()
            }
            Schedule::Ot | Schedule::Otd => {
                if variant == Variant::Fom {
                    return Err(Error::Unsupported("transport training needs a trainable embedding".into()));
                }
                if self.schedule == Schedule::Ot {
                    vec![Phase::Transport; e]
                } else {
                    (0..e).map(|i| if i % 2 == 0 { Phase::Transport } else { Phase::Density }).collect()
                }
            }
        })
    }

    pub fn batch_size(&self, phase: Phase) -> usize {
        match phase {
            Phase::Transport => self.batch_ot,
            Phase::Density | Phase::Posttrain => self.batch_density,
            _ => self.batch_manifold,
        }
    }
}

/// Outcome of one epoch.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Checkpoint criterion on the held-out split after the epoch.
    pub val_loss: f64,
    pub seconds: f64,
    /// Identifier of the parameter snapshot taken after the epoch.
    pub snapshot: usize,
}

/// Equality ignores wall-clock time.
impl PartialEq for EpochRecord {
    fn eq(&self, o: &Self) -> bool {
        self.epoch == o.epoch
            && self.phase == o.phase
            && self.train_loss.to_bits() == o.train_loss.to_bits()
            && self.val_loss.to_bits() == o.val_loss.to_bits()
            && self.snapshot == o.snapshot
    }
}

/// Per-epoch history plus the snapshots restored at the end of each block
/// of epochs sharing a checkpoint criterion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseLog {
    pub records: Vec<EpochRecord>,
    pub restored: Vec<usize>,
}

impl PhaseLog {
    pub fn labels(&self) -> Vec<&'static str> {
        self.records.iter().map(|r| r.phase.label()).collect()
    }

    /// Validation loss of the finally restored snapshot.
    pub fn final_validation(&self) -> Option<f64> {
        let id = *self.restored.last()?;
        self.records.iter().find(|r| r.snapshot == id).map(|r| r.val_loss)
    }
}
