//! Experiment configuration: flat `section.key = value` text.
//!
//! Every key has a default, so a config file only lists what differs.
//! Unknown keys and ill-typed values are rejected. The canonical text
//! (all keys but `out`, sorted) is stored in checkpoints and hashed into artifacts.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mflow::models::{Chart, LatentSpec, ModelConfig, UnitCircle, Variant};
use mflow::datasets::SurfaceSpec;
use mflow::training::{Schedule, SinkhornOptions, TrainPlan};
use mflow::transforms::{CouplingKind, StackConfig};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::CliError;

type Flat = BTreeMap<String, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Circle,
    Mixture,
    Lorenz,
    Line,
}

impl DatasetKind {
    fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "circle" => DatasetKind::Circle,
            "mixture" => DatasetKind::Mixture,
            "lorenz" => DatasetKind::Lorenz,
            "line" => DatasetKind::Line,
            other => return Err(CliError::Config(format!("unknown dataset {other:?}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Circle => "circle",
            DatasetKind::Mixture => "mixture",
            DatasetKind::Lorenz => "lorenz",
            DatasetKind::Line => "line",
        }
    }

    /// Manifold and ambient dimension of the data.
    fn dims(self) -> (i64, i64) {
        match self {
            DatasetKind::Circle | DatasetKind::Line => (1, 2),
            DatasetKind::Mixture | DatasetKind::Lorenz => (2, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSettings {
    pub kind: DatasetKind,
    pub samples: usize,
    pub test_samples: usize,
    /// Parameters drawn from the prior rather than fixed at `theta`.
    pub theta_prior: bool,
    pub theta: f64,
    pub standardize: bool,
    pub alpha: f64,
    pub sigma: f64,
    pub trajectories: usize,
    pub t_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub samples: usize,
    pub noise: f64,
    pub distance: bool,
    pub reconstruction: bool,
    pub mmd: bool,
    pub auc: bool,
    pub mmd_points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcSettings {
    pub observations: usize,
    pub theta_true: f64,
    pub steps: usize,
    pub step_size: f64,
    pub burn_in: usize,
    pub kde_bandwidth: f64,
    /// `"model"` or `"exact"`.
    pub likelihood: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeSettings {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub resolution: usize,
    pub samples: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub nll_weight: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSettings,
    pub model: ModelConfig,
    pub train: TrainPlan,
    pub eval: EvalSettings,
    pub mcmc: McmcSettings,
    pub landscape: LandscapeSettings,
    flat: Flat,
}

fn defaults(kind: DatasetKind) -> Flat {
    let (n, d) = kind.dims();
    let plan = TrainPlan::new(Schedule::MdSequential);
    let sk = SinkhornOptions::default();
    let entries: Vec<(&str, Value)> = vec![
        ("seed", Value::Integer(0)),
        ("out", Value::String("runs/default".into())),
        ("dataset.name", Value::String(kind.as_str().into())),
        ("dataset.samples", Value::Integer(10_000)),
        ("dataset.test_samples", Value::Integer(1000)),
        ("dataset.theta_prior", Value::Boolean(true)),
        ("dataset.theta", Value::Float(0.0)),
        ("dataset.standardize", Value::Boolean(kind == DatasetKind::Lorenz)),
        ("dataset.alpha", Value::Float(FRAC_PI_2)),
        ("dataset.sigma", Value::Float(1.0)),
        ("dataset.trajectories", Value::Integer(100)),
        ("dataset.t_end", Value::Float(1000.0)),
        ("model.variant", Value::String("mflow".into())),
        ("model.n", Value::Integer(n)),
        ("model.d", Value::Integer(d)),
        ("model.coupling", Value::String("spline".into())),
        ("model.layers", Value::Integer(5)),
        ("model.latent_layers", Value::Integer(5)),
        ("model.bins", Value::Integer(10)),
        ("model.bound", Value::Float(6.0)),
        ("model.hidden", Value::Integer(100)),
        ("model.blocks", Value::Integer(2)),
        ("model.latent_hidden", Value::Integer(100)),
        ("model.latent_blocks", Value::Integer(2)),
        ("model.permute", Value::Boolean(true)),
        ("model.linear", Value::Boolean(false)),
        ("model.encoder_hidden", Value::Integer(100)),
        ("model.encoder_blocks", Value::Integer(2)),
        ("model.epsilon", Value::Float(0.01)),
        ("model.conditional", Value::Boolean(kind == DatasetKind::Mixture)),
        ("model.manifold_conditional", Value::Boolean(false)),
        ("train.schedule", Value::String(plan.schedule.as_str().to_ascii_lowercase())),
        ("train.epochs", Value::Integer(plan.epochs as i64)),
        ("train.batch_manifold", Value::Integer(plan.batch_manifold as i64)),
        ("train.batch_density", Value::Integer(plan.batch_density as i64)),
        ("train.batch_ot", Value::Integer(plan.batch_ot as i64)),
        ("train.lambda_m", Value::Float(plan.lambda_m)),
        ("train.lambda_d", Value::Float(plan.lambda_d)),
        ("train.nll_weight", Value::Float(plan.nll_weight)),
        ("train.ot_weight", Value::Float(plan.ot_weight)),
        ("train.learning_rate", Value::Float(plan.learning_rate)),
        ("train.weight_decay", Value::Float(plan.weight_decay)),
        ("train.validation_fraction", Value::Float(plan.validation_fraction)),
        ("train.pretrain_fraction", Value::Float(plan.pretrain_fraction)),
        ("train.posttrain_fraction", Value::Float(plan.posttrain_fraction)),
        ("train.clip_norm", Value::Float(plan.clip_norm)),
        ("train.sinkhorn.blur", Value::Float(sk.blur)),
        ("train.sinkhorn.max_iter", Value::Integer(sk.max_iter as i64)),
        ("train.sinkhorn.tolerance", Value::Float(sk.tolerance)),
        ("train.sinkhorn.scaling", Value::Float(sk.scaling)),
        ("eval.samples", Value::Integer(1000)),
        ("eval.noise", Value::Float(0.1)),
        ("eval.distance", Value::Boolean(true)),
        ("eval.reconstruction", Value::Boolean(true)),
        ("eval.mmd", Value::Boolean(true)),
        ("eval.auc", Value::Boolean(true)),
        ("eval.mmd_points", Value::Integer(1000)),
        ("mcmc.observations", Value::Integer(10)),
        ("mcmc.theta_true", Value::Float(0.0)),
        ("mcmc.steps", Value::Integer(5100)),
        ("mcmc.step_size", Value::Float(0.15)),
        ("mcmc.burn_in", Value::Integer(100)),
        ("mcmc.kde_bandwidth", Value::Float(0.1)),
        ("mcmc.likelihood", Value::String("model".into())),
        ("landscape.alpha_min", Value::Float(0.01)),
        ("landscape.alpha_max", Value::Float(FRAC_PI_2)),
        ("landscape.sigma_min", Value::Float(0.01)),
        ("landscape.sigma_max", Value::Float(2.0)),
        ("landscape.resolution", Value::Integer(50)),
        ("landscape.samples", Value::Integer(10_000)),
        ("landscape.alpha", Value::Float(FRAC_PI_2)),
        ("landscape.sigma", Value::Float(1.0)),
        ("landscape.nll_weight", Value::Float(1.0)),
        ("landscape.lambda", Value::Float(1.0)),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Flat) -> Result<(), CliError> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out)?,
            Value::Array(_) | Value::Datetime(_) => {
                return Err(CliError::Config(format!("{key}: only scalar values are supported")))
            }
            other => {
                out.insert(key, other.clone());
            }
        }
    }
    Ok(())
}

/// Parses a command-line value: TOML scalar syntax, or a bare string.
fn parse_value(text: &str) -> Value {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

/// Coerces `value` to the type of the default for `key`.
fn coerce(key: &str, default: &Value, value: Value) -> Result<Value, CliError> {
    let bad = |v: &Value| CliError::Config(format!("{key}: expected {}, got {v}", default.type_str()));
    match (default, value) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Integer(_), Value::Integer(i)) if i < 0 => {
            Err(CliError::Config(format!("{key}: expected a non-negative integer, got {i}")))
        }
        (d, v) if std::mem::discriminant(d) == std::mem::discriminant(&v) => Ok(v),
        (_, v) => Err(bad(&v)),
    }
}

impl ExperimentConfig {
    /// Builds a config from optional file text plus `KEY=VALUE` overrides,
    /// applied in order after the file.
    pub fn from_sources(file_text: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let mut given = Flat::new();
        if let Some(text) = file_text {
            let table: toml::Table =
                text.parse().map_err(|e: toml::de::Error| CliError::Config(format!("config: {}", e.message())))?;
            flatten("", &table, &mut given)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not KEY=VALUE")))?;
            given.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let kind = match given.get("dataset.name") {
            Some(Value::String(s)) => DatasetKind::parse(s)?,
            Some(v) => return Err(CliError::Config(format!("dataset.name: expected string, got {v}"))),
            None => DatasetKind::Circle,
        };
        let mut flat = defaults(kind);
        for (k, v) in given {
            let default = flat.get(&k).ok_or_else(|| CliError::Config(format!("unknown config key {k:?}")))?;
            let v = coerce(&k, default, v)?;
            flat.insert(k, v);
        }
        Self::from_flat(flat)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
            ),
            None => None,
        };
        Self::from_sources(text.as_deref(), overrides)
    }

    /// Parses canonical text as stored in a checkpoint.
    pub fn from_canonical(text: &str) -> Result<Self, CliError> {
        Self::from_sources(Some(text), &[])
    }

    fn from_flat(flat: Flat) -> Result<Self, CliError> {
        let r = Reader(&flat);
        let kind = DatasetKind::parse(&r.string("dataset.name"))?;
        let dataset = DatasetSettings {
            kind,
            samples: r.usize("dataset.samples"),
            test_samples: r.usize("dataset.test_samples"),
            theta_prior: r.bool("dataset.theta_prior"),
            theta: r.f64("dataset.theta"),
            standardize: r.bool("dataset.standardize"),
            alpha: r.f64("dataset.alpha"),
            sigma: r.f64("dataset.sigma"),
            trajectories: r.usize("dataset.trajectories"),
            t_end: r.f64("dataset.t_end"),
        };
        if dataset.samples == 0 || dataset.test_samples == 0 {
            return Err(CliError::Config("dataset sample counts must be positive".into()));
        }
        if kind == DatasetKind::Mixture && !(-1.0..=1.0).contains(&dataset.theta) {
            return Err(CliError::Config(format!("dataset.theta = {} outside [-1, 1]", dataset.theta)));
        }

        let variant: Variant = r.string("model.variant").parse().map_err(|e: mflow::Error| CliError::Config(e.to_string()))?;
        let (n, d) = (r.usize("model.n"), r.usize("model.d"));
        let (_, data_d) = kind.dims();
        if n == 0 || n > d {
            return Err(CliError::Config(format!("need 1 <= model.n <= model.d, got n = {n}, d = {d}")));
        }
        if d != data_d as usize {
            return Err(CliError::Config(format!("model.d = {d} but {} data has {data_d} features", kind.as_str())));
        }
        let coupling = match r.string("model.coupling").as_str() {
            "spline" => CouplingKind::Spline { bins: r.usize("model.bins"), bound: r.f64("model.bound") },
            "affine" => CouplingKind::Affine,
            other => return Err(CliError::Config(format!("unknown coupling {other:?}"))),
        };
        let stack = |layers: usize, hidden: usize, blocks: usize| StackConfig {
            layers,
            kind: coupling,
            hidden,
            blocks,
            context_dim: 0,
            permute: r.bool("model.permute"),
            linear: r.bool("model.linear"),
        };
        let mut model = ModelConfig::new(variant, n, d);
        model.f = stack(r.usize("model.layers"), r.usize("model.hidden"), r.usize("model.blocks"));
        let latent_layers = r.usize("model.latent_layers");
        model.h = if latent_layers == 0 {
            LatentSpec::Gaussian
        } else {
            LatentSpec::Stack(stack(latent_layers, r.usize("model.latent_hidden"), r.usize("model.latent_blocks")))
        };
        model.encoder_hidden = r.usize("model.encoder_hidden");
        model.encoder_blocks = r.usize("model.encoder_blocks");
        if variant == Variant::Pie {
            model.epsilon = r.f64("model.epsilon");
        }
        if r.bool("model.conditional") {
            if kind != DatasetKind::Mixture {
                return Err(CliError::Config(format!("{} data carries no parameters to condition on", kind.as_str())));
            }
            model.context_dim = 1;
        }
        model.manifold_conditional = r.bool("model.manifold_conditional");
        if variant == Variant::Fom && !matches!(kind, DatasetKind::Circle | DatasetKind::Mixture) {
            return Err(CliError::Config(format!("no prescribed chart for {} data", kind.as_str())));
        }

        let train = TrainPlan {
            schedule: r.string("train.schedule").parse().map_err(|e: mflow::Error| CliError::Config(e.to_string()))?,
            epochs: r.usize("train.epochs"),
            batch_manifold: r.usize("train.batch_manifold"),
            batch_density: r.usize("train.batch_density"),
            batch_ot: r.usize("train.batch_ot"),
            lambda_m: r.f64("train.lambda_m"),
            lambda_d: r.f64("train.lambda_d"),
            nll_weight: r.f64("train.nll_weight"),
            ot_weight: r.f64("train.ot_weight"),
            learning_rate: r.f64("train.learning_rate"),
            weight_decay: r.f64("train.weight_decay"),
            sinkhorn: SinkhornOptions {
                blur: r.f64("train.sinkhorn.blur"),
                max_iter: r.usize("train.sinkhorn.max_iter"),
                tolerance: r.f64("train.sinkhorn.tolerance"),
                scaling: r.f64("train.sinkhorn.scaling"),
            },
            validation_fraction: r.f64("train.validation_fraction"),
            pretrain_fraction: r.f64("train.pretrain_fraction"),
            posttrain_fraction: r.f64("train.posttrain_fraction"),
            clip_norm: r.f64("train.clip_norm"),
        };
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let eval = EvalSettings {
            samples: r.usize("eval.samples"),
            noise: r.f64("eval.noise"),
            distance: r.bool("eval.distance"),
            reconstruction: r.bool("eval.reconstruction"),
            mmd: r.bool("eval.mmd"),
            auc: r.bool("eval.auc"),
            mmd_points: r.usize("eval.mmd_points"),
        };
        if eval.samples == 0 || eval.mmd_points == 0 {
            return Err(CliError::Config("eval sample counts must be positive".into()));
        }
        let mcmc = McmcSettings {
            observations: r.usize("mcmc.observations"),
            theta_true: r.f64("mcmc.theta_true"),
            steps: r.usize("mcmc.steps"),
            step_size: r.f64("mcmc.step_size"),
            burn_in: r.usize("mcmc.burn_in"),
            kde_bandwidth: r.f64("mcmc.kde_bandwidth"),
            likelihood: r.string("mcmc.likelihood"),
        };
        if !matches!(mcmc.likelihood.as_str(), "model" | "exact") {
            return Err(CliError::Config(format!("mcmc.likelihood must be \"model\" or \"exact\", got {:?}", mcmc.likelihood)));
        }
        if mcmc.steps <= mcmc.burn_in || mcmc.observations == 0 || !(mcmc.step_size > 0.0) || !(mcmc.kde_bandwidth > 0.0) {
            return Err(CliError::Config("mcmc needs steps > burn_in, observations, and positive step and bandwidth".into()));
        }
        let landscape = LandscapeSettings {
            alpha_min: r.f64("landscape.alpha_min"),
            alpha_max: r.f64("landscape.alpha_max"),
            sigma_min: r.f64("landscape.sigma_min"),
            sigma_max: r.f64("landscape.sigma_max"),
            resolution: r.usize("landscape.resolution"),
            samples: r.usize("landscape.samples"),
            alpha: r.f64("landscape.alpha"),
            sigma: r.f64("landscape.sigma"),
            nll_weight: r.f64("landscape.nll_weight"),
            lambda: r.f64("landscape.lambda"),
        };
        let l = &landscape;
        if !(l.alpha_max > l.alpha_min && l.sigma_max > l.sigma_min && l.sigma_min > 0.0 && l.sigma > 0.0)
            || l.resolution < 2
            || l.samples == 0
        {
            return Err(CliError::Config("landscape grid needs increasing bounds, positive widths and resolution >= 2".into()));
        }

        Ok(Self {
            seed: r.u64("seed"),
            out: PathBuf::from(r.string("out")),
            dataset,
            model,
            train,
            eval,
            mcmc,
            landscape,
            flat,
        })
    }

    /// All keys except the output directory, sorted, one `key = value`
    /// per line.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.flat.iter().filter(|(k, _)| k.as_str() != "out") {
            writeln!(s, "{k} = {v}").expect("string write");
        }
        s
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn value(&self, key: &str) -> Option<&Value> {
        self.flat.get(key)
    }

    /// Chart of the data manifold for prescribed-chart models.
    pub fn chart(&self) -> Option<Arc<dyn Chart>> {
        match self.dataset.kind {
            DatasetKind::Circle => Some(Arc::new(UnitCircle)),
            DatasetKind::Mixture => Some(Arc::new(SurfaceSpec::default())),
            _ => None,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Typed access to a map that already passed [`coerce`].
struct Reader<'a>(&'a Flat);

impl Reader<'_> {
    fn get(&self, k: &str) -> &Value {
        self.0.get(k).unwrap_or_else(|| panic!("default for {k}"))
    }
    fn f64(&self, k: &str) -> f64 {
        self.get(k).as_float().expect("coerced")
    }
    fn u64(&self, k: &str) -> u64 {
        self.get(k).as_integer().expect("coerced") as u64
    }
    fn usize(&self, k: &str) -> usize {
        self.u64(k) as usize
    }
    fn bool(&self, k: &str) -> bool {
        self.get(k).as_bool().expect("coerced")
    }
    fn string(&self, k: &str) -> String {
        self.get(k).as_str().expect("coerced").to_string()
    }
}
