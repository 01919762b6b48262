//! Subcommand implementations. Each one derives independent random streams
//! from the seed, so re-running with the same inputs reproduces every
//! artifact.

use std::fs;
use std::path::{Path, PathBuf};

use mflow::datasets::{
    add_noise, line_landscape, linspace, sample_circle, sample_line, sample_lorenz, sample_surface, Dataset, LorenzConfig,
    Standardization, SurfaceSpec, ThetaSource,
};
use mflow::eval::{
    box_log_prior, flow_log_likelihood, kde_log_posterior, mean_distance, metropolis_hastings, mmd, ood_auc_best,
    Chain, MetricReport, OodScores, SurfaceLikelihood, AUC, LOG_POSTERIOR, MEAN_MANIFOLD_DISTANCE, MEAN_RECONSTRUCTION,
    MMD,
};
use mflow::models::{ManifoldFlow, SampleMode, Variant};
use mflow::training::{line_toy_loss, train, PhaseLog};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::artifacts::{fmt, write_table};
use crate::checkpoint::{build_model, file_hash, Checkpoint};
use crate::config::{DatasetKind, ExperimentConfig};
use crate::CliError;

const DATA_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const MCMC_STREAM: u64 = 4;
const LANDSCAPE_STREAM: u64 = 5;

pub const CHECKPOINT_FILE: &str = "model.ckpt";

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Training and test data in model units.
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
    pub standardization: Option<Standardization>,
}

/// Generates train and test sets in one draw, so any subcommand with the
/// same config sees the same split.
pub fn make_data(cfg: &ExperimentConfig) -> Result<Data, CliError> {
    let ds = &cfg.dataset;
    let total = ds.samples + ds.test_samples;
    let mut rng = stream(cfg.seed, DATA_STREAM);
    let all = match ds.kind {
        DatasetKind::Circle => Dataset::new(sample_circle(total, &mut rng)?),
        DatasetKind::Mixture => {
            let theta = if ds.theta_prior { ThetaSource::Prior } else { ThetaSource::Fixed(ds.theta) };
            sample_surface(&SurfaceSpec::default(), total, theta, &mut rng)?
        }
        DatasetKind::Lorenz => {
            let lc = LorenzConfig { trajectories: ds.trajectories, t_end: ds.t_end, ..LorenzConfig::default() };
            Dataset::new(sample_lorenz(total, &lc, &mut rng)?.raw)
        }
        DatasetKind::Line => Dataset::new(sample_line(total, ds.alpha, ds.sigma, &mut rng)),
    };
    let mut train = all.slice(0..ds.samples);
    let mut test = all.slice(ds.samples..total);
    let standardization = ds.standardize.then(|| Standardization::fit(&train.x));
    if let Some(st) = &standardization {
        train.x = st.apply(&train.x);
        test.x = st.apply(&test.x);
    }
    Ok(Data { train, test, standardization })
}

/// Distance of a raw-unit point to the true data manifold, if known.
fn true_distance(cfg: &ExperimentConfig) -> Option<Box<dyn Fn(&[f64]) -> f64>> {
    match cfg.dataset.kind {
        DatasetKind::Circle => Some(Box::new(|x: &[f64]| (x[0].hypot(x[1]) - 1.0).abs())),
        DatasetKind::Mixture => {
            let spec = SurfaceSpec::default();
            Some(Box::new(move |x: &[f64]| spec.distance([x[0], x[1], x[2]])))
        }
        DatasetKind::Line => {
            let a = cfg.dataset.alpha;
            Some(Box::new(move |x: &[f64]| (x[1] * a.cos() - x[0] * a.sin()).abs()))
        }
        DatasetKind::Lorenz => None,
    }
}

fn to_raw(st: Option<&Standardization>, x: &Array2<f64>) -> Array2<f64> {
    st.map_or_else(|| x.clone(), |s| s.invert(x))
}

fn matrix_rows(x: &Array2<f64>, extra: Option<&Array2<f64>>) -> Vec<Vec<String>> {
    (0..x.nrows())
        .map(|i| {
            let mut r: Vec<String> = x.row(i).iter().map(|v| fmt(*v)).collect();
            if let Some(e) = extra {
                r.extend(e.row(i).iter().map(|v| fmt(*v)));
            }
            r
        })
        .collect()
}

fn column_names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

/// Context rows for `count` generated samples.
fn sample_context(cfg: &ExperimentConfig, model: &ManifoldFlow, count: usize, rng: &mut ChaCha8Rng) -> Option<Array2<f64>> {
    (model.context_dim > 0).then(|| {
        Array2::from_shape_fn((count, model.context_dim), |_| {
            if cfg.dataset.theta_prior {
                rng.random_range(-1.0..=1.0)
            } else {
                cfg.dataset.theta
            }
        })
    })
}

/// Reconstruction error per row for learned-manifold variants.
fn recon(model: &ManifoldFlow, x: &Array2<f64>, ctx: Option<&Array2<f64>>) -> Result<Option<Vec<f64>>, CliError> {
    if !model.variant.has_learned_manifold() {
        return Ok(None);
    }
    Ok(Some(model.mflow_project(x, ctx)?.recon))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub losses: PathBuf,
    pub log: PhaseLog,
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    let data = make_data(cfg)?;
    let mut model = build_model(cfg, &mut stream(cfg.seed, INIT_STREAM))?;
    let test_ctx = if model.context_dim > 0 { data.test.theta.clone() } else { None };
    let before = recon(&model, &data.test.x, test_ctx.as_ref())?;
    let mut rng = stream(cfg.seed, TRAIN_STREAM);
    let log = train(&mut model, &data.train, &cfg.train, &mut rng)?;
    let after = recon(&model, &data.test.x, test_ctx.as_ref())?;

    fs::create_dir_all(&cfg.out)?;
    let checkpoint = cfg.out.join(CHECKPOINT_FILE);
    Checkpoint::capture(&model, cfg, data.standardization.as_ref(), Some(&rng)).save(&checkpoint)?;
    let losses = cfg.out.join("losses.csv");
    let rows = log.records.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            r.phase.label().to_string(),
            fmt(r.train_loss),
            fmt(r.val_loss),
            u8::from(log.restored.contains(&r.snapshot)).to_string(),
        ]
    });
    write_table(&losses, "losses", cfg, &["epoch", "phase", "train_loss", "val_loss", "restored"], rows)?;

    let mut summary = MetricReport::new(cfg.dataset.kind.as_str(), file_label(&checkpoint)?, cfg.seed, data.train.len());
    if let Some(v) = log.final_validation() {
        summary.set("final_validation_loss", v);
    }
    if let (Some(b), Some(a)) = (before, after) {
        summary.set("initial_test_reconstruction", mean(&b));
        summary.set(MEAN_RECONSTRUCTION, mean(&a));
    }
    write_report(cfg, &summary, "train_report")?;
    Ok(TrainOutcome { checkpoint, losses, log })
}

fn file_label(path: &Path) -> Result<String, CliError> {
    Ok(format!("{} sha256:{}", path.display(), file_hash(path)?))
}

fn write_report(cfg: &ExperimentConfig, report: &MetricReport, stem: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out)?;
    let header = crate::artifacts::schema_line("report", cfg);
    let path = cfg.out.join(format!("{stem}.txt"));
    fs::write(&path, format!("{header}\n{}", report.to_text()))?;
    write_table(&cfg.out.join(format!("{stem}.csv")), "report", cfg, &report.csv_header(), [report.csv_row()])?;
    Ok(path)
}

/// Loads a checkpoint and checks it against the run config.
pub fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<(Checkpoint, ExperimentConfig, ManifoldFlow), CliError> {
    let ck = Checkpoint::load(path)?;
    let stored = ck.experiment()?;
    let (a, b) = (&stored.model, &cfg.model);
    if a.variant != b.variant || a.n != b.n || a.d != b.d || stored.dataset.kind != cfg.dataset.kind {
        return Err(CliError::Config(format!(
            "checkpoint holds a {} (n = {}, d = {}) model for {} data; the config asks for {} (n = {}, d = {}) on {}",
            a.variant,
            a.n,
            a.d,
            stored.dataset.kind.as_str(),
            b.variant,
            b.n,
            b.d,
            cfg.dataset.kind.as_str()
        )));
    }
    let model = ck.model()?;
    Ok((ck, stored, model))
}

fn generate(cfg: &ExperimentConfig, model: &ManifoldFlow, count: usize, rng: &mut ChaCha8Rng) -> Result<(Array2<f64>, Option<Array2<f64>>), CliError> {
    let ctx = sample_context(cfg, model, count, rng);
    let x = model.sample(count, ctx.as_ref(), rng, SampleMode::Full)?;
    Ok((x, ctx))
}

/// Writes `eval.samples` model samples, in data units, to `samples.csv`.
pub fn run_sample(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<PathBuf, CliError> {
    let (ck, _, model) = load_model(cfg, checkpoint)?;
    let mut rng = stream(cfg.seed, EVAL_STREAM);
    let (x, ctx) = generate(cfg, &model, cfg.eval.samples, &mut rng)?;
    let raw = to_raw(ck.standardization.as_ref(), &x);
    let mut header = column_names("x", raw.ncols());
    if let Some(c) = &ctx {
        header.extend(column_names("theta", c.ncols()));
    }
    let path = cfg.out.join("samples.csv");
    write_table(&path, "samples", cfg, &header, matrix_rows(&raw, ctx.as_ref()))?;
    Ok(path)
}

/// Computes the selected metrics and writes `report.txt` / `report.csv`.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<MetricReport, CliError> {
    let (ck, stored, model) = load_model(cfg, checkpoint)?;
    let data = make_data(&stored)?;
    let st = ck.standardization.as_ref();
    let ev = &cfg.eval;
    let mut rng = stream(cfg.seed, EVAL_STREAM);
    let (samples, sample_ctx) = generate(cfg, &model, ev.samples, &mut rng)?;
    let mut report = MetricReport::new(cfg.dataset.kind.as_str(), file_label(checkpoint)?, cfg.seed, ev.samples);

    if ev.distance {
        if let Some(dist) = true_distance(&stored) {
            report.set(MEAN_MANIFOLD_DISTANCE, mean_distance(&to_raw(st, &samples), dist));
        }
    }
    let test_ctx = if model.context_dim > 0 { data.test.theta.clone() } else { None };
    if ev.reconstruction {
        if let Some(r) = recon(&model, &data.test.x, test_ctx.as_ref())? {
            report.set(MEAN_RECONSTRUCTION, mean(&r));
            let own = recon(&model, &samples, sample_ctx.as_ref())?.expect("learned manifold");
            report.set("sample_reconstruction_error", own.iter().copied().fold(0.0, f64::max));
        }
    }
    if ev.mmd {
        let k = ev.mmd_points.min(samples.nrows()).min(data.test.len());
        let a = samples.slice(s![..k, ..]).to_owned();
        let b = data.test.x.slice(s![..k, ..]).to_owned();
        report.set(MMD, mmd(&a, &b, None)?);
    }
    if ev.auc {
        if model.variant == Variant::Fom {
            log::warn!("skipping AUC: prescribed-chart densities are undefined off the manifold");
        } else {
            let noisy_raw = add_noise(&to_raw(st, &data.test.x), ev.noise, &mut rng);
            let noisy = st.map_or_else(|| noisy_raw.clone(), |s| s.apply(&noisy_raw));
            let scores = |x: &Array2<f64>| -> Result<OodScores, CliError> {
                let d = model.log_prob(x, test_ctx.as_ref())?;
                Ok(OodScores { log_likelihood: d.log_prob, reconstruction: d.recon })
            };
            let auc = ood_auc_best(&scores(&data.test.x)?, &scores(&noisy)?)?;
            report.set(AUC, auc.best).set("auc_likelihood", auc.likelihood).set("auc_reconstruction", auc.reconstruction);
        }
    }
    write_report(cfg, &report, "report")?;
    Ok(report)
}

fn chain_rows(chain: &Chain) -> Vec<Vec<String>> {
    matrix_rows(&chain.samples, None)
}

/// Posterior sampling for the mixture parameter from observations at
/// `mcmc.theta_true`, with the model likelihood and/or the exact one.
pub fn run_mcmc(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<MetricReport, CliError> {
    if cfg.dataset.kind != DatasetKind::Mixture {
        return Err(CliError::Config("mcmc runs on the mixture dataset only".into()));
    }
    let m = &cfg.mcmc;
    let mut rng = stream(cfg.seed, MCMC_STREAM);
    let spec = SurfaceSpec::default();
    let obs = sample_surface(&spec, m.observations, ThetaSource::Fixed(m.theta_true), &mut rng)?;
    let bounds = [(-1.0, 1.0)];
    let exact = SurfaceLikelihood::new(&spec, &obs.x)?;
    let reference = metropolis_hastings(|t| Ok(exact.at(t[0])), box_log_prior(&bounds), &[0.0], m.steps, m.step_size, m.burn_in, &mut rng)?;
    write_table(&cfg.out.join("chain_true.csv"), "chain", cfg, &["theta0"], chain_rows(&reference))?;
    let prior = Array2::from_shape_fn((reference.len(), 1), |_| rng.random_range(-1.0..=1.0));
    let mmd_prior = mmd(&reference.samples, &prior, None)?;

    let (chain, label) = if m.likelihood == "model" {
        let path = checkpoint.ok_or_else(|| CliError::Config("model likelihood needs a checkpoint".into()))?;
        let (ck, _, model) = load_model(cfg, path)?;
        let x = ck.standardization.as_ref().map_or_else(|| obs.x.clone(), |s| s.apply(&obs.x));
        let lik = flow_log_likelihood(&model, &x)?;
        let chain = metropolis_hastings(lik, box_log_prior(&bounds), &[0.0], m.steps, m.step_size, m.burn_in, &mut rng)?;
        (chain, file_label(path)?)
    } else {
        (reference.clone(), "exact-likelihood".to_string())
    };
    write_table(&cfg.out.join("chain.csv"), "chain", cfg, &["theta0"], chain_rows(&chain))?;

    let mut report = MetricReport::new("mixture", label, cfg.seed, chain.len());
    report
        .set(LOG_POSTERIOR, kde_log_posterior(&chain.samples, &[m.theta_true], m.kde_bandwidth)?)
        .set("acceptance_rate", chain.acceptance_rate())
        .set(MMD, mmd(&chain.samples, &reference.samples, None)?)
        .set("mmd_true_vs_prior", mmd_prior);
    write_report(cfg, &report, "mcmc_report")?;
    Ok(report)
}

/// Writes the line-model loss landscape to `landscape.csv`.
pub fn run_landscape(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let l = &cfg.landscape;
    let data = sample_line(l.samples, l.alpha, l.sigma, &mut stream(cfg.seed, LANDSCAPE_STREAM));
    let alphas = linspace(l.alpha_min, l.alpha_max, l.resolution);
    let sigmas = linspace(l.sigma_min, l.sigma_max, l.resolution);
    let land = line_landscape(&data, &alphas, &sigmas)?;
    let mut rows = Vec::with_capacity(alphas.len() * sigmas.len());
    for (i, &a) in alphas.iter().enumerate() {
        for (j, &sg) in sigmas.iter().enumerate() {
            let combined = line_toy_loss(a, sg, &data, l.nll_weight, l.lambda)?;
            rows.push(vec![fmt(a), fmt(sg), fmt(land.loglik[[i, j]]), fmt(land.recon[[i, j]]), fmt(combined)]);
        }
    }
    let path = cfg.out.join("landscape.csv");
    write_table(&path, "landscape", cfg, &["alpha", "sigma", "naive_loglik", "recon", "combined"], rows)?;
    Ok(path)
}
