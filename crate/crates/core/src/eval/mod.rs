//! Metrics and inference tools.

mod inference;
mod mcmc;
mod metrics;

pub use inference::{flow_log_likelihood, SurfaceLikelihood};
pub use mcmc::{box_log_prior, metropolis_hastings, Chain};
pub use metrics::{
    grid_normalization, kde_log_posterior, mean_distance, median_bandwidth, mmd, ood_auc, ood_auc_best, OodAuc,
    OodScores,
};

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Metrics of one evaluation, tagged with their provenance. Only metrics
/// that were computed are present.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub dataset: String,
    pub checkpoint: String,
    pub seed: u64,
    pub samples: usize,
    pub metrics: IndexMap<String, f64>,
}

pub const MEAN_MANIFOLD_DISTANCE: &str = "mean_manifold_distance";
pub const MEAN_RECONSTRUCTION: &str = "mean_reconstruction_error";
pub const MMD: &str = "mmd";
pub const AUC: &str = "auc";
pub const LOG_POSTERIOR: &str = "log_posterior";

impl MetricReport {
    pub fn new(dataset: impl Into<String>, checkpoint: impl Into<String>, seed: u64, samples: usize) -> Self {
        Self { dataset: dataset.into(), checkpoint: checkpoint.into(), seed, samples, metrics: IndexMap::new() }
    }

    pub fn set(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    /// `key = value` lines, provenance first.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "dataset = {}\ncheckpoint = {}\nseed = {}\nsamples = {}\n",
            self.dataset, self.checkpoint, self.seed, self.samples
        );
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k} = {v:e}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut report = MetricReport::new("", "", 0, 0);
        let (mut have_seed, mut have_samples) = (false, false);
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Format(format!("line {}: expected key = value", line_no + 1)))?;
            let bad = || Error::Format(format!("line {}: bad value for {k}", line_no + 1));
            match k {
                "dataset" => report.dataset = v.to_string(),
                "checkpoint" => report.checkpoint = v.to_string(),
                "seed" => {
                    report.seed = v.parse().map_err(|_| bad())?;
                    have_seed = true;
                }
                "samples" => {
                    report.samples = v.parse().map_err(|_| bad())?;
                    have_samples = true;
                }
                _ => {
                    report.metrics.insert(k.to_string(), v.parse().map_err(|_| bad())?);
                }
            }
        }
        if report.dataset.is_empty() || report.checkpoint.is_empty() || !have_seed || !have_samples {
            return Err(Error::Format("report lacks dataset, checkpoint, seed or samples".into()));
        }
        Ok(report)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["dataset", "checkpoint", "seed", "samples"].iter().map(|s| s.to_string()).collect();
        h.extend(self.metrics.keys().cloned());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![self.dataset.clone(), self.checkpoint.clone(), self.seed.to_string(), self.samples.to_string()];
        r.extend(self.metrics.values().map(|v| format!("{v:e}")));
        r
    }

    /// Writes `<stem>.txt` and `<stem>.csv` next to each other.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.txt")), self.to_text())?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(self.csv_header())?;
        w.write_record(self.csv_row())?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trips() {
        let mut r = MetricReport::new("mixture", "runs/a.ckpt", 7, 1000);
        r.set(MEAN_MANIFOLD_DISTANCE, 0.0123).set(AUC, 0.91).set(MMD, 1.5e-7);
        let back = MetricReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.csv_header().len(), r.csv_row().len());
        assert_eq!(r.csv_row()[2], "7");
        assert!(MetricReport::from_text("seed = 1\n").is_err());
        assert!(MetricReport::from_text("dataset = a\ncheckpoint = b\nseed = x\nsamples = 1").is_err());

        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path(), "report").unwrap();
        let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert_eq!(MetricReport::from_text(&text).unwrap(), r);
        let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert!(csv.starts_with("dataset,checkpoint,seed,samples,mean_manifold_distance,auc,mmd"));
    }
}
