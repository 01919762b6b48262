use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Post-burn-in Metropolis-Hastings samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    /// One row per retained state.
    pub samples: Array2<f64>,
    /// Accepted proposals over the whole run, burn-in included.
    pub accepted: usize,
    /// Proposals with non-zero prior density.
    pub in_support: usize,
    /// Accepted proposals among those in support.
    pub accepted_in_support: usize,
    pub steps: usize,
    pub step_size: f64,
    pub burn_in: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.steps as f64
    }

    /// Acceptance rate among proposals the prior allows.
    pub fn in_support_acceptance(&self) -> f64 {
        if self.in_support == 0 {
            return 0.0;
        }
        self.accepted_in_support as f64 / self.in_support as f64
    }

    /// Writes the retained states with a `theta_<k>` header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((0..self.samples.ncols()).map(|k| format!("theta_{k}")))?;
        for row in self.samples.rows() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the states written by [`Chain::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Array2<f64>> {
        let mut r = csv::Reader::from_path(path)?;
        let cols = r.headers()?.len();
        let mut values = Vec::new();
        for rec in r.records() {
            for field in rec?.iter() {
                values.push(field.trim().parse::<f64>().map_err(|_| Error::Format(format!("cannot parse {field:?}")))?);
            }
        }
        let rows = values.len() / cols.max(1);
        Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn summary(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "steps={} burn_in={} step_size={}", self.steps, self.burn_in, self.step_size)?;
        writeln!(out, "acceptance={:.4}", self.acceptance_rate())
    }
}

/// Uniform log-density on an axis-aligned box; `-inf` outside.
pub fn box_log_prior(bounds: &[(f64, f64)]) -> impl Fn(&[f64]) -> f64 + '_ {
    let log_volume: f64 = bounds.iter().map(|(lo, hi)| (hi - lo).ln()).sum();
    move |theta| {
        let inside = theta.len() == bounds.len()
            && theta.iter().zip(bounds).all(|(t, (lo, hi))| (*lo..=*hi).contains(t));
        if inside {
            -log_volume
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Random-walk Metropolis-Hastings with isotropic Gaussian proposals of
/// standard deviation `step_size`. The first `burn_in` states are dropped,
/// so the chain has `steps - burn_in` rows. Proposals outside the prior
/// support are rejected without evaluating the likelihood; a non-finite
/// likelihood at a proposal counts as a rejection.
pub fn metropolis_hastings<R, L, P>(
    mut log_lik: L,
    log_prior: P,
    init: &[f64],
    steps: usize,
    step_size: f64,
    burn_in: usize,
    rng: &mut R,
) -> Result<Chain>
where
    R: Rng,
    L: FnMut(&[f64]) -> Result<f64>,
    P: Fn(&[f64]) -> f64,
{
    if steps <= burn_in {
        return Err(Error::InvalidArgument(format!("{steps} steps leave nothing after a burn-in of {burn_in}")));
    }
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size {step_size} must be positive")));
    }
    if init.is_empty() {
        return Err(Error::InvalidArgument("empty initial state".into()));
    }
    let mut current = init.to_vec();
    let prior0 = log_prior(&current);
    if !prior0.is_finite() {
        return Err(Error::InvalidArgument(format!("initial state {init:?} has zero prior density")));
    }
    let ll0 = log_lik(&current)?;
    if !ll0.is_finite() {
        return Err(Error::NonFinite(format!("log-likelihood {ll0} at the initial state {init:?}")));
    }
    let mut score = ll0 + prior0;

    let dim = init.len();
    let mut samples = Array2::zeros((steps - burn_in, dim));
    let (mut accepted, mut in_support, mut accepted_in_support) = (0, 0, 0);
    let mut proposal = vec![0.0; dim];
    for step in 0..steps {
        for (p, c) in proposal.iter_mut().zip(&current) {
            *p = c + step_size * rng.sample::<f64, _>(StandardNormal);
        }
        let u: f64 = rng.random();
        let prior = log_prior(&proposal);
        if prior.is_finite() {
            in_support += 1;
            let ll = log_lik(&proposal)?;
            let candidate = ll + prior;
            if candidate.is_finite() && u.ln() < candidate - score {
                current.copy_from_slice(&proposal);
                score = candidate;
                accepted += 1;
                accepted_in_support += 1;
            }
        }
        if step >= burn_in {
            for (k, v) in current.iter().enumerate() {
                samples[[step - burn_in, k]] = *v;
            }
        }
    }
    Ok(Chain { samples, accepted, in_support, accepted_in_support, steps, step_size, burn_in })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_target_accepts_every_in_support_proposal() {
        let bounds = [(-1.0, 1.0)];
        let prior = box_log_prior(&bounds);
        let chain = metropolis_hastings(|_| Ok(0.0), prior, &[0.0], 2000, 0.5, 100, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(chain.len(), 1900);
        assert!(chain.in_support > 0 && chain.in_support < 2000);
        assert_eq!(chain.in_support_acceptance(), 1.0);
        assert!(chain.samples.iter().all(|t| (-1.0..=1.0).contains(t)));
    }

    #[test]
    fn standard_normal_moments() {
        let chain = metropolis_hastings(
            |t| Ok(-0.5 * t[0] * t[0]),
            |_| 0.0,
            &[0.0],
            50_000,
            2.4,
            100,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(chain.len(), 49_900);
        let n = chain.len() as f64;
        let mean = chain.samples.sum() / n;
        let var = chain.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn rejects_bad_starts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nan = metropolis_hastings(|_| Ok(f64::NAN), |_| 0.0, &[0.0], 10, 0.1, 1, &mut rng);
        assert!(matches!(nan, Err(Error::NonFinite(_))));
        assert!(metropolis_hastings(|_| Ok(0.0), |_| 0.0, &[0.0], 10, 0.1, 10, &mut rng).is_err());
        let prior = box_log_prior(&[(-1.0, 1.0)]);
        assert!(metropolis_hastings(|_| Ok(0.0), prior, &[2.0], 10, 0.1, 1, &mut rng).is_err());
    }

    #[test]
    fn chain_csv_round_trip() {
        let chain =
            metropolis_hastings(|t| Ok(-t[0] * t[0] - t[1] * t[1]), |_| 0.0, &[0.1, 0.2], 30, 0.3, 5, &mut ChaCha8Rng::seed_from_u64(4))
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.csv");
        chain.write_csv(&path).unwrap();
        assert_eq!(Chain::read_csv(&path).unwrap(), chain.samples);
    }
}
