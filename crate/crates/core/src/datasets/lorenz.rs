use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::Standardization;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LorenzConfig {
    pub sigma: f64,
    pub beta: f64,
    pub rho: f64,
    pub trajectories: usize,
    pub t_end: f64,
    /// Samples are drawn from `[warmup, t_end]`.
    pub warmup: f64,
    pub seed_mean: [f64; 3],
    pub seed_std: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            beta: 8.0 / 3.0,
            rho: 28.0,
            trajectories: 100,
            t_end: 1000.0,
            warmup: 50.0,
            seed_mean: [1.0, 1.0, 1.0],
            seed_std: 0.1,
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

impl LorenzConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup >= 0.0 && self.warmup < self.t_end) {
            return Err(Error::InvalidArgument(format!(
                "warm-up {} must lie in [0, {})",
                self.warmup, self.t_end
            )));
        }
        if self.trajectories == 0 {
            return Err(Error::InvalidArgument("need at least one trajectory".into()));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

pub fn lorenz_rhs(x: [f64; 3], cfg: &LorenzConfig) -> [f64; 3] {
    [
        cfg.sigma * (x[1] - x[0]),
        x[0] * (cfg.rho - x[2]) - x[1],
        x[0] * x[1] - cfg.beta * x[2],
    ]
}

// Dormand-Prince 5(4) tableau (the system is autonomous, so no nodes)
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus fourth-order weights
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

type V3 = [f64; 3];

/// Integrates one trajectory from `y0` and evaluates it at the sorted
/// `times` by cubic Hermite interpolation between accepted steps.
pub fn integrate_at(y0: V3, times: &[f64], cfg: &LorenzConfig) -> std::result::Result<Vec<V3>, String> {
    let f = |y: V3| lorenz_rhs(y, cfg);
    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    let (mut t, mut y) = (0.0f64, y0);
    let mut fy = f(y);
    let mut h: f64 = 1e-3;
    while next < times.len() && times[next] <= 0.0 {
        out.push(y);
        next += 1;
    }
    let t_end = times.last().copied().unwrap_or(0.0);
    while next < times.len() {
        h = h.min(t_end - t).max(1e-300);
        let mut k = [[0.0; 3]; 7];
        k[0] = fy;
        let combine = |row: &[f64], len: usize, k: &[V3; 7], base: V3| -> V3 {
            let mut out = base;
            for j in 0..len {
                for i in 0..3 {
                    out[i] += h * row[j] * k[j][i];
                }
            }
            out
        };
        for s in 1..7 {
            k[s] = f(combine(&A[s], s, &k, y));
        }
        let y_new = combine(&A[6], 6, &k, y);
        let err_vec = combine(&E, 7, &k, [0.0; 3]);
        let mut acc = 0.0;
        for i in 0..3 {
            let scale = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
            acc += (err_vec[i] / scale).powi(2);
        }
        let err = (acc / 3.0).sqrt();
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite state at t = {t}"));
        }
        if err <= 1.0 {
            let t_new = t + h;
            let f_new = k[6];
            while next < times.len() && times[next] <= t_new {
                let s = (times[next] - t) / h;
                let (s2, s3) = (s * s, s * s * s);
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                out.push(std::array::from_fn(|i| {
                    h00 * y[i] + h10 * h * fy[i] + h01 * y_new[i] + h11 * h * f_new[i]
                }));
                next += 1;
            }
            t = t_new;
            y = y_new;
            fy = f_new;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-12 * t.abs().max(1.0) {
            return Err(format!("step size underflow at t = {t}"));
        }
    }
    Ok(out)
}

/// Samples from the Lorenz invariant density, before and after
/// standardization.
#[derive(Clone, Debug)]
pub struct LorenzSample {
    /// Standardized samples.
    pub data: Array2<f64>,
    pub raw: Array2<f64>,
    pub stats: Standardization,
}

/// Integrates `cfg.trajectories` seeded trajectories and draws `count`
/// points uniformly over trajectory and time in `[warmup, t_end]`.
pub fn sample_lorenz<R: Rng>(count: usize, cfg: &LorenzConfig, rng: &mut R) -> Result<LorenzSample> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    cfg.validate()?;
    let seed = Normal::new(0.0, cfg.seed_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let starts: Vec<V3> = (0..cfg.trajectories)
        .map(|_| std::array::from_fn(|i| cfg.seed_mean[i] + seed.sample(rng)))
        .collect();
    let mut requests: Vec<Vec<(f64, usize)>> = vec![Vec::new(); cfg.trajectories];
    for idx in 0..count {
        let traj = rng.random_range(0..cfg.trajectories);
        let t = rng.random_range(cfg.warmup..=cfg.t_end);
        requests[traj].push((t, idx));
    }
    for r in &mut requests {
        r.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let results: Vec<Result<Vec<(usize, V3)>>> = requests
        .par_iter()
        .enumerate()
        .map(|(traj, req)| {
            if req.is_empty() {
                return Ok(Vec::new());
            }
            let times: Vec<f64> = req.iter().map(|r| r.0).collect();
            let states = integrate_at(starts[traj], &times, cfg)
                .map_err(|reason| Error::Integration { trajectory: traj, reason })?;
            Ok(req.iter().map(|r| r.1).zip(states).collect())
        })
        .collect();
    let mut raw = Array2::zeros((count, 3));
    for res in results {
        for (idx, state) in res? {
            for k in 0..3 {
                raw[[idx, k]] = state[k];
            }
        }
    }
    let stats = Standardization::fit(&raw);
    let data = stats.apply(&raw);
    Ok(LorenzSample { data, raw, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rhs_values() {
        let c = LorenzConfig::default();
        let v = lorenz_rhs([1.0, 1.0, 1.0], &c);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 26.0);
        assert!((v[2] + 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(lorenz_rhs([0.0, 0.0, 0.0], &c), [0.0, 0.0, 0.0]);
        assert_eq!(lorenz_rhs([1.0, 0.0, 0.0], &c), [-10.0, 28.0, 0.0]);
    }

    fn axpy(y: V3, terms: &[(f64, V3)]) -> V3 {
        let mut out = y;
        for (c, k) in terms {
            for i in 0..3 {
                out[i] += c * k[i];
            }
        }
        out
    }

    #[test]
    fn integrator_matches_fixed_step_rk4() {
        let c = LorenzConfig::default();
        let f = |y: V3| lorenz_rhs(y, &c);
        let mut y = [1.0, 1.0, 1.0];
        let h = 1e-4;
        let mut reference = Vec::new();
        for step in 1..=20_000 {
            let k1 = f(y);
            let k2 = f(axpy(y, &[(h / 2.0, k1)]));
            let k3 = f(axpy(y, &[(h / 2.0, k2)]));
            let k4 = f(axpy(y, &[(h, k3)]));
            y = axpy(y, &[(h / 6.0, k1), (h / 3.0, k2), (h / 3.0, k3), (h / 6.0, k4)]);
            if step % 5000 == 0 {
                reference.push(y);
            }
        }
        let out = integrate_at([1.0, 1.0, 1.0], &[0.5, 1.0, 1.5, 2.0], &c).unwrap();
        for (a, b) in out.iter().zip(&reference) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-5, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let c = LorenzConfig { warmup: 2000.0, ..LorenzConfig::default() };
        assert!(sample_lorenz(10, &c, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn short_run_is_standardized_and_deterministic() {
        let c = LorenzConfig { trajectories: 5, t_end: 60.0, warmup: 10.0, ..LorenzConfig::default() };
        let a = sample_lorenz(2000, &c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_lorenz(2000, &c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.data, b.data);
        assert!(a.raw.iter().all(|v| v.abs() < 100.0));
        for k in 0..3 {
            let col = a.data.column(k);
            let m = col.mean().unwrap();
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
    }
}
