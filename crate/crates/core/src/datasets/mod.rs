//! Synthetic data with known ground truth, plus CSV import/export.

mod circle;
mod line;
mod lorenz;
mod surface;

pub use circle::{circle_angle_density, circle_density, sample_circle, ANGLE_MEAN, ANGLE_STD, RADIUS_MEAN, RADIUS_STD};
pub use line::{line_landscape, line_toy, linspace, sample_line, Landscape};
pub use lorenz::{integrate_at, lorenz_rhs, sample_lorenz, LorenzConfig, LorenzSample};
pub use surface::{
    add_noise, mixture_density, nearest_orthogonal, sample_mixture, sample_surface, second_component_std, SurfaceSpec,
    ThetaSource, DAMPING, PRINTED_ROTATION, SURFACE_COEFFICIENTS,
};

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

/// Samples `x`, with optional conditioning parameters and latent
/// coordinates row-aligned to them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub theta: Option<Array2<f64>>,
    pub z: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>) -> Self {
        Self { x, theta: None, z: None }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Rows `range` of every column block.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let take = |a: &Array2<f64>| a.slice(s![range.clone(), ..]).to_owned();
        Dataset { x: take(&self.x), theta: self.theta.as_ref().map(take), z: self.z.as_ref().map(take) }
    }

    /// Rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let take = |a: &Array2<f64>| a.select(Axis(0), rows);
        Dataset { x: take(&self.x), theta: self.theta.as_ref().map(take), z: self.z.as_ref().map(take) }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = (0..self.x.ncols()).map(|i| format!("x{i}")).collect();
        let mut blocks = vec![&self.x];
        if let Some(t) = &self.theta {
            header.extend((0..t.ncols()).map(|i| format!("theta{i}")));
            blocks.push(t);
        }
        if let Some(z) = &self.z {
            header.extend((0..z.ncols()).map(|i| format!("z{i}")));
            blocks.push(z);
        }
        let mut file = fs::File::create(path)?;
        writeln!(file, "# columns: x = sample, theta = conditioning parameter, z = latent coordinate")?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let row: Vec<String> = blocks
                .iter()
                .flat_map(|b| b.row(i).iter().map(|v| format!("{v:e}")).collect::<Vec<_>>())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let kind = |h: &str| -> Result<usize> {
            for (k, prefix) in ["x", "theta", "z"].iter().enumerate() {
                if let Some(rest) = h.strip_prefix(prefix) {
                    if rest.parse::<usize>().is_ok() {
                        return Ok(k);
                    }
                }
            }
            Err(Error::Format(format!("unrecognized column {h}")))
        };
        let kinds: Vec<usize> = header.iter().map(|h| kind(h)).collect::<Result<_>>()?;
        let widths: Vec<usize> = (0..3).map(|k| kinds.iter().filter(|&&c| c == k).count()).collect();
        if widths[0] == 0 {
            return Err(Error::Format("no x columns".into()));
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 3];
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != kinds.len() {
                return Err(Error::Format(format!("row {rows} has {} fields, expected {}", rec.len(), kinds.len())));
            }
            for (field, &k) in rec.iter().zip(&kinds) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {rows}: cannot parse {field:?}")))?;
                cols[k].push(v);
            }
            rows += 1;
        }
        let block = |k: usize| -> Option<Array2<f64>> {
            (widths[k] > 0).then(|| Array2::from_shape_vec((rows, widths[k]), cols[k].clone()).expect("consistent"))
        };
        Ok(Dataset { x: block(0).expect("checked"), theta: block(1), z: block(2) })
    }
}

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Mean and population standard deviation of each column.
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
        let std = x
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (k, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[k]) / self.std[k]);
        }
        out
    }

    pub fn invert(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (k, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[k] + self.mean[k]);
        }
        out
    }

    /// Log-Jacobian of the standardization map, to convert standardized
    /// log-densities back to raw units.
    pub fn log_det(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>()
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
        format!("# per-feature standardization\nmean = {}\nstd = {}\n", join(&self.mean), join(&self.std))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (mut mean, mut std) = (None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key = value, got {line:?}")))?;
            let values: Vec<f64> = value
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number {v:?}"))))
                .collect::<Result<_>>()?;
            match key.trim() {
                "mean" => mean = Some(values),
                "std" => std = Some(values),
                other => return Err(Error::Format(format!("unknown key {other}"))),
            }
        }
        match (mean, std) {
            (Some(mean), Some(std)) if mean.len() == std.len() => Ok(Self { mean, std }),
            _ => Err(Error::Format("standardization needs mean and std of equal length".into())),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = Dataset {
            x: array![[1.0, 2.5, -3.0], [0.1, 1e-17, 4.0]],
            theta: Some(array![[0.5], [-0.25]]),
            z: Some(array![[0.3, 0.2], [1.0 / 3.0, -7.0]]),
        };
        d.write_csv(&path).unwrap();
        assert_eq!(Dataset::read_csv(&path).unwrap(), d);
        let plain = Dataset::new(array![[1.0], [2.0]]);
        plain.write_csv(&path).unwrap();
        assert_eq!(Dataset::read_csv(&path).unwrap(), plain);
    }

    #[test]
    fn malformed_csv_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "x0,foo\n1,2\n").unwrap();
        assert!(matches!(Dataset::read_csv(&path), Err(Error::Format(_))));
        fs::write(&path, "x0,x1\n1,abc\n").unwrap();
        assert!(matches!(Dataset::read_csv(&path), Err(Error::Format(_))));
    }

    #[test]
    fn standardization_round_trip() {
        let x = array![[1.0, 10.0], [3.0, 14.0], [5.0, 9.0]];
        let s = Standardization::fit(&x);
        let back = s.invert(&s.apply(&x));
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
        let parsed = Standardization::from_text(&s.to_text()).unwrap();
        assert_eq!(parsed, s);
        assert!(Standardization::from_text("mean = 1\n").is_err());
    }
}
