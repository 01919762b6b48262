//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MFLOWCKP" | version u32
//! config text      (u64 length + UTF-8)
//! seed u64
//! standardization  (u8 flag [+ u64 length + UTF-8])
//! rng state        (u8 flag [+ 32-byte seed + u64 stream + u128 word position])
//! arrays           u64 count, each: u32 name length + name, u64 rows, u64 cols, f64 values
//! permutations     u32 flow count, each: u32 name length + name, u32 count, each: u32 size + u32 indices
//! SHA-256 of everything above (32 bytes)
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use mflow::datasets::Standardization;
use mflow::models::{ManifoldFlow, Variant};
use mflow::transforms::{Flow, Permutation};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::CliError;

pub const MAGIC: &[u8; 8] = b"MFLOWCKP";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Canonical experiment config the model was built from.
    pub config: String,
    pub seed: u64,
    pub standardization: Option<Standardization>,
    pub rng: Option<RngState>,
    pub arrays: Vec<(String, Array2<f64>)>,
    pub permutations: Vec<(String, Vec<Vec<usize>>)>,
}

fn perms(flow: &Flow) -> Vec<Vec<usize>> {
    flow.permutations().iter().map(|p| p.indices().to_vec()).collect()
}

/// Fresh model for `cfg`, parameters drawn from `rng`.
pub fn build_model(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<ManifoldFlow, CliError> {
    let built = if cfg.model.variant == Variant::Fom {
        let chart = cfg.chart().ok_or_else(|| CliError::Config("no chart for this dataset".into()))?;
        ManifoldFlow::fom(Arc::clone(&chart), &cfg.model.h, cfg.model.context_dim, rng)
    } else {
        ManifoldFlow::build(&cfg.model, rng)
    };
    built.map_err(|e| CliError::Config(format!("cannot build model: {e}")))
}

impl Checkpoint {
    pub fn capture(
        model: &ManifoldFlow,
        cfg: &ExperimentConfig,
        standardization: Option<&Standardization>,
        rng: Option<&ChaCha8Rng>,
    ) -> Self {
        Self {
            config: cfg.canonical(),
            seed: cfg.seed,
            standardization: standardization.cloned(),
            rng: rng.map(RngState::capture),
            arrays: model.store.iter().map(|(_, name, p)| (name.to_string(), p.value.clone())).collect(),
            permutations: vec![("f".into(), perms(&model.f)), ("h".into(), perms(&model.h))],
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::from_canonical(&self.config)
            .map_err(|e| CliError::Checkpoint(format!("stored config is invalid: {e}")))
    }

    /// Rebuilds the model and installs the stored parameters and
    /// permutations. Every model parameter must be present exactly once.
    pub fn model(&self) -> Result<ManifoldFlow, CliError> {
        let cfg = self.experiment()?;
        let mut model = build_model(&cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        if self.arrays.len() != model.store.len() {
            return Err(CliError::Checkpoint(format!(
                "checkpoint holds {} arrays, model has {} parameters",
                self.arrays.len(),
                model.store.len()
            )));
        }
        for (name, value) in &self.arrays {
            model.store.set(name, value.clone()).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        }
        for (name, stored) in &self.permutations {
            let list = stored
                .iter()
                .map(|p| Permutation::new(p.clone()))
                .collect::<mflow::Result<Vec<_>>>()
                .map_err(|e| CliError::Checkpoint(e.to_string()))?;
            let flow = match name.as_str() {
                "f" => &mut model.f,
                "h" => &mut model.h,
                other => return Err(CliError::Checkpoint(format!("unknown flow {other:?}"))),
            };
            flow.set_permutations(list).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_bytes(&mut b, self.config.as_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        match &self.standardization {
            Some(s) => {
                b.push(1);
                put_bytes(&mut b, s.to_text().as_bytes());
            }
            None => b.push(0),
        }
        match &self.rng {
            Some(r) => {
                b.push(1);
                b.extend_from_slice(&r.seed);
                b.extend_from_slice(&r.stream.to_le_bytes());
                b.extend_from_slice(&r.word_pos.to_le_bytes());
            }
            None => b.push(0),
        }
        b.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for (name, a) in &self.arrays {
            put_name(&mut b, name);
            b.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
            b.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
            for v in a.iter() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b.extend_from_slice(&(self.permutations.len() as u32).to_le_bytes());
        for (name, list) in &self.permutations {
            put_name(&mut b, name);
            b.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for p in list {
                b.extend_from_slice(&(p.len() as u32).to_le_bytes());
                for &i in p {
                    b.extend_from_slice(&(i as u32).to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    /// Parses a checkpoint. The checksum is verified before any field is
    /// interpreted, so corrupted files never yield partial state.
    pub fn decode(bytes: &[u8]) -> Result<Self, CliError> {
        let err = |m: String| CliError::Checkpoint(m);
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(err(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(err("not a checkpoint (bad magic bytes)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(err("checksum mismatch; the file is corrupted or truncated".into()));
        }
        let mut c = Cursor { b: body, pos: MAGIC.len() };
        let version = c.u32()?;
        if version != VERSION {
            return Err(err(format!("unsupported checkpoint version {version}; this build reads version {VERSION}")));
        }
        let config = c.string()?;
        let seed = c.u64()?;
        let standardization = match c.u8()? {
            0 => None,
            1 => Some(Standardization::from_text(&c.string()?).map_err(|e| err(e.to_string()))?),
            f => return Err(err(format!("bad standardization flag {f}"))),
        };
        let rng = match c.u8()? {
            0 => None,
            1 => {
                let seed: [u8; 32] = c.take(32)?.try_into().expect("32 bytes");
                let stream = c.u64()?;
                let word_pos = u128::from_le_bytes(c.take(16)?.try_into().expect("16 bytes"));
                Some(RngState { seed, stream, word_pos })
            }
            f => return Err(err(format!("bad rng flag {f}"))),
        };
        let count = c.u64()? as usize;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let name = c.name()?;
            let (rows, cols) = (c.u64()? as usize, c.u64()? as usize);
            let len = rows.checked_mul(cols).filter(|l| l.checked_mul(8).is_some()).ok_or_else(|| err("array too large".into()))?;
            let raw = c.take(len * 8)?;
            let values: Vec<f64> = raw.chunks_exact(8).map(|ch| f64::from_le_bytes(ch.try_into().expect("8 bytes"))).collect();
            arrays.push((name, Array2::from_shape_vec((rows, cols), values).expect("sized")));
        }
        let flows = c.u32()?;
        let mut permutations = Vec::new();
        for _ in 0..flows {
            let name = c.name()?;
            let k = c.u32()?;
            let mut list = Vec::new();
            for _ in 0..k {
                let dim = c.u32()? as usize;
                list.push((0..dim).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?);
            }
            permutations.push((name, list));
        }
        if c.pos != body.len() {
            return Err(err(format!("{} unexpected trailing bytes", body.len() - c.pos)));
        }
        Ok(Self { config, seed, standardization, rng, arrays, permutations })
    }

    /// Writes through a temporary file so a crash never leaves a partial
    /// checkpoint under the final name.
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String, CliError> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

fn put_bytes(b: &mut Vec<u8>, data: &[u8]) {
    b.extend_from_slice(&(data.len() as u64).to_le_bytes());
    b.extend_from_slice(data);
}

fn put_name(b: &mut Vec<u8>, name: &str) {
    b.extend_from_slice(&(name.len() as u32).to_le_bytes());
    b.extend_from_slice(name.as_bytes());
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| CliError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.b[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn utf8(&mut self, n: usize) -> Result<String, CliError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CliError::Checkpoint("invalid UTF-8".into()))
    }
    fn string(&mut self) -> Result<String, CliError> {
        let n = self.u64()? as usize;
        self.utf8(n)
    }
    fn name(&mut self) -> Result<String, CliError> {
        let n = self.u32()? as usize;
        self.utf8(n)
    }
}
