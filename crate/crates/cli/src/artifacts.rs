//! CSV artifacts with a schema line: `# mflow-<kind> v<version> config=<hash> seed=<seed>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Parsed artifact table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub config_hash: String,
    pub seed: u64,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[k].parse().ok()).collect()
    }
}

pub fn schema_line(kind: &str, cfg: &ExperimentConfig) -> String {
    format!("# mflow-{kind} v{SCHEMA_VERSION} config={} seed={}", cfg.hash(), cfg.seed)
}

pub fn write_table<S: AsRef<str>>(
    path: &Path,
    kind: &str,
    cfg: &ExperimentConfig,
    header: &[S],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path)?;
    writeln!(file, "{}", schema_line(kind, cfg))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header.iter().map(|h| h.as_ref()))?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_table`], rejecting other kinds and
/// versions.
pub fn read_table(path: &Path, kind: &str) -> Result<Table, CliError> {
    let text = fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let bad = |m: &str| CliError::Format(format!("{}: {m}", path.display()));
    let mut parts = first.split_whitespace();
    if parts.next() != Some("#") || parts.next() != Some(&format!("mflow-{kind}")) {
        return Err(bad(&format!("not a {kind} table")));
    }
    if parts.next() != Some(&format!("v{SCHEMA_VERSION}")) {
        return Err(bad("unknown schema version"));
    }
    let mut config_hash = None;
    let mut seed = None;
    for p in parts {
        if let Some(h) = p.strip_prefix("config=") {
            config_hash = Some(h.to_string());
        } else if let Some(s) = p.strip_prefix("seed=") {
            seed = s.parse().ok();
        }
    }
    let (Some(config_hash), Some(seed)) = (config_hash, seed) else {
        return Err(bad("schema line lacks config hash or seed"));
    };
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok(Table { config_hash, seed, header, rows })
}

pub fn fmt(v: f64) -> String {
    format!("{v:e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_round_trip_and_reject_unknown_schemas() {
        let cfg = ExperimentConfig::from_sources(None, &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_table(&path, "losses", &cfg, &["a", "b"], vec![vec![fmt(1.5), "m".into()]]).unwrap();
        let t = read_table(&path, "losses").unwrap();
        assert_eq!(t.config_hash, cfg.hash());
        assert_eq!(t.seed, cfg.seed);
        assert_eq!(t.header, ["a", "b"]);
        assert_eq!(t.column("a"), Some(vec![1.5]));
        assert!(matches!(read_table(&path, "samples"), Err(CliError::Format(_))));
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_table(&path, "losses").is_err());
        fs::write(&path, format!("# mflow-losses v9 config={} seed=0\na\n1\n", cfg.hash())).unwrap();
        assert!(read_table(&path, "losses").is_err());
    }
}
