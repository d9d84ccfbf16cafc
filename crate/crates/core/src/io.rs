//! Dataset CSV files, metadata sidecars, JSON outputs and run manifests.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, GeneratorParams, Row};
use crate::error::{io_err, Error, Result};
use crate::nuisance::{NuisanceSet, Provenance};

pub const DATASET_COLUMNS: [&str; 6] = ["z", "a", "y0", "y1", "t", "y"];
pub const NUISANCE_COLUMNS: [&str; 3] = ["pi_hat", "s0_hat", "obs_hat"];

/// Sidecar describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub n: usize,
    pub has_oracle: bool,
    pub generator: Option<GeneratorParams>,
    pub nuisance_provenance: Option<Provenance>,
    pub tool_version: String,
}

pub fn metadata_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Write `ds` (and optionally aligned nuisance columns) plus its sidecar.
pub fn write_dataset(path: &Path, ds: &Dataset, nuisances: Option<&NuisanceSet>) -> Result<()> {
    if let Some(ns) = nuisances {
        ns.check_aligned(ds)?;
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header: Vec<&str> = DATASET_COLUMNS.to_vec();
    if let Some(ns) = nuisances {
        header.extend(&NUISANCE_COLUMNS[..2]);
        if ns.obs_scores.is_some() {
            header.push(NUISANCE_COLUMNS[2]);
        }
    }
    w.write_record(&header)?;
    let opt = |c: &Option<Vec<u8>>, i: usize| c.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
    for i in 0..ds.len() {
        let mut rec = vec![
            ds.z[i].to_string(),
            ds.a[i].to_string(),
            opt(&ds.y0, i),
            opt(&ds.y1, i),
            ds.t[i].to_string(),
            ds.y[i].to_string(),
        ];
        if let Some(ns) = nuisances {
            rec.push(ns.propensity[i].to_string());
            rec.push(ns.cf_scores[i].to_string());
            if let Some(o) = &ns.obs_scores {
                rec.push(o[i].to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    let meta = DatasetMetadata {
        n: ds.len(),
        has_oracle: ds.has_oracle(),
        generator: ds.params,
        nuisance_provenance: nuisances.map(|n| n.provenance.clone()),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_json(&metadata_path(path), &meta)
}

fn parse_err(path: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Read a dataset file. `y0`/`y1` may be absent or left empty on every row;
/// nuisance columns are returned when present. A sidecar, if found, restores
/// the generator parameters.
pub fn read_dataset(path: &Path) -> Result<(Dataset, Option<NuisanceSet>)> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = std::collections::HashMap::new();
    for name in ["z", "a", "t", "y"] {
        let i = col(name).ok_or_else(|| parse_err(path, 1, name, "missing required column"))?;
        idx.insert(name, i);
    }
    let (c_y0, c_y1) = (col("y0"), col("y1"));
    let (c_pi, c_s0, c_obs) = (col("pi_hat"), col("s0_hat"), col("obs_hat"));
    if c_pi.is_some() != c_s0.is_some() {
        return Err(parse_err(path, 1, "pi_hat", "pi_hat and s0_hat must appear together"));
    }

    let mut rows = Vec::new();
    let mut pi = Vec::new();
    let mut s0 = Vec::new();
    let mut obs = Vec::new();
    let mut oracle_seen: Option<bool> = None;
    for (k, rec) in r.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let real = |name: &str, c: usize| -> Result<f64> {
            let s = field(c);
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, name, format!("expected a finite number, got `{s}`")))
        };
        let bit = |name: &str, c: usize| -> Result<u8> {
            match field(c) {
                "0" => Ok(0),
                "1" => Ok(1),
                s => Err(parse_err(path, line, name, format!("expected 0 or 1, got `{s}`"))),
            }
        };
        let opt_bit = |name: &str, c: Option<usize>| -> Result<Option<u8>> {
            match c {
                Some(c) if !field(c).is_empty() => bit(name, c).map(Some),
                _ => Ok(None),
            }
        };
        let y0 = opt_bit("y0", c_y0)?;
        let y1 = opt_bit("y1", c_y1)?;
        if y0.is_some() != y1.is_some() {
            return Err(parse_err(path, line, "y1", "y0 and y1 must be both present or both empty"));
        }
        match oracle_seen {
            None => oracle_seen = Some(y0.is_some()),
            Some(s) if s != y0.is_some() => {
                return Err(parse_err(path, line, "y0", "potential outcomes present on some rows only"))
            }
            _ => {}
        }
        rows.push(Row {
            z: real("z", idx["z"])?,
            a: bit("a", idx["a"])?,
            y0,
            y1,
            t: bit("t", idx["t"])?,
            y: bit("y", idx["y"])?,
        });
        if let (Some(cp), Some(cs)) = (c_pi, c_s0) {
            pi.push(real("pi_hat", cp)?);
            s0.push(real("s0_hat", cs)?);
            if let Some(co) = c_obs {
                obs.push(real("obs_hat", co)?);
            }
        }
    }
    let mut ds = Dataset::from_rows(&rows)?;
    let meta_path = metadata_path(path);
    let meta: Option<DatasetMetadata> = if meta_path.exists() {
        Some(read_json(&meta_path)?)
    } else {
        None
    };
    ds.params = meta.as_ref().and_then(|m| m.generator);
    let nuisances = c_pi.map(|_| NuisanceSet {
        propensity: pi,
        cf_scores: s0,
        obs_scores: c_obs.map(|_| obs),
        provenance: meta
            .and_then(|m| m.nuisance_provenance)
            .unwrap_or(Provenance {
                propensity: "file".into(),
                counterfactual: "file".into(),
                observational: c_obs.map(|_| "file".into()),
            }),
    });
    Ok((ds, nuisances))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        parse_err(path, e.line() as u64, &e.column().to_string(), e.to_string())
    })
}

/// Record of one CLI run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: std::env::args().collect(),
            seed,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate;

    #[test]
    fn dataset_round_trip_with_nuisances() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let ds = generate(&GeneratorParams::new(300, 0.1, 1.6, 1)).unwrap();
        let ns = NuisanceSet::oracle(&ds, ds.params.as_ref().unwrap());
        write_dataset(&p, &ds, Some(&ns)).unwrap();
        let (back, bns) = read_dataset(&p).unwrap();
        assert_eq!(back, ds);
        assert_eq!(bns.unwrap(), ns);
    }

    #[test]
    fn observational_file_without_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        std::fs::write(&p, "z,a,t,y\n0.5,1,0,1\n-1,0,1,0\n").unwrap();
        let (ds, ns) = read_dataset(&p).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(!ds.has_oracle());
        assert!(ns.is_none());
    }

    #[test]
    fn parse_error_names_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "z,a,y0,y1,t,y\n0.1,0,0,0,0,0\n0.2,2,0,0,0,0\n").unwrap();
        match read_dataset(&p).unwrap_err() {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "a");
            }
            e => panic!("unexpected {e}"),
        }
        std::fs::write(&p, "z,a,t\n0.1,0,0\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Parse { .. })));
    }
}
