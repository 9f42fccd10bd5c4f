//! Output directory handling. Files are written to a temporary file in the
//! target directory and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub struct OutputDir {
    dir: PathBuf,
    force: bool,
    written: Vec<String>,
}

impl OutputDir {
    /// Creates the directory and checks that none of `planned` exists yet
    /// unless `force` is set.
    pub fn prepare(dir: &Path, force: bool, planned: &[String]) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        if !force {
            for name in planned {
                let path = dir.join(name);
                if path.exists() {
                    return Err(CliError::OutputExists { path });
                }
            }
        }
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            force,
            written: Vec::new(),
        })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if !self.force && path.exists() {
            return Err(CliError::OutputExists { path });
        }
        let err = |source| CliError::Write {
            path: path.clone(),
            source,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(err)?;
        tmp.write_all(bytes).map_err(err)?;
        tmp.as_file().sync_all().map_err(err)?;
        tmp.persist(&path).map_err(|e| err(e.error))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Serialize(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ser = |e: csv::Error| CliError::Serialize(e.to_string());
        w.write_record(&table.header).map_err(ser)?;
        for row in &table.rows {
            w.write_record(row).map_err(ser)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Serialize(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    /// Writes `manifest.json` with the effective config and every file
    /// written so far.
    pub fn finish<T: Serialize>(mut self, command: &str, config: &RunConfig, summary: T) -> Result<(), CliError> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            outputs: self.written.clone(),
            config,
            summary,
        };
        self.write_json("manifest.json", &manifest)
    }
}

#[derive(Serialize)]
struct Manifest<'a, T> {
    command: &'a str,
    version: &'a str,
    outputs: Vec<String>,
    config: &'a RunConfig,
    summary: T,
}

/// A CSV table assembled column by column.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(n_rows: usize) -> Self {
        Table {
            header: Vec::new(),
            rows: vec![Vec::new(); n_rows],
        }
    }

    pub fn column<I, S>(&mut self, name: &str, values: I) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        self.header.push(name.to_string());
        let mut n = 0;
        for (row, v) in self.rows.iter_mut().zip(values) {
            row.push(v.to_string());
            n += 1;
        }
        assert_eq!(n, self.rows.len(), "column `{name}` has the wrong length");
        self
    }

    pub fn floats(&mut self, name: &str, values: &[f64]) -> &mut Self {
        self.column(name, values.iter().map(|v| fmt_f64(*v)))
    }

    pub fn optional(&mut self, name: &str, values: &[Option<f64>]) -> &mut Self {
        self.column(name, values.iter().map(|v| v.map(fmt_f64).unwrap_or_default()))
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        v.to_string()
    }
}

pub fn manifest_and(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).chain(["manifest.json".to_string()]).collect()
}
