//! Output files and the run manifest.
//!
//! Every file is written atomically under the output directory and recorded
//! in the manifest with its SHA-256. CSV digests skip the timing columns so
//! that reruns of the same configuration hash identically.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use kld_core::io::{to_json_string, write_atomic, WaveformFile};
use kld_core::scenario::Waveform;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION_KEY: &str = "manifest_version";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Plain decimal in the usual range, exponent notation outside it.
/// Both forms round-trip exactly.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    timing: Vec<usize>,
}

impl Table {
    /// `timing` names the columns left out of the digest.
    pub fn new(header: &[&str], timing: &[&str]) -> Self {
        let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        let timing = timing
            .iter()
            .map(|t| header.iter().position(|h| h == t).expect("timing column is in the header"))
            .collect();
        Self {
            header,
            rows: Vec::new(),
            timing,
        }
    }

    pub fn with_header(header: Vec<String>, timing: &[&str]) -> Self {
        let names: Vec<&str> = header.iter().map(String::as_str).collect();
        Self::new(&names, timing)
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width matches the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    fn render(&self, with_timing: bool) -> CliResult<Vec<u8>> {
        let keep = |i: &usize| with_timing || !self.timing.contains(i);
        let mut w = csv::Writer::from_writer(Vec::new());
        let pick = |row: &[String]| -> Vec<String> {
            (0..row.len()).filter(keep).map(|i| row[i].clone()).collect()
        };
        w.write_record(pick(&self.header)).map_err(output_error)?;
        for row in &self.rows {
            w.write_record(pick(row)).map_err(output_error)?;
        }
        w.into_inner().map_err(|e| CliError::Output(e.to_string()))
    }
}

fn output_error(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

#[derive(Clone, Debug, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    /// Columns left out of the digest.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub excluded_columns: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    manifest_version: u32,
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    config: &'a C,
    started_unix_seconds: f64,
    wall_seconds: f64,
    files: &'a [FileRecord],
}

/// Output directory of one run.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileRecord>,
    started: SystemTime,
    clock: Instant,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8], digest: String, excluded: Vec<String>) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        self.files.push(FileRecord {
            name: name.to_owned(),
            sha256: digest,
            excluded_columns: excluded,
        });
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> CliResult<PathBuf> {
        let full = table.render(true)?;
        let digest = sha256_hex(&table.render(false)?);
        let excluded = table.timing.iter().map(|&i| table.header[i].clone()).collect();
        self.write(name, &full, digest, excluded)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let text = to_json_string(value).map_err(output_error)?;
        let digest = sha256_hex(text.as_bytes());
        self.write(name, text.as_bytes(), digest, Vec::new())
    }

    pub fn waveform(&mut self, name: &str, w: &Waveform) -> CliResult<PathBuf> {
        self.json(name, &WaveformFile::from(w))
    }

    /// Writes the manifest; call only after the run succeeded.
    pub fn finish<C: Serialize>(self, command: &str, seed: u64, config: &C) -> CliResult<PathBuf> {
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            started_unix_seconds: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            wall_seconds: self.clock.elapsed().as_secs_f64(),
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(output_error)?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        write_atomic(&path, text.as_bytes()).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
