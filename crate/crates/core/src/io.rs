//! JSON files for scenarios and waveforms.
//!
//! Matrices are arrays of rows and each entry is a `[re, im]` pair. Writers
//! print every number with 17 significant digits, so files read back to the
//! same bits.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, HermitianMatrix};
use crate::random_access::{RandomAccessScenario, WaveformSet};
use crate::scenario::{SensingScenario, Waveform};

/// Row-major `[re, im]` encoding of a complex matrix.
pub type MatrixJson = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_json(m: &ComplexMatrix) -> MatrixJson {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

pub fn matrix_from_json(rows: &MatrixJson) -> Result<ComplexMatrix> {
    let n_cols = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().position(|row| row.len() != n_cols) {
        return Err(Error::Format(format!("row {r} has {} entries, expected {n_cols}", rows[r].len())));
    }
    Ok(ComplexMatrix::from_fn(rows.len(), n_cols, |r, c| {
        Complex64::new(rows[r][c][0], rows[r][c][1])
    }))
}

fn hermitian(name: &str, rows: &MatrixJson) -> Result<HermitianMatrix> {
    HermitianMatrix::new(matrix_from_json(rows)?).map_err(|e| Error::Format(format!("{name}: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n_tx: usize,
    pub n_rx: usize,
    pub snapshots: usize,
    pub power_budget: f64,
    pub r_target: MatrixJson,
    pub r_clutter0: MatrixJson,
    pub r_clutter1: MatrixJson,
    pub r_noise: MatrixJson,
}

impl From<&SensingScenario> for ScenarioFile {
    fn from(sc: &SensingScenario) -> Self {
        Self {
            n_tx: sc.n_tx,
            n_rx: sc.n_rx,
            snapshots: sc.snapshots,
            power_budget: sc.power_budget,
            r_target: matrix_to_json(&sc.r_target),
            r_clutter0: matrix_to_json(&sc.r_clutter0),
            r_clutter1: matrix_to_json(&sc.r_clutter1),
            r_noise: matrix_to_json(&sc.r_noise),
        }
    }
}

impl TryFrom<&ScenarioFile> for SensingScenario {
    type Error = Error;

    fn try_from(f: &ScenarioFile) -> Result<Self> {
        let sc = SensingScenario {
            n_tx: f.n_tx,
            n_rx: f.n_rx,
            snapshots: f.snapshots,
            power_budget: f.power_budget,
            r_target: hermitian("r_target", &f.r_target)?,
            r_clutter0: hermitian("r_clutter0", &f.r_clutter0)?,
            r_clutter1: hermitian("r_clutter1", &f.r_clutter1)?,
            r_noise: hermitian("r_noise", &f.r_noise)?,
        };
        sc.check_shapes()?;
        Ok(sc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaScenarioFile {
    pub n_devices: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub snapshots: usize,
    pub power_budget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_power: Option<Vec<f64>>,
    pub priors: Vec<f64>,
    pub r_device: Vec<MatrixJson>,
    pub r_noise: MatrixJson,
}

impl From<&RandomAccessScenario> for RaScenarioFile {
    fn from(sc: &RandomAccessScenario) -> Self {
        Self {
            n_devices: sc.n_devices,
            n_tx: sc.n_tx,
            n_rx: sc.n_rx,
            snapshots: sc.snapshots,
            power_budget: sc.power_budget,
            device_power: sc.device_power.clone(),
            priors: sc.priors.clone(),
            r_device: sc.r_device.iter().map(|r| matrix_to_json(r)).collect(),
            r_noise: matrix_to_json(&sc.r_noise),
        }
    }
}

impl TryFrom<&RaScenarioFile> for RandomAccessScenario {
    type Error = Error;

    fn try_from(f: &RaScenarioFile) -> Result<Self> {
        Ok(RandomAccessScenario {
            n_devices: f.n_devices,
            n_tx: f.n_tx,
            n_rx: f.n_rx,
            snapshots: f.snapshots,
            power_budget: f.power_budget,
            device_power: f.device_power.clone(),
            priors: f.priors.clone(),
            r_device: f
                .r_device
                .iter()
                .enumerate()
                .map(|(i, r)| hermitian(&format!("r_device[{i}]"), r))
                .collect::<Result<_>>()?,
            r_noise: hermitian("r_noise", &f.r_noise)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformFile {
    pub x: MatrixJson,
}

impl From<&Waveform> for WaveformFile {
    fn from(w: &Waveform) -> Self {
        Self { x: matrix_to_json(w.x()) }
    }
}

impl TryFrom<&WaveformFile> for Waveform {
    type Error = Error;

    fn try_from(f: &WaveformFile) -> Result<Self> {
        Ok(Waveform::new(matrix_from_json(&f.x)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformSetFile {
    pub x: Vec<MatrixJson>,
}

impl From<&WaveformSet> for WaveformSetFile {
    fn from(xs: &WaveformSet) -> Self {
        Self {
            x: xs.x.iter().map(|w| matrix_to_json(w.x())).collect(),
        }
    }
}

impl TryFrom<&WaveformSetFile> for WaveformSet {
    type Error = Error;

    fn try_from(f: &WaveformSetFile) -> Result<Self> {
        Ok(WaveformSet {
            x: f.x.iter().map(|m| matrix_from_json(m).map(Waveform::new)).collect::<Result<_>>()?,
        })
    }
}

/// Compact JSON with finite floats printed as `{:.16e}`.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    value.serialize(&mut serde_json::Serializer::with_formatter(&mut out, FullPrecision))?;
    out.push(b'\n');
    String::from_utf8(out).map_err(|e| Error::Format(e.to_string()))
}

pub fn from_json_str<T: DeserializeOwned>(s: &str) -> Result<T> {
    Ok(serde_json::from_str(s)?)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_string(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json_str(&fs::read_to_string(path)?)
}

pub fn save_scenario(path: &Path, sc: &SensingScenario) -> Result<()> {
    write_json(path, &ScenarioFile::from(sc))
}

pub fn load_scenario(path: &Path) -> Result<SensingScenario> {
    SensingScenario::try_from(&read_json::<ScenarioFile>(path)?)
}

pub fn save_ra_scenario(path: &Path, sc: &RandomAccessScenario) -> Result<()> {
    write_json(path, &RaScenarioFile::from(sc))
}

pub fn load_ra_scenario(path: &Path) -> Result<RandomAccessScenario> {
    RandomAccessScenario::try_from(&read_json::<RaScenarioFile>(path)?)
}

pub fn save_waveform(path: &Path, w: &Waveform) -> Result<()> {
    write_json(path, &WaveformFile::from(w))
}

pub fn load_waveform(path: &Path) -> Result<Waveform> {
    Waveform::try_from(&read_json::<WaveformFile>(path)?)
}

pub fn save_waveform_set(path: &Path, xs: &WaveformSet) -> Result<()> {
    write_json(path, &WaveformSetFile::from(xs))
}

pub fn load_waveform_set(path: &Path) -> Result<WaveformSet> {
    WaveformSet::try_from(&read_json::<WaveformSetFile>(path)?)
}
