//! Files written by the harness: per-round CSV logs, JSON summaries,
//! sweep tables and model checkpoints. Every file is written to a temporary
//! sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use otafd_core::distill::{RoundRecord, TrainingState};
use otafd_core::learner::{Architecture, ModelParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROUND_COLUMNS: [&str; 7] =
    ["round", "mean_phi1", "mean_phi2", "mean_train_loss", "test_accuracy", "min_dp_margin", "uplink_time_s"];

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).and_then(|_| file.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Shortest form that round-trips is not fixed-width; CSV cells use 17
/// significant digits instead so files diff cleanly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Total uplink time of `rounds` rounds: `K^2` symbols per round.
pub fn uplink_time(rounds: u64, classes: usize, slot_seconds: f64) -> f64 {
    (classes * classes) as f64 * rounds as f64 * slot_seconds
}

/// The CSV cells of one round.
pub fn round_row(rec: &RoundRecord, classes: usize, slot_seconds: f64) -> Vec<String> {
    vec![
        rec.round.to_string(),
        fmt_f64(rec.mean_phi1()),
        fmt_f64(rec.mean_phi2()),
        fmt_f64(rec.mean_train_loss()),
        fmt_f64(rec.test_accuracy),
        fmt_f64(rec.min_dp_margin()),
        fmt_f64(uplink_time(rec.round, classes, slot_seconds)),
    ]
}

/// A CSV table preceded by a `# config_digest: ...` comment line.
pub fn csv_bytes<S: AsRef<str>>(digest: &str, header: &[&str], rows: &[Vec<S>]) -> Result<Vec<u8>> {
    let mut out = format!("# config_digest: {digest}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(AsRef::as_ref))?;
        }
        w.flush().map_err(|e| Error::io("<csv buffer>", e))?;
    }
    Ok(out)
}

/// Reads a table written by [`csv_bytes`]: `(digest, header, rows)`.
pub fn read_csv(path: &Path) -> Result<(String, Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let digest = first
        .strip_prefix("# config_digest: ")
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing digest line", path.display())))?
        .to_string();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((digest, header, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub replication: u32,
    pub seed: u64,
    pub rounds: u64,
    /// Set when `rounds` was `"auto"`.
    pub horizon: Option<HorizonInfo>,
    pub final_accuracy: f64,
    pub device_accuracy: Vec<f64>,
    pub total_uplink_time_s: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonInfo {
    pub optimal_rounds: u64,
    pub continuous: f64,
    pub f_max: Vec<f64>,
    /// `optimal_rounds` exceeded `max_rounds` and was cut.
    pub clamped: bool,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub const CHECKPOINT_FORMAT: &str = "otafd-checkpoint-v1";

/// JSON header of a checkpoint; the parameters of all devices follow in a
/// separate file as little-endian `f64`, device after device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config_digest: String,
    pub seed: u64,
    pub next_round: u64,
    pub devices: usize,
    pub architecture: Architecture,
    pub dim: usize,
}

pub fn checkpoint_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("checkpoint.json"), dir.join("checkpoint.bin"))
}

pub fn save_checkpoint(dir: &Path, digest: &str, seed: u64, state: &TrainingState) -> Result<()> {
    let first = state.models.first().ok_or_else(|| Error::Checkpoint("no models".into()))?;
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config_digest: digest.into(),
        seed,
        next_round: state.next_round,
        devices: state.models.len(),
        architecture: first.architecture(),
        dim: first.dim(),
    };
    let mut bin = Vec::with_capacity(header.devices * header.dim * 8);
    for m in &state.models {
        for v in m.theta() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    let (json, data) = checkpoint_paths(dir);
    write_atomic(&data, &bin)?;
    write_json(&json, &header)
}

/// `None` when `dir` holds no checkpoint.
pub fn load_checkpoint(dir: &Path) -> Result<Option<(CheckpointHeader, TrainingState)>> {
    let (json, data) = checkpoint_paths(dir);
    if !json.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let header: CheckpointHeader = serde_json::from_str(&text)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
    }
    let bin = fs::read(&data).map_err(|e| Error::io(&data, e))?;
    if bin.len() != header.devices * header.dim * 8 {
        return Err(Error::Checkpoint(format!("{} bytes, expected {}", bin.len(), header.devices * header.dim * 8)));
    }
    let values: Vec<f64> = bin.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    let models = if header.dim == 0 {
        Vec::new()
    } else {
        values
            .chunks(header.dim)
            .map(|theta| ModelParams::from_vec(header.architecture, theta.to_vec()))
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    let state = TrainingState { next_round: header.next_round, models };
    Ok(Some((header, state)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uplink_examples() {
        assert!((uplink_time(400, 10, 3.6e-6) - 0.144).abs() < 1e-15);
        assert!((uplink_time(1, 1, 3.6e-6) - 3.6e-6).abs() < 1e-21);
        assert_eq!(uplink_time(7, 6, 1.0), 4.0 * uplink_time(7, 3, 1.0));
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let bytes = csv_bytes("abc", &["x", "y"], &[vec!["1", "2"], vec!["3", "4"]]).unwrap();
        write_atomic(&path, &bytes).unwrap();
        let (digest, header, rows) = read_csv(&path).unwrap();
        assert_eq!(digest, "abc");
        assert_eq!(header, vec!["x", "y"]);
        assert_eq!(rows, vec![vec!["1", "2"], vec!["3", "4"]]);
        assert!(!dir.path().join(".t.csv.tmp").exists());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_checkpoint(dir.path()).unwrap().is_none());
        let arch = Architecture::Linear { inputs: 2, classes: 2 };
        let state = TrainingState {
            next_round: 7,
            models: vec![
                ModelParams::from_vec(arch, vec![1.0, -2.0, 0.5, 1e-300, 3.0, 4.0]).unwrap(),
                ModelParams::from_vec(arch, vec![0.0; 6]).unwrap(),
            ],
        };
        save_checkpoint(dir.path(), "d1", 9, &state).unwrap();
        let (header, back) = load_checkpoint(dir.path()).unwrap().unwrap();
        assert_eq!(back, state);
        assert_eq!(header.config_digest, "d1");
        assert_eq!(header.dim, 6);
        let bin = fs::read(dir.path().join("checkpoint.bin")).unwrap();
        assert_eq!(&bin[..8], &1.0f64.to_le_bytes());

        fs::write(dir.path().join("checkpoint.bin"), &bin[..40]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
