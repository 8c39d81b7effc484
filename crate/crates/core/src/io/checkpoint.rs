//! Exact-resume checkpoints: a CNSF snapshot of `v` plus a JSON header.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::spectral::snapshot::{decode_snapshot, write_snapshot};
use crate::spectral::{SpectralField, WaveGrid};

use super::IoError;

pub const CHECKPOINT_FORMAT: &str = "calmedns-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub time: f64,
    /// Steps taken from the start of the run.
    pub step: usize,
    pub seed: u64,
    pub config_hash: String,
    pub n: usize,
    /// Snapshot file name, relative to the header.
    pub payload: String,
    pub payload_sha256: String,
}

/// Header JSON and snapshot bytes for `v`; `name` is the file stem.
pub fn encode_checkpoint(
    name: &str,
    v: &SpectralField<f64>,
    time: f64,
    step: usize,
    seed: u64,
    config_hash: &str,
) -> Result<(String, Vec<u8>), IoError> {
    let mut payload = Vec::new();
    write_snapshot(&mut payload, &[v])?;
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        time,
        step,
        seed,
        config_hash: config_hash.into(),
        n: v.grid().n(),
        payload: format!("{name}.cnsf"),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_string_pretty(&header)? + "\n";
    Ok((json, payload))
}

/// Writes `<dir>/<name>.json` and `<dir>/<name>.cnsf`; returns the header path.
pub fn save_checkpoint(
    dir: &Path,
    name: &str,
    v: &SpectralField<f64>,
    time: f64,
    step: usize,
    seed: u64,
    config_hash: &str,
) -> Result<PathBuf, IoError> {
    let (json, payload) = encode_checkpoint(name, v, time, step, seed, config_hash)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.cnsf")), payload)?;
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, json)?;
    Ok(path)
}

/// Loads a checkpoint, refusing it unless format, version, config hash,
/// resolution and payload digest all match.
pub fn load_checkpoint(
    header_path: &Path,
    grid: &Arc<WaveGrid<f64>>,
    config_hash: &str,
) -> Result<(CheckpointHeader, SpectralField<f64>), IoError> {
    let refuse = |why: String| IoError::Checkpoint(format!("{}: {why}", header_path.display()));
    let text = std::fs::read_to_string(header_path)?;
    let header: CheckpointHeader = serde_json::from_str(&text).map_err(|e| refuse(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(refuse(format!("unsupported format {} v{}", header.format, header.version)));
    }
    if header.config_hash != config_hash {
        return Err(refuse(format!(
            "written under config {}, current config is {config_hash}",
            header.config_hash
        )));
    }
    if header.n != grid.n() {
        return Err(refuse(format!("resolution {} does not match grid {}", header.n, grid.n())));
    }
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let payload = std::fs::read(dir.join(&header.payload))?;
    if hex::encode(Sha256::digest(&payload)) != header.payload_sha256 {
        return Err(refuse("payload digest mismatch".into()));
    }
    let mut fields = decode_snapshot(&payload, grid)?;
    if fields.len() != 1 {
        return Err(refuse(format!("expected one field, found {}", fields.len())));
    }
    Ok((header, fields.remove(0)))
}
