//! Checkpoint container.
//!
//! ```text
//! magic        8 bytes  b"VTLKWSCK"
//! version      u32 LE
//! header_len   u64 LE
//! header       JSON {format_version, config, params: [{name, shape, offset}], stats, provenance}
//! blobs        f32 LE per parameter value, in header order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KwsModel, ModelConfig, Network, ParamSpec, Provenance};
use crate::error::{Error, Result};
use crate::frontend::FeatureStats;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VTLKWSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    params: Vec<ParamSpec>,
    stats: FeatureStats,
    provenance: Provenance,
}

pub fn save_checkpoint(model: &KwsModel, path: &Path) -> Result<()> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: model.network.config().clone(),
        params: model.network.params().specs().to_vec(),
        stats: model.stats.clone(),
        provenance: model.provenance.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let data = model.network.params().data();
    let mut out = Vec::with_capacity(20 + json.len() + 4 * data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<KwsModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
    let blob = &bytes[header_end..];
    let mut network = Network::zeroed(&header.config)?;
    if blob.len() != 4 * network.param_count() {
        return Err(corrupt(format!(
            "expected {} parameter bytes, found {}",
            4 * network.param_count(),
            blob.len()
        )));
    }
    let data = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    network.params_mut().load(&header.params, data)?;
    if header.stats.dim() != header.config.input_dim {
        return Err(corrupt("normalization stats do not match input dim".into()));
    }
    Ok(KwsModel {
        network,
        stats: header.stats,
        provenance: header.provenance,
    })
}
