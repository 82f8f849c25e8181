use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArModel, ModelConfig, ParamSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "rulex-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    vocab: usize,
    config: ModelConfig,
    params: Vec<ParamSpec>,
}

/// Layout: a magic line, one JSON header line, then every parameter as a
/// little-endian `f64` in layout order.
pub fn save_checkpoint(model: &ArModel, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        vocab: model.vocab,
        config: model.config.clone(),
        params: model.specs.clone(),
    };
    let mut out = format!(
        "{CHECKPOINT_MAGIC}\n{}\n",
        serde_json::to_string(&header).expect("header serializes")
    )
    .into_bytes();
    out.reserve(model.params.len() * 8);
    for v in &model.params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ArModel> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    let magic = lines.next().unwrap_or_default();
    if magic != CHECKPOINT_MAGIC.as_bytes() {
        return Err(Error::format(path, 1, "not a checkpoint file"));
    }
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format(path, 2, "missing header"))?;
    let header: Header = serde_json::from_slice(header_line)
        .map_err(|e| Error::format(path, 2, format!("bad header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            2,
            format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                header.format_version
            ),
        ));
    }
    let mut model = ArModel::build(header.config, header.vocab)
        .map_err(|e| Error::format(path, 2, e.to_string()))?;
    if model.specs != header.params {
        return Err(Error::format(path, 2, "parameter layout does not match the configuration"));
    }
    let body = lines.next().unwrap_or_default();
    if body.len() != model.params.len() * 8 {
        return Err(Error::format(
            path,
            3,
            format!(
                "expected {} parameter bytes, found {}",
                model.params.len() * 8,
                body.len()
            ),
        ));
    }
    for (v, chunk) in model.params.iter_mut().zip(body.chunks_exact(8)) {
        *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    Ok(model)
}
