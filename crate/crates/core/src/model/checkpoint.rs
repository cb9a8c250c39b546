//! Versioned JSON checkpoint container.
//!
//! ```text
//! {"version": 1, "config": {..}, "schema": {..},
//!  "blocks": [{"name", "rows", "cols", "data": base64(f64 little-endian)}],
//!  "masks":  [{"concept", "data": base64(bitset, bit 0 = flat index 0)}]}
//! ```
//!
//! Blocks appear in [`ModelParams::tensors`] order; the encoder blocks follow
//! the prunable block map, row-major.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Mask, MaskSet, ModelConfig, ModelParams};
use crate::data::DatasetSchema;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reproduce a model's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub schema: DatasetSchema,
    pub params: ModelParams,
    pub masks: MaskSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskRecord {
    concept: String,
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Container {
    version: u32,
    config: ModelConfig,
    schema: DatasetSchema,
    blocks: Vec<BlockRecord>,
    masks: Vec<MaskRecord>,
}

fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f64s(data: &str, expected: usize, name: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(data)
        .map_err(|e| Error::data(format!("block {name}: bad base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::data(format!(
            "block {name}: expected {} bytes, found {}",
            expected * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let container = Container {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            schema: self.schema.clone(),
            blocks: self
                .params
                .tensors()
                .into_iter()
                .map(|t| BlockRecord {
                    data: encode_f64s(t.data),
                    name: t.name,
                    rows: t.rows,
                    cols: t.cols,
                })
                .collect(),
            masks: self
                .masks
                .iter()
                .zip(&self.schema.concept_names)
                .map(|(m, name)| MaskRecord {
                    concept: name.clone(),
                    data: B64.encode(m.to_bytes()),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&container).expect("container serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::data(format!("checkpoint: {e}")))?;
        let found = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::data("checkpoint has no numeric version"))?;
        if found != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        let c: Container =
            serde_json::from_value(value).map_err(|e| Error::data(format!("checkpoint: {e}")))?;
        c.config.validate()?;
        c.schema.validate()?;
        if c.schema.num_concepts() != c.config.num_concepts {
            return Err(Error::data("checkpoint schema and config disagree on K"));
        }

        let mut params = ModelParams::zeros(&c.config);
        if c.blocks.iter().any(|b| b.name == "head.weight") {
            params.attach_head(0);
        }
        let n_comp = c
            .blocks
            .iter()
            .filter(|b| b.name.starts_with("compensation."))
            .count();
        if n_comp > 0 {
            params.compensation = vec![vec![0.0; params.prunable_len()]; n_comp];
        }
        {
            let tensors = params.tensors_mut();
            if tensors.len() != c.blocks.len() {
                return Err(Error::data(format!(
                    "checkpoint has {} blocks, model expects {}",
                    c.blocks.len(),
                    tensors.len()
                )));
            }
            for (t, b) in tensors.into_iter().zip(&c.blocks) {
                if t.name != b.name || t.rows != b.rows || t.cols != b.cols {
                    return Err(Error::data(format!(
                        "block {} ({}x{}) does not match expected {} ({}x{})",
                        b.name, b.rows, b.cols, t.name, t.rows, t.cols
                    )));
                }
                let values = decode_f64s(&b.data, t.data.len(), &b.name)?;
                t.data.copy_from_slice(&values);
            }
        }

        if c.masks.len() != c.config.num_concepts {
            return Err(Error::data(format!(
                "checkpoint has {} masks for {} concepts",
                c.masks.len(),
                c.config.num_concepts
            )));
        }
        let len = params.prunable_len();
        let mut masks = Vec::with_capacity(c.masks.len());
        for (m, name) in c.masks.iter().zip(&c.schema.concept_names) {
            if &m.concept != name {
                return Err(Error::data(format!(
                    "mask for {:?} found where {name:?} was expected",
                    m.concept
                )));
            }
            let bytes = B64
                .decode(&m.data)
                .map_err(|e| Error::data(format!("mask {name}: bad base64: {e}")))?;
            masks.push(Mask::from_bytes(&bytes, len)?);
        }
        Ok(Self {
            config: c.config,
            schema: c.schema,
            params,
            masks: MaskSet::new(masks)?,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text).map_err(|e| match e {
        Error::Data { message, .. } => Error::Data {
            path: Some(path.to_path_buf()),
            line: None,
            message,
        },
        other => other,
    })
}
