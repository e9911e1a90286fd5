//! Self-describing model checkpoint.
//!
//! JSON with a mandatory version field, the gate ordering tag, shapes,
//! all parameter tensors in row-major order, and the training config
//! that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{LstmParams, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const GATE_ORDER: &str = "ifgo";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub gate_order: String,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub params: LstmParams,
    pub train_config: TrainConfig,
}

pub fn save_checkpoint(path: &Path, params: &LstmParams, config: &TrainConfig) -> Result<()> {
    params.validate()?;
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        gate_order: GATE_ORDER.into(),
        input_dim: params.input_dim(),
        hidden: params.hidden_sizes(),
        classes: params.class_count(),
        params: params.clone(),
        train_config: config.clone(),
    };
    let json = serde_json::to_string(&ckpt)
        .map_err(|e| Error::Format(format!("checkpoint serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("checkpoint parse: {e}")))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    if ckpt.gate_order != GATE_ORDER {
        return Err(Error::Format(format!(
            "unsupported gate order {:?}",
            ckpt.gate_order
        )));
    }
    ckpt.params.validate()?;
    if ckpt.params.input_dim() != ckpt.input_dim
        || ckpt.params.hidden_sizes() != ckpt.hidden
        || ckpt.params.class_count() != ckpt.classes
    {
        return Err(Error::Consistency("checkpoint shape header != tensors".into()));
    }
    Ok(ckpt)
}
