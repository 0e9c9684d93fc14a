//! Model directories: `model.json` (architecture, normalizer, conventions,
//! FLOP table) next to the parameter checkpoint `checkpoint.{json,bin}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlopTable, ModelConfig, ModelError, Normalizer, VioModel};
use crate::nn::{load_params, save_params};

pub const MODEL_FORMAT: &str = "gvio-model";
pub const MODEL_VERSION: u32 = 1;
const PARAMS_STEM: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    /// Output ordering of the regression head.
    pub output_order: String,
    /// Policy index that selects the visual encoder.
    pub visual_index: usize,
    pub flops: FlopTable,
}

pub fn save_model(model: &VioModel, dir: &Path) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    save_params(&model.store, dir, PARAMS_STEM)?;
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: model.config.clone(),
        normalizer: model.normalizer.clone(),
        output_order: "phi_x,phi_y,phi_z,v_x,v_y,v_z".into(),
        visual_index: 0,
        flops: model.flops(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| ModelError::Manifest(e.to_string()))?;
    fs::write(dir.join("model.json"), json)?;
    Ok(())
}

/// Rebuilds the architecture from `model.json` and checks that every stored
/// parameter matches it by name and shape.
pub fn load_model(dir: &Path) -> Result<VioModel, ModelError> {
    let text = fs::read_to_string(dir.join("model.json"))?;
    let m: ModelManifest = serde_json::from_str(&text).map_err(|e| ModelError::Manifest(e.to_string()))?;
    if m.format != MODEL_FORMAT {
        return Err(ModelError::Manifest(format!("unknown format `{}`", m.format)));
    }
    if m.version != MODEL_VERSION {
        return Err(ModelError::Manifest(format!("version {} (expected {MODEL_VERSION})", m.version)));
    }
    let mut model = VioModel::zeros(m.config)?;
    let stored = load_params(dir, PARAMS_STEM)?;
    if stored.len() != model.store.len() {
        return Err(ModelError::Manifest(format!(
            "checkpoint has {} parameters, architecture has {}",
            stored.len(),
            model.store.len()
        )));
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.name(id).to_string();
        let src = stored.find(&name).ok_or_else(|| ModelError::Manifest(format!("missing parameter `{name}`")))?;
        let value = stored.get(src);
        if value.shape() != model.store.get(id).shape() {
            return Err(ModelError::Manifest(format!("parameter `{name}` has shape {:?}", value.shape())));
        }
        *model.store.get_mut(id) = value.clone();
    }
    model.normalizer = m.normalizer;
    Ok(model)
}
