//! Model files.

use std::path::Path;

use txgraph_core::classifier::{ExchangeModel, MODEL_VERSION};
use txgraph_core::features::FEATURE_NAMES;

use crate::error::{DataError, Result};
use crate::jsonio::{read_json, write_json};

pub fn save_model(path: &Path, model: &ExchangeModel) -> Result<()> {
    write_json(path, model)
}

/// Loads a model and checks its version and feature order.
pub fn load_model(path: &Path) -> Result<ExchangeModel> {
    let m: ExchangeModel = read_json(path)?;
    if m.version != MODEL_VERSION {
        return Err(DataError::at(
            path,
            format!("model version {} is not supported (expected {MODEL_VERSION})", m.version),
        ));
    }
    if m.features.iter().map(String::as_str).ne(FEATURE_NAMES.iter().copied()) {
        return Err(DataError::at(path, "model feature list does not match this build"));
    }
    Ok(m)
}
