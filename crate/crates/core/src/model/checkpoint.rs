use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExpressionModel, GeneVocabulary, Model};
use crate::hash::sha256_hex;
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk form of a frozen backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub vocabulary_hash: String,
    pub model: Model,
}

impl ModelCheckpoint {
    pub fn new(model: Model) -> Self {
        Self { format_version: MODEL_FORMAT_VERSION, vocabulary_hash: model.vocabulary().hash(), model }
    }
}

/// Writes `model` as JSON and returns the file's content hash.
pub fn save_model(path: &Path, model: &Model) -> Result<String> {
    let text = serde_json::to_string(&ModelCheckpoint::new(model.clone())).map_err(|e| Error::format(path, e))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(text))
}

/// Loads a checkpoint and returns the model with the file's content hash.
/// When `expected` is given the stored vocabulary must match it exactly.
pub fn load_model(path: &Path, expected: Option<&GeneVocabulary>) -> Result<(Model, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: ModelCheckpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    Ok((ckpt.into_model(path, expected)?, sha256_hex(text)))
}

impl ModelCheckpoint {
    /// Validates format version and vocabulary; `path` only labels errors.
    pub fn into_model(self, path: &Path, expected: Option<&GeneVocabulary>) -> Result<Model> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: checkpoint format {} (this build reads {})",
                path.display(),
                self.format_version,
                MODEL_FORMAT_VERSION
            )));
        }
        let actual = self.model.vocabulary().hash();
        if actual != self.vocabulary_hash {
            return Err(Error::format(path, "vocabulary hash does not match stored vocabulary"));
        }
        if let Some(expected) = expected {
            if expected.hash() != actual {
                return Err(Error::Incompatible(format!(
                    "{}: checkpoint vocabulary ({} genes) differs from the expected vocabulary ({} genes)",
                    path.display(),
                    self.model.vocabulary().len(),
                    expected.len()
                )));
            }
        }
        Ok(self.model)
    }
}
