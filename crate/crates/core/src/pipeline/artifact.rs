//! JSON artifacts stamped with the manifest hash of the run that wrote them.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::hash::sha256_hex;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    manifest_hash: String,
    #[serde(flatten)]
    body: T,
}

/// A decoded artifact with its stamp and the hash of its bytes.
pub struct Loaded<T> {
    pub body: T,
    pub manifest_hash: String,
    pub content_hash: String,
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `body` with `manifest_hash` added as a top-level field and
/// returns the content hash.
pub fn write_json<T: Serialize>(path: &Path, manifest_hash: &str, body: &T) -> Result<String> {
    let stamped = Stamped { manifest_hash: manifest_hash.to_string(), body };
    let mut text = serde_json::to_string_pretty(&stamped).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    write_text(path, &text)?;
    Ok(sha256_hex(text))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stamped: Stamped<T> = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    Ok(Loaded { body: stamped.body, manifest_hash: stamped.manifest_hash, content_hash: sha256_hex(text) })
}
