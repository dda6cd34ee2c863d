//! Feature cache: a CSV of vectors plus a JSON sidecar naming everything the
//! vectors depend on.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellAggregation, Method, VirtualValueGrid};
use crate::{Error, Result};

pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub format_version: u32,
    pub method: Method,
    pub dims: usize,
    pub grid: VirtualValueGrid,
    pub aggregation: CellAggregation,
    pub panel_hash: String,
    pub model_hash: String,
    /// Hash of the expression file for expression-reading methods.
    pub expression_hash: Option<String>,
    /// Run manifest that wrote the cache; not part of the staleness check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

impl CacheMeta {
    /// A cache is reusable only when everything it was computed from matches.
    pub fn check_matches(&self, expected: &CacheMeta, path: &Path) -> Result<()> {
        let stale =
            |what: &str| Err(Error::Incompatible(format!("{}: stale feature cache ({what} differs)", path.display())));
        if self.format_version != expected.format_version {
            return stale("format version");
        }
        if self.method != expected.method {
            return stale("method");
        }
        if self.model_hash != expected.model_hash {
            return stale("model checkpoint hash");
        }
        if self.panel_hash != expected.panel_hash {
            return stale("panel hash");
        }
        if self.grid != expected.grid || self.aggregation != expected.aggregation {
            return stale("virtual value grid");
        }
        if self.expression_hash != expected.expression_hash {
            return stale("expression hash");
        }
        if self.dims != expected.dims {
            return stale("feature dims");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub source: String,
    pub target: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub meta: CacheMeta,
    pub rows: Vec<FeatureRow>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes `path` and its `<path>.meta.json` sidecar.
pub fn save_feature_table(path: &Path, table: &FeatureTable) -> Result<()> {
    if let Some(bad) = table.rows.iter().find(|r| r.vector.len() != table.meta.dims) {
        return Err(Error::DimMismatch { expected: table.meta.dims, got: bad.vector.len() });
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut header = vec!["method".to_string(), "source".into(), "target".into()];
    header.extend((0..table.meta.dims).map(|d| format!("dim{d}")));
    w.write_record(&header).map_err(|e| Error::format(path, e))?;
    let method = table.meta.method.name();
    for row in &table.rows {
        let mut rec = vec![method.to_string(), row.source.clone(), row.target.clone()];
        // `{}` on f64 prints the shortest string that parses back exactly.
        rec.extend(row.vector.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = serde_json::to_string_pretty(&table.meta).map_err(|e| Error::format(path, e))?;
    let side = sidecar(path);
    fs::write(&side, meta).map_err(|e| Error::io(&side, e))
}

pub fn load_feature_table(path: &Path) -> Result<FeatureTable> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CacheMeta = serde_json::from_str(&text).map_err(|e| Error::format(&side, e))?;
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let width = r.headers().map_err(|e| Error::format(path, e))?.len();
    if width != meta.dims + 3 {
        return Err(Error::DimMismatch { expected: meta.dims, got: width.saturating_sub(3) });
    }
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let line = n + 2;
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line, message };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if &rec[0] != meta.method.name() {
            return Err(parse_err(format!("method `{}` but the sidecar says `{}`", &rec[0], meta.method)));
        }
        let vector = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(format!("`{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow { source: rec[1].to_string(), target: rec[2].to_string(), vector });
    }
    Ok(FeatureTable { meta, rows })
}
