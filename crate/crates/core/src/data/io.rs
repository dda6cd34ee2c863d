//! BEELINE-style dataset files.
//!
//! * expression CSV: header row of gene symbols, one row per cell, no index column;
//! * edge TSV: `source<TAB>target[<TAB>label]`, `#` comment lines ignored;
//! * metadata sidecar: JSON with source, species, network and TF list.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetTags, EdgeSet, ExpressionMatrix};
use crate::warning::{Warning, WarningKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub species: String,
    pub network: String,
    pub tfs: Vec<String>,
}

impl DatasetMeta {
    pub fn tags(&self) -> DatasetTags {
        DatasetTags::new(&self.source, &self.species, &self.network)
    }
}

pub fn save_expression(matrix: &ExpressionMatrix, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(matrix.values().len() * 8);
    out.push_str(&matrix.symbols().join(","));
    out.push('\n');
    for c in 0..matrix.n_cells() {
        let row: Vec<String> = matrix.cell(c).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_expression(path: &Path, tags: DatasetTags) -> Result<ExpressionMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| Error::format(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };

    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let symbols: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for s in &symbols {
        if s.is_empty() {
            return Err(parse_err(1, "empty gene symbol in header".into()));
        }
        if !seen.insert(s.as_str()) {
            return Err(parse_err(1, format!("duplicate gene column `{s}`")));
        }
    }
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != symbols.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", symbols.len(), record.len())));
        }
        for (field, sym) in record.iter().zip(&symbols) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("`{field}` is not a number (gene `{sym}`)")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(line, format!("expression {v} for gene `{sym}` must be finite and >= 0")));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(parse_err(1, "no cells".into()));
    }
    ExpressionMatrix::new(symbols, values, tags)
}

pub fn save_edges(edges: &EdgeSet, path: &Path) -> Result<()> {
    let mut out = String::from("# source\ttarget\n");
    for (s, t) in edges.edges() {
        out.push_str(&format!("{s}\t{t}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Result of reading an edge file: the valid edges plus a warning per
/// dropped row.
#[derive(Debug, Clone)]
pub struct LoadedEdges {
    pub edges: EdgeSet,
    pub warnings: Vec<Warning>,
}

/// Reads an edge TSV. Rows labelled `0` are explicit non-edges and skipped.
/// Rows naming a symbol outside `panel` (when given), or a source outside
/// `tfs` (when given), are dropped with a warning. Without a TF list the
/// distinct sources, in first-seen order, form it.
pub fn load_edges(path: &Path, panel: Option<&[String]>, tfs: Option<&[String]>) -> Result<LoadedEdges> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let panel: Option<HashSet<&str>> = panel.map(|p| p.iter().map(String::as_str).collect());
    let tf_set: Option<HashSet<&str>> = tfs.map(|t| t.iter().map(String::as_str).collect());
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };

    let mut warnings = Vec::new();
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    let mut sources: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) || fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(line, format!("expected `source<TAB>target[<TAB>label]`, got `{raw}`")));
        }
        let (s, t) = (fields[0], fields[1]);
        if let Some(label) = fields.get(2) {
            match *label {
                "1" => {}
                "0" => continue,
                other => return Err(parse_err(line, format!("label `{other}` is not 0 or 1"))),
            }
        }
        let mut drop =
            |why: String| warnings.push(Warning::new(WarningKind::DroppedEdge, format!("line {line}: {why}")));
        if let Some(p) = &panel {
            if let Some(missing) = [s, t].into_iter().find(|g| !p.contains(g)) {
                drop(format!("unknown symbol `{missing}`"));
                continue;
            }
        }
        if s == t {
            drop(format!("self-loop on `{s}`"));
            continue;
        }
        if let Some(tfs) = &tf_set {
            if !tfs.contains(s) {
                drop(format!("source `{s}` is not a transcription factor"));
                continue;
            }
        }
        if !seen.insert((s.to_string(), t.to_string())) {
            drop(format!("duplicate edge `{s}` -> `{t}`"));
            continue;
        }
        if !sources.iter().any(|x| x == s) {
            sources.push(s.to_string());
        }
        edges.push((s.to_string(), t.to_string()));
    }
    let tf_list = match tfs {
        Some(t) => t.to_vec(),
        None => sources,
    };
    Ok(LoadedEdges { edges: EdgeSet::new(tf_list, edges)?, warnings })
}

pub fn save_meta(meta: &DatasetMeta, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::format(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_meta(path: &Path) -> Result<DatasetMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}
