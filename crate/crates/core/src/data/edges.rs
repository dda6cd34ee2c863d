use std::collections::HashSet;

use crate::{Error, Result};

/// Directed regulatory edges, each outgoing from a listed transcription factor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeSet {
    tfs: Vec<String>,
    edges: Vec<(String, String)>,
    lookup: HashSet<(String, String)>,
}

impl EdgeSet {
    pub fn new(tfs: Vec<String>, edges: Vec<(String, String)>) -> Result<Self> {
        let tf_set: HashSet<&str> = tfs.iter().map(String::as_str).collect();
        if tf_set.len() != tfs.len() {
            return Err(Error::Data("duplicate transcription factor in TF list".into()));
        }
        let mut lookup = HashSet::with_capacity(edges.len());
        for (s, t) in &edges {
            if s == t {
                return Err(Error::Data(format!("self-loop on `{s}`")));
            }
            if !tf_set.contains(s.as_str()) {
                return Err(Error::Data(format!("edge source `{s}` is not a transcription factor")));
            }
            if !lookup.insert((s.clone(), t.clone())) {
                return Err(Error::Data(format!("duplicate edge `{s}` -> `{t}`")));
            }
        }
        Ok(Self { tfs, edges, lookup })
    }

    pub fn tfs(&self) -> &[String] {
        &self.tfs
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, source: &str, target: &str) -> bool {
        self.lookup.contains(&(source.to_string(), target.to_string()))
    }

    pub fn is_tf(&self, symbol: &str) -> bool {
        self.tfs.iter().any(|t| t == symbol)
    }

    /// Keeps only the given transcription factors and their outgoing edges.
    pub fn restrict_sources(&self, keep: &[String]) -> Self {
        let keep: HashSet<&str> = keep.iter().map(String::as_str).collect();
        let tfs = self.tfs.iter().filter(|t| keep.contains(t.as_str())).cloned().collect();
        let edges = self.edges.iter().filter(|(s, _)| keep.contains(s.as_str())).cloned().collect();
        Self::new(tfs, edges).expect("subset of a valid edge set is valid")
    }

    /// Keeps edges (and TFs) whose endpoints are both in `panel`.
    pub fn restrict_panel(&self, panel: &[String]) -> Self {
        let panel: HashSet<&str> = panel.iter().map(String::as_str).collect();
        let tfs = self.tfs.iter().filter(|t| panel.contains(t.as_str())).cloned().collect();
        let edges = self
            .edges
            .iter()
            .filter(|(s, t)| panel.contains(s.as_str()) && panel.contains(t.as_str()))
            .cloned()
            .collect();
        Self::new(tfs, edges).expect("subset of a valid edge set is valid")
    }
}
