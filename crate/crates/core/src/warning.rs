use serde::{Deserialize, Serialize};

/// A non-fatal problem recorded during a run; surfaced verbatim in reports.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Warning {
    pub kind: WarningKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarningKind {
    /// An edge referenced a symbol outside the expression panel.
    DroppedEdge,
    /// A pair referenced a gene the model vocabulary does not know.
    SkippedGene,
    /// A feature method could not run on the chosen backend.
    UnavailableMethod,
    /// An input artifact was produced under a different manifest.
    MixedManifest,
}

impl Warning {
    pub fn new(kind: WarningKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into() }
    }
}
