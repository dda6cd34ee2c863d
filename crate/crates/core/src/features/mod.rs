//! Pairwise regulatory features read out of a frozen backend.
//!
//! Six probes are provided: two zero-shot scores (`origin-pert`,
//! `origin-attn`) and four translator inputs (`pert`, `emb`, `vvp`, `gdt`).
//! Every feature is bidirectional: the `i -> j` vector followed by the
//! `j -> i` vector.
//!
//! Whenever a probe reads the reconstruction of target gene `j`, position `j`
//! is masked in the input so the read-out is the model's prediction of `j`
//! from the rest of the panel.

mod cache;
mod extractor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cache::{load_feature_table, save_feature_table, CacheMeta, FeatureRow, FeatureTable, CACHE_FORMAT_VERSION};
pub use extractor::{Extraction, FeatureExtractor, Panel};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OriginPert,
    OriginAttn,
    #[serde(rename = "pert")]
    Pert,
    Emb,
    Vvp,
    Gdt,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::OriginPert, Method::OriginAttn, Method::Pert, Method::Emb, Method::Vvp, Method::Gdt];

    pub fn name(self) -> &'static str {
        match self {
            Method::OriginPert => "origin-pert",
            Method::OriginAttn => "origin-attn",
            Method::Pert => "pert",
            Method::Emb => "emb",
            Method::Vvp => "vvp",
            Method::Gdt => "gdt",
        }
    }

    /// Zero-shot scores are ranked directly; the rest feed a translator.
    pub fn is_zero_shot(self) -> bool {
        matches!(self, Method::OriginPert | Method::OriginAttn)
    }

    /// Whether the probe reads observed expression values.
    pub fn needs_expression(self) -> bool {
        matches!(self, Method::OriginPert | Method::OriginAttn | Method::Pert)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature method `{s}`")))
    }
}

/// How observed expression enters the perturbation probes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellAggregation {
    /// Probe the dataset mean cell once.
    #[default]
    MeanCell,
    /// Probe every cell and average the responses.
    PerCell,
}

/// Virtual input values for the expression-free probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualValueGrid {
    /// Background value `v_b` of every non-source panel gene.
    pub base: f64,
    /// Perturbation targets `v_p,m` for the source gene.
    pub targets: Vec<f64>,
    /// Strictly increasing source values at which gradients are taken.
    pub gradient_bases: Vec<f64>,
}

impl Default for VirtualValueGrid {
    fn default() -> Self {
        Self {
            base: 1.0,
            targets: vec![0.0, 0.5, 2.0, 4.0, 6.0],
            gradient_bases: (0..8).map(|t| 6.0 * t as f64 / 7.0).collect(),
        }
    }
}

impl VirtualValueGrid {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Config("perturbation target set is empty".into()));
        }
        if self.gradient_bases.is_empty() {
            return Err(Error::Config("gradient base set is empty".into()));
        }
        let all = std::iter::once(&self.base).chain(&self.targets).chain(&self.gradient_bases);
        if all.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("virtual values must be finite and >= 0".into()));
        }
        if self.gradient_bases.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("gradient base values must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Per-direction length of `method`'s feature, given embedding width
    /// `model_dim` for [`Method::Emb`].
    pub fn direction_len(&self, method: Method, model_dim: usize) -> usize {
        match method {
            Method::OriginPert | Method::OriginAttn | Method::Pert => 1,
            Method::Emb => model_dim,
            Method::Vvp => self.targets.len(),
            Method::Gdt => self.gradient_bases.len(),
        }
    }
}

/// Feature of the ordered pair `(source, target)`: forward then reverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeature {
    pub source: usize,
    pub target: usize,
    pub method: Method,
    pub vector: Vec<f64>,
}

impl PairFeature {
    pub fn dims(&self) -> usize {
        self.vector.len()
    }

    pub fn forward(&self) -> &[f64] {
        &self.vector[..self.dims() / 2]
    }

    pub fn reverse(&self) -> &[f64] {
        &self.vector[self.dims() / 2..]
    }
}

#[cfg(test)]
mod tests;
