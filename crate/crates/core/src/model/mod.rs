//! Frozen expression-reconstruction backends.
//!
//! Both backends map a panel of `(gene, value)` entries to one reconstructed
//! value per entry and expose exact input gradients. The transformer also
//! exposes per-layer attention and gene embeddings; the ridge backend is a
//! closed-form oracle whose gradients are its regression weights.

mod checkpoint;
mod linear;
mod transformer;
mod vocab;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, save_model, ModelCheckpoint, MODEL_FORMAT_VERSION};
pub use linear::{fit_linear_backend, fit_linear_backend_with, LinearBackend};
pub use transformer::{masked_mse, pretrain_masked, PretrainReport, ScFM, ScFMConfig, ScFMParams};
pub use vocab::GeneVocabulary;

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// One cell presented to a model: vocabulary ids, their values, and which
/// positions are hidden behind the mask encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelInput {
    pub genes: Vec<usize>,
    pub values: Vec<f64>,
    pub masked: Vec<bool>,
}

impl PanelInput {
    pub fn new(genes: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if genes.len() != values.len() {
            return Err(Error::DimMismatch { expected: genes.len(), got: values.len() });
        }
        let masked = vec![false; genes.len()];
        Ok(Self { genes, values, masked })
    }

    /// Resolves symbols against `vocab`; unknown symbols are an error.
    pub fn from_symbols<S: AsRef<str>>(vocab: &GeneVocabulary, symbols: &[S], values: Vec<f64>) -> Result<Self> {
        Self::new(vocab.resolve_all(symbols)?, values)
    }

    pub fn with_mask(mut self, position: usize) -> Self {
        self.masked[position] = true;
        self
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub(crate) fn validate(&self, vocab_len: usize) -> Result<()> {
        if self.values.len() != self.genes.len() || self.masked.len() != self.genes.len() {
            return Err(Error::DimMismatch { expected: self.genes.len(), got: self.values.len() });
        }
        if let Some(&bad) = self.genes.iter().find(|&&g| g >= vocab_len) {
            return Err(Error::UnknownGene(format!("#{bad}")));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite input value {v}")));
        }
        Ok(())
    }
}

/// Attention of every layer and head for one forward pass; tensor `l` has
/// shape `[heads, K, K]` and row `i` holds where panel gene `i` attends.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Tensor>,
}

impl AttentionRecord {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_heads(&self) -> usize {
        self.layers.first().map_or(0, |t| t.shape()[0])
    }

    pub fn panel_len(&self) -> usize {
        self.layers.first().map_or(0, |t| t.shape()[1])
    }

    /// Entry `(i, j)` of head `h` in layer `l`.
    pub fn weight(&self, l: usize, h: usize, i: usize, j: usize) -> f64 {
        let k = self.panel_len();
        self.layers[l].data()[(h * k + i) * k + j]
    }
}

/// Capabilities shared by every backend. All methods are pure given the
/// frozen parameters.
pub trait ExpressionModel: Send + Sync {
    fn backend_name(&self) -> &'static str;

    fn vocabulary(&self) -> &GeneVocabulary;

    /// Reconstructed value for every panel position.
    fn reconstruct(&self, input: &PanelInput) -> Result<Vec<f64>> {
        Ok(self.reconstruct_batch(std::slice::from_ref(input))?.remove(0))
    }

    /// [`ExpressionModel::reconstruct`] for several inputs of equal panel length.
    fn reconstruct_batch(&self, inputs: &[PanelInput]) -> Result<Vec<Vec<f64>>>;

    /// Gradient of reconstructed position `target` with respect to every
    /// input value.
    fn input_gradient(&self, input: &PanelInput, target: usize) -> Result<Vec<f64>> {
        Ok(self.input_gradient_batch(std::slice::from_ref(input), &[target])?.remove(0))
    }

    fn input_gradient_batch(&self, inputs: &[PanelInput], targets: &[usize]) -> Result<Vec<Vec<f64>>>;

    fn attention(&self, _input: &PanelInput) -> Result<AttentionRecord> {
        Err(Error::Unsupported { capability: "attention extraction", backend: self.backend_name() })
    }

    /// Vocabulary embedding table, `[|V|, d]`.
    fn gene_embeddings(&self) -> Result<&Tensor> {
        Err(Error::Unsupported { capability: "gene embeddings", backend: self.backend_name() })
    }
}

/// A frozen backend of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum Model {
    Transformer(ScFM),
    Linear(LinearBackend),
}

impl Model {
    fn inner(&self) -> &dyn ExpressionModel {
        match self {
            Model::Transformer(m) => m,
            Model::Linear(m) => m,
        }
    }
}

impl ExpressionModel for Model {
    fn backend_name(&self) -> &'static str {
        self.inner().backend_name()
    }
    fn vocabulary(&self) -> &GeneVocabulary {
        self.inner().vocabulary()
    }
    fn reconstruct_batch(&self, inputs: &[PanelInput]) -> Result<Vec<Vec<f64>>> {
        self.inner().reconstruct_batch(inputs)
    }
    fn input_gradient_batch(&self, inputs: &[PanelInput], targets: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.inner().input_gradient_batch(inputs, targets)
    }
    fn attention(&self, input: &PanelInput) -> Result<AttentionRecord> {
        self.inner().attention(input)
    }
    fn gene_embeddings(&self) -> Result<&Tensor> {
        self.inner().gene_embeddings()
    }
}

pub(crate) fn check_batch(inputs: &[PanelInput], vocab_len: usize) -> Result<usize> {
    let k = inputs.first().map_or(0, PanelInput::len);
    for input in inputs {
        input.validate(vocab_len)?;
        if input.len() != k {
            return Err(Error::DimMismatch { expected: k, got: input.len() });
        }
    }
    Ok(k)
}
