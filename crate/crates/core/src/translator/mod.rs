//! Trainable projector from pair features to regulation probabilities.
//!
//! A ReLU MLP with a sigmoid output, trained with binary cross-entropy and
//! Adam. Two translators trained on different probes combine by averaging
//! their logits.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::features::Method;
use crate::parallel::{self, Execution};
use crate::{Error, Result};

pub const TRANSLATOR_FORMAT_VERSION: u32 = 1;

/// Rows scored per parallel work item.
const SCORE_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslatorConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// One step per epoch over the whole set, in input order, no shuffling.
    pub full_batch: bool,
    pub seed: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self { hidden: vec![128, 64], learning_rate: 1e-3, batch_size: 128, epochs: 50, full_batch: false, seed: 0 }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config("translator hidden dims must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("translator learning rate {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("translator batch size must be positive".into()));
        }
        Ok(())
    }
}

/// A training or scoring example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub source: String,
    pub target: String,
    pub label: bool,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `[in, out]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorModel {
    pub format_version: u32,
    pub config: TranslatorConfig,
    /// Probe the translator was trained on; scoring another is refused.
    pub method: Method,
    pub input_dims: usize,
    pub layers: Vec<DenseLayer>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl TranslatorModel {
    /// Seeded initialization, uniform in `+-1/sqrt(fan_in)`.
    pub fn init(config: &TranslatorConfig, method: Method, input_dims: usize) -> Result<Self> {
        config.validate()?;
        if input_dims == 0 {
            return Err(Error::Config("translator input has zero dims".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut dims = vec![input_dims];
        dims.extend(&config.hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
                let weight = Tensor::matrix(w[0], w[1], draw(w[0] * w[1])).expect("shape");
                let bias = Tensor::vector(draw(w[1]));
                DenseLayer { weight, bias }
            })
            .collect();
        Ok(Self { format_version: TRANSLATOR_FORMAT_VERSION, config: config.clone(), method, input_dims, layers })
    }

    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    /// Checks a feature file's method and width against this model.
    pub fn check_input(&self, method: Method, dims: usize) -> Result<()> {
        if method != self.method {
            return Err(Error::Incompatible(format!(
                "translator was trained on {} features, got {method}",
                self.method
            )));
        }
        if dims != self.input_dims {
            return Err(Error::DimMismatch { expected: self.input_dims, got: dims });
        }
        Ok(())
    }

    /// Builds the logit graph for `rows` and returns `(logits, params)`.
    fn forward(&self, tape: &mut Tape, rows: &[&[f64]]) -> Result<(Var, Vec<Var>)> {
        if let Some(bad) = rows.iter().find(|r| r.len() != self.input_dims) {
            return Err(Error::DimMismatch { expected: self.input_dims, got: bad.len() });
        }
        let x = Tensor::matrix(rows.len(), self.input_dims, rows.iter().flat_map(|r| r.iter().copied()).collect())?;
        let params: Vec<Var> = self.params().into_iter().map(|t| tape.leaf(t.clone())).collect();
        let mut h = tape.leaf(x);
        let last = self.layers.len() - 1;
        for (l, p) in params.chunks(2).enumerate() {
            h = tape.matmul(h, p[0])?;
            h = tape.add_bias(h, p[1])?;
            if l < last {
                h = tape.relu(h)?;
            }
        }
        Ok((h, params))
    }

    fn logits_chunk(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let (out, _) = self.forward(&mut tape, rows)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Pre-sigmoid outputs, one per row.
    pub fn logits(&self, rows: &[Vec<f64>], exec: Execution) -> Result<Vec<f64>> {
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let chunks: Vec<&[&[f64]]> = refs.chunks(SCORE_CHUNK).collect();
        let parts = parallel::map(exec, &chunks, |c| self.logits_chunk(c));
        let mut out = Vec::with_capacity(rows.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Regulation probabilities in `(0, 1)`.
    pub fn score(&self, rows: &[Vec<f64>], exec: Execution) -> Result<Vec<f64>> {
        Ok(self.logits(rows, exec)?.into_iter().map(sigmoid).collect())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: TranslatorModel,
    /// Mean training BCE of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains a fresh translator on `pairs` for `method` features.
pub fn train(config: &TranslatorConfig, method: Method, pairs: &[LabeledPair]) -> Result<TrainReport> {
    config.validate()?;
    let positives = pairs.iter().filter(|p| p.label).count();
    if positives == 0 || positives == pairs.len() {
        return Err(Error::Data(format!(
            "translator training needs both classes (got {positives} positives of {})",
            pairs.len()
        )));
    }
    let dims = pairs[0].feature.len();
    if let Some(bad) = pairs.iter().find(|p| p.feature.len() != dims) {
        return Err(Error::DimMismatch { expected: dims, got: bad.feature.len() });
    }
    if pairs.iter().any(|p| p.feature.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("non-finite training feature".into()));
    }
    let mut model = TranslatorModel::init(config, method, dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let batch = if config.full_batch { pairs.len() } else { config.batch_size };
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        if !config.full_batch {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for idx in order.chunks(batch) {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| pairs[i].feature.as_slice()).collect();
            let labels: Vec<f64> = idx.iter().map(|&i| if pairs[i].label { 1.0 } else { 0.0 }).collect();
            let mut tape = Tape::new();
            let (logits, params) = model.forward(&mut tape, &rows)?;
            let prob = tape.sigmoid(logits)?;
            let loss = tape.bce(prob, &labels)?;
            epoch_loss += tape.value(loss).item().expect("scalar") * idx.len() as f64;
            let grads = tape.backward(loss)?;
            let slots: Vec<Option<&Tensor>> = params.iter().map(|&v| grads.get(v)).collect();
            opt.step(&mut model.params_mut(), &slots);
        }
        loss_trace.push(epoch_loss / pairs.len() as f64);
    }
    if !model.is_finite() {
        return Err(Error::Data("translator training diverged".into()));
    }
    Ok(TrainReport { model, loss_trace })
}

/// Combines two translators' logits: `sigmoid((a + b) / 2)` per pair.
pub fn ensemble(logits_a: &[f64], logits_b: &[f64]) -> Result<Vec<f64>> {
    if logits_a.len() != logits_b.len() {
        return Err(Error::DimMismatch { expected: logits_a.len(), got: logits_b.len() });
    }
    Ok(logits_a.iter().zip(logits_b).map(|(a, b)| sigmoid(0.5 * (a + b))).collect())
}

pub fn save_translator(path: &Path, model: &TranslatorModel) -> Result<()> {
    let text = serde_json::to_string(model).map_err(|e| Error::format(path, e))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_translator(path: &Path) -> Result<TranslatorModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: TranslatorModel = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    model.check_format(path)?;
    Ok(model)
}

impl TranslatorModel {
    /// Checks format version and layer shapes; `path` only labels errors.
    pub fn check_format(&self, path: &Path) -> Result<()> {
        if self.format_version != TRANSLATOR_FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: translator format {} (this build reads {})",
                path.display(),
                self.format_version,
                TRANSLATOR_FORMAT_VERSION
            )));
        }
        let mut expect_in = self.input_dims;
        for l in &self.layers {
            let s = l.weight.shape();
            if s.len() != 2 || s[0] != expect_in || l.bias.shape() != [s[1]] {
                return Err(Error::format(path, "layer shapes are inconsistent"));
            }
            expect_in = s[1];
        }
        if expect_in != 1 {
            return Err(Error::format(path, "last layer must have one output"));
        }
        Ok(())
    }
}
