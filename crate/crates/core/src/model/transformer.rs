//! Toy single-cell foundation model.
//!
//! Every panel entry becomes a token `E[gene] + enc(value)`, where `enc` is
//! a small tanh MLP on the scalar value (continuous encoding, no binning, so
//! gradients reach the inputs). Masked entries use a learned mask vector in
//! place of `enc(value)`. Tokens pass through pre-norm transformer blocks
//! (multi-head self-attention, GELU feed-forward) and a final layer norm;
//! a shared linear head reads one value per token.
//!
//! Pretraining minimises mean-squared error on masked positions only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_batch, AttentionRecord, ExpressionModel, GeneVocabulary, PanelInput};
use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::data::ExpressionMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScFMConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub value_hidden: usize,
    pub ffn_dim: usize,
    pub mask_fraction: f64,
    pub pretrain_steps: usize,
    /// Cells per pretraining step.
    pub batch_cells: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ScFMConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dim: 64,
            value_hidden: 32,
            ffn_dim: 128,
            mask_fraction: 0.15,
            pretrain_steps: 1000,
            batch_cells: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl ScFMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.value_hidden == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::Config(format!("mask fraction {} outside (0, 1)", self.mask_fraction)));
        }
        if !(self.learning_rate > 0.0) || self.batch_cells == 0 {
            return Err(Error::Config("learning rate and batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w_query: Tensor,
    pub w_key: Tensor,
    pub w_value: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub w_ffn1: Tensor,
    pub b_ffn1: Tensor,
    pub w_ffn2: Tensor,
    pub b_ffn2: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScFMParams {
    /// Gene embedding table `[|V|, d]`.
    pub embedding: Tensor,
    pub value_w1: Tensor,
    pub value_b1: Tensor,
    pub value_w2: Tensor,
    pub value_b2: Tensor,
    pub mask_token: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_gamma: Tensor,
    pub final_beta: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..=bound)).collect()).expect("shape")
}

fn fan_in_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, &[rows, cols], 1.0 / (rows as f64).sqrt())
}

impl ScFMParams {
    /// Seeded initialization. The head starts at zero weights with its bias
    /// at `output_bias`, so an untrained model predicts that constant.
    pub fn init(config: &ScFMConfig, vocab_len: usize, output_bias: f64, rng: &mut ChaCha8Rng) -> Self {
        let d = config.model_dim;
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_gamma: Tensor::full(&[d], 1.0),
                ln1_beta: Tensor::zeros(&[d]),
                w_query: fan_in_uniform(rng, d, d),
                w_key: fan_in_uniform(rng, d, d),
                w_value: fan_in_uniform(rng, d, d),
                w_out: fan_in_uniform(rng, d, d),
                b_out: Tensor::zeros(&[d]),
                ln2_gamma: Tensor::full(&[d], 1.0),
                ln2_beta: Tensor::zeros(&[d]),
                w_ffn1: fan_in_uniform(rng, d, config.ffn_dim),
                b_ffn1: Tensor::zeros(&[config.ffn_dim]),
                w_ffn2: fan_in_uniform(rng, config.ffn_dim, d),
                b_ffn2: Tensor::zeros(&[d]),
            })
            .collect();
        Self {
            embedding: uniform(rng, &[vocab_len, d], 1.0),
            value_w1: uniform(rng, &[1, config.value_hidden], 1.0),
            value_b1: uniform(rng, &[config.value_hidden], 1.0),
            value_w2: fan_in_uniform(rng, config.value_hidden, d),
            value_b2: Tensor::zeros(&[d]),
            mask_token: uniform(rng, &[d], 1.0),
            layers,
            final_gamma: Tensor::full(&[d], 1.0),
            final_beta: Tensor::zeros(&[d]),
            head_w: Tensor::zeros(&[d, 1]),
            head_b: Tensor::full(&[1], output_bias),
        }
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out =
            vec![&self.embedding, &self.value_w1, &self.value_b1, &self.value_w2, &self.value_b2, &self.mask_token];
        for l in &self.layers {
            out.extend([
                &l.ln1_gamma,
                &l.ln1_beta,
                &l.w_query,
                &l.w_key,
                &l.w_value,
                &l.w_out,
                &l.b_out,
                &l.ln2_gamma,
                &l.ln2_beta,
                &l.w_ffn1,
                &l.b_ffn1,
                &l.w_ffn2,
                &l.b_ffn2,
            ]);
        }
        out.extend([&self.final_gamma, &self.final_beta, &self.head_w, &self.head_b]);
        out
    }

    /// Same order as [`ScFMParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.embedding,
            &mut self.value_w1,
            &mut self.value_b1,
            &mut self.value_w2,
            &mut self.value_b2,
            &mut self.mask_token,
        ];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_gamma,
                &mut l.ln1_beta,
                &mut l.w_query,
                &mut l.w_key,
                &mut l.w_value,
                &mut l.w_out,
                &mut l.b_out,
                &mut l.ln2_gamma,
                &mut l.ln2_beta,
                &mut l.w_ffn1,
                &mut l.b_ffn1,
                &mut l.w_ffn2,
                &mut l.b_ffn2,
            ]);
        }
        out.extend([&mut self.final_gamma, &mut self.final_beta, &mut self.head_w, &mut self.head_b]);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Parameters registered as tape leaves, in [`ScFMParams::tensors`] order.
struct ParamVars {
    all: Vec<Var>,
    n_layers: usize,
}

const LAYER_PARAMS: usize = 13;

impl ParamVars {
    fn register(params: &ScFMParams, tape: &mut Tape) -> Self {
        let all = params.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        Self { all, n_layers: params.layers.len() }
    }

    fn layer(&self, l: usize, k: usize) -> Var {
        self.all[6 + l * LAYER_PARAMS + k]
    }

    fn tail(&self, k: usize) -> Var {
        self.all[6 + self.n_layers * LAYER_PARAMS + k]
    }
}

/// A transformer backend with frozen parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScFM {
    pub config: ScFMConfig,
    pub vocabulary: GeneVocabulary,
    pub params: ScFMParams,
}

struct Forward {
    output: Var,
    attention: Vec<Var>,
    values: Var,
}

impl ScFM {
    pub fn new(config: ScFMConfig, vocabulary: GeneVocabulary, params: ScFMParams) -> Result<Self> {
        config.validate()?;
        if params.embedding.shape() != [vocabulary.len(), config.model_dim] {
            return Err(Error::Incompatible(format!(
                "embedding table {:?} does not match vocabulary of {} genes at dim {}",
                params.embedding.shape(),
                vocabulary.len(),
                config.model_dim
            )));
        }
        if params.layers.len() != config.layers {
            return Err(Error::Incompatible("layer count does not match configuration".into()));
        }
        Ok(Self { config, vocabulary, params })
    }

    /// Freshly initialized (untrained) model.
    pub fn initialized(config: ScFMConfig, vocabulary: GeneVocabulary, output_bias: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ScFMParams::init(&config, vocabulary.len(), output_bias, &mut rng);
        Self::new(config, vocabulary, params)
    }

    /// Weighted reconstruction error over `inputs` (equal panel lengths):
    /// `sum_r w_r (y_r - t_r)^2 / sum_r w_r`, rows in input-major order.
    pub fn masked_loss(&self, inputs: &[PanelInput], targets: &[f64], weights: &[f64]) -> Result<f64> {
        let mut tape = Tape::inference();
        self.loss_graph(&mut tape, inputs, targets, weights).map(|(loss, _)| tape.value(loss).item().expect("scalar"))
    }

    /// [`ScFM::masked_loss`] and its gradient for every parameter tensor, in
    /// [`ScFMParams::tensors`] order.
    pub fn masked_loss_gradient(
        &self,
        inputs: &[PanelInput],
        targets: &[f64],
        weights: &[f64],
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let (loss, pv) = self.loss_graph(&mut tape, inputs, targets, weights)?;
        let value = tape.value(loss).item().expect("scalar");
        let grads = tape.backward(loss)?;
        let params = self.params.tensors();
        let out = pv
            .all
            .iter()
            .zip(params)
            .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, out))
    }

    fn loss_graph(
        &self,
        tape: &mut Tape,
        inputs: &[PanelInput],
        targets: &[f64],
        weights: &[f64],
    ) -> Result<(Var, ParamVars)> {
        let k = check_batch(inputs, self.vocabulary.len())?;
        let pv = ParamVars::register(&self.params, tape);
        let fwd = self.forward(tape, &pv, inputs, k)?;
        let target = Tensor::new(vec![inputs.len() * k, 1], targets.to_vec())?;
        Ok((tape.weighted_mse(fwd.output, &target, weights)?, pv))
    }

    /// Builds the batched forward pass on `tape` for inputs of equal panel
    /// length `k`.
    fn forward(&self, tape: &mut Tape, pv: &ParamVars, inputs: &[PanelInput], k: usize) -> Result<Forward> {
        let b = inputs.len();
        let d = self.config.model_dim;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let rows = b * k;

        let ids: Vec<usize> = inputs.iter().flat_map(|i| i.genes.iter().copied()).collect();
        let vals: Vec<f64> = inputs.iter().flat_map(|i| i.values.iter().copied()).collect();
        let mask: Vec<bool> = inputs.iter().flat_map(|i| i.masked.iter().copied()).collect();

        let values = tape.leaf(Tensor::new(vec![rows, 1], vals)?);
        let emb = tape.gather(pv.all[0], &ids)?;
        let h = tape.matmul(values, pv.all[1])?;
        let h = tape.add_bias(h, pv.all[2])?;
        let h = tape.tanh(h)?;
        let enc = tape.matmul(h, pv.all[3])?;
        let enc = tape.add_bias(enc, pv.all[4])?;
        let enc = tape.mask_rows(enc, pv.all[5], &mask)?;
        let mut x = tape.add(emb, enc)?;

        let mut attention = Vec::with_capacity(self.config.layers);
        let scale = 1.0 / (dh as f64).sqrt();
        for l in 0..self.config.layers {
            let p = |i| pv.layer(l, i);
            let hn = tape.layer_norm(x, p(0), p(1))?;
            let split = |tape: &mut Tape, t: Var| -> Result<Var> {
                let t = tape.reshape(t, &[b, k, heads, dh])?;
                let t = tape.swap_axes12(t)?;
                Ok(tape.reshape(t, &[b * heads, k, dh])?)
            };
            let q = tape.matmul(hn, p(2))?;
            let q = split(tape, q)?;
            let kk = tape.matmul(hn, p(3))?;
            let kk = split(tape, kk)?;
            let v = tape.matmul(hn, p(4))?;
            let v = split(tape, v)?;
            let scores = tape.matmul_nt(q, kk)?;
            let scores = tape.scale(scores, scale)?;
            let att = tape.softmax(scores)?;
            attention.push(att);
            let ctx = tape.matmul(att, v)?;
            let ctx = tape.reshape(ctx, &[b, heads, k, dh])?;
            let ctx = tape.swap_axes12(ctx)?;
            let ctx = tape.reshape(ctx, &[rows, d])?;
            let o = tape.matmul(ctx, p(5))?;
            let o = tape.add_bias(o, p(6))?;
            x = tape.add(x, o)?;

            let hn = tape.layer_norm(x, p(7), p(8))?;
            let f = tape.matmul(hn, p(9))?;
            let f = tape.add_bias(f, p(10))?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, p(11))?;
            let f = tape.add_bias(f, p(12))?;
            x = tape.add(x, f)?;
        }
        let xf = tape.layer_norm(x, pv.tail(0), pv.tail(1))?;
        let out = tape.matmul(xf, pv.tail(2))?;
        let out = tape.add_bias(out, pv.tail(3))?;
        Ok(Forward { output: out, attention, values })
    }
}

impl ExpressionModel for ScFM {
    fn backend_name(&self) -> &'static str {
        "transformer"
    }

    fn vocabulary(&self) -> &GeneVocabulary {
        &self.vocabulary
    }

    fn reconstruct_batch(&self, inputs: &[PanelInput]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let k = check_batch(inputs, self.vocabulary.len())?;
        let mut tape = Tape::inference();
        let pv = ParamVars::register(&self.params, &mut tape);
        let fwd = self.forward(&mut tape, &pv, inputs, k)?;
        Ok(tape.value(fwd.output).data().chunks(k).map(<[f64]>::to_vec).collect())
    }

    fn input_gradient_batch(&self, inputs: &[PanelInput], targets: &[usize]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let k = check_batch(inputs, self.vocabulary.len())?;
        if targets.len() != inputs.len() {
            return Err(Error::DimMismatch { expected: inputs.len(), got: targets.len() });
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::NotInPanel(format!("position {bad}")));
        }
        let mut tape = Tape::new();
        let pv = ParamVars::register(&self.params, &mut tape);
        let fwd = self.forward(&mut tape, &pv, inputs, k)?;
        // Cells never interact, so the gradient of the summed picks splits
        // into one independent gradient per cell.
        let picks: Vec<usize> = targets.iter().enumerate().map(|(b, &t)| b * k + t).collect();
        let total = tape.pick_sum(fwd.output, &picks)?;
        let grads = tape.backward(total)?;
        let g = grads.get(fwd.values).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs.len() * k]);
        Ok(g.chunks(k).map(<[f64]>::to_vec).collect())
    }

    fn attention(&self, input: &PanelInput) -> Result<AttentionRecord> {
        let k = check_batch(std::slice::from_ref(input), self.vocabulary.len())?;
        let mut tape = Tape::inference();
        let pv = ParamVars::register(&self.params, &mut tape);
        let fwd = self.forward(&mut tape, &pv, std::slice::from_ref(input), k)?;
        let layers = fwd.attention.iter().map(|&a| tape.value(a).clone()).collect();
        Ok(AttentionRecord { layers })
    }

    fn gene_embeddings(&self) -> Result<&Tensor> {
        Ok(&self.params.embedding)
    }
}

/// Outcome of [`pretrain_masked`]: the frozen model and per-step loss.
#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub model: ScFM,
    pub loss_trace: Vec<f64>,
}

/// Draws one masked minibatch: random cells from a random dataset, each
/// position masked with probability `mask_fraction` (at least one per cell).
fn masked_batch(
    datasets: &[(&ExpressionMatrix, Vec<usize>)],
    n_cells: usize,
    mask_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<PanelInput>, Vec<f64>, Vec<f64>) {
    let (matrix, ids) = &datasets[rng.random_range(0..datasets.len())];
    let k = ids.len();
    let mut inputs = Vec::with_capacity(n_cells);
    let mut targets = Vec::with_capacity(n_cells * k);
    let mut weights = Vec::with_capacity(n_cells * k);
    for _ in 0..n_cells {
        let c = rng.random_range(0..matrix.n_cells());
        let values = matrix.cell(c).to_vec();
        let mut masked: Vec<bool> = (0..k).map(|_| rng.random::<f64>() < mask_fraction).collect();
        if !masked.iter().any(|&m| m) {
            masked[rng.random_range(0..k)] = true;
        }
        targets.extend_from_slice(&values);
        weights.extend(masked.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        inputs.push(PanelInput { genes: ids.clone(), values, masked });
    }
    (inputs, targets, weights)
}

fn resolve_datasets<'a>(
    vocabulary: &GeneVocabulary,
    expression: &[&'a ExpressionMatrix],
) -> Result<Vec<(&'a ExpressionMatrix, Vec<usize>)>> {
    expression.iter().map(|m| Ok((*m, vocabulary.resolve_all(m.symbols())?))).collect()
}

/// Masked-value pretraining with Adam. The vocabulary must cover every gene
/// of every dataset; batches never mix datasets.
pub fn pretrain_masked(
    config: &ScFMConfig,
    vocabulary: GeneVocabulary,
    expression: &[&ExpressionMatrix],
) -> Result<PretrainReport> {
    config.validate()?;
    if expression.is_empty() || expression.iter().any(|m| m.n_cells() == 0) {
        return Err(Error::Data("pretraining needs at least one cell".into()));
    }
    let datasets = resolve_datasets(&vocabulary, expression)?;
    let total: f64 = expression.iter().map(|m| m.values().iter().sum::<f64>()).sum();
    let count: usize = expression.iter().map(|m| m.values().len()).sum();
    let mut model = ScFM::initialized(config.clone(), vocabulary, total / count as f64)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c);
    let mut opt = Adam::new(config.learning_rate);
    let mut loss_trace = Vec::with_capacity(config.pretrain_steps);
    for _ in 0..config.pretrain_steps {
        let (inputs, targets, weights) = masked_batch(&datasets, config.batch_cells, config.mask_fraction, &mut rng);
        let (loss, grads) = model.masked_loss_gradient(&inputs, &targets, &weights)?;
        loss_trace.push(loss);
        let slots: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
        opt.step(&mut model.params.tensors_mut(), &slots);
    }
    if !model.params.is_finite() {
        return Err(Error::Data("pretraining diverged to non-finite parameters".into()));
    }
    Ok(PretrainReport { model, loss_trace })
}

/// Mean squared error on masked positions over `batches` seeded random
/// masked minibatches; comparable across predictors sharing the seed.
pub fn masked_mse<F>(
    expression: &ExpressionMatrix,
    ids: &[usize],
    mask_fraction: f64,
    batches: usize,
    batch_cells: usize,
    seed: u64,
    mut predict: F,
) -> Result<f64>
where
    F: FnMut(&[PanelInput]) -> Result<Vec<Vec<f64>>>,
{
    let datasets = [(expression, ids.to_vec())];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut total, mut weight) = (0.0, 0.0);
    for _ in 0..batches {
        let (inputs, targets, weights) = masked_batch(&datasets, batch_cells, mask_fraction, &mut rng);
        let preds = predict(&inputs)?;
        for ((p, t), w) in preds.iter().flatten().zip(&targets).zip(&weights) {
            total += w * (p - t) * (p - t);
            weight += w;
        }
    }
    Ok(total / weight)
}
