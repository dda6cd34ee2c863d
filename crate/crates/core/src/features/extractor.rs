use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use super::{CellAggregation, Method, PairFeature, VirtualValueGrid};
use crate::data::ExpressionMatrix;
use crate::hash::hash_lines;
use crate::model::{ExpressionModel, GeneVocabulary, PanelInput};
use crate::parallel::{self, Execution};
use crate::warning::{Warning, WarningKind};
use crate::{Error, Result};

/// Genes presented to the model during probing, as vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    genes: Vec<usize>,
    /// Append the queried pair when it is not already in `genes`.
    extend_with_pair: bool,
}

impl Panel {
    /// A fixed panel; querying a gene outside it is an error.
    pub fn fixed(genes: Vec<usize>) -> Result<Self> {
        let mut seen = HashSet::new();
        if let Some(g) = genes.iter().find(|g| !seen.insert(**g)) {
            return Err(Error::Data(format!("gene id {g} appears twice in the panel")));
        }
        Ok(Self { genes, extend_with_pair: false })
    }

    /// The dataset's genes that the vocabulary knows, in column order; the
    /// rest are reported as skipped.
    pub fn from_expression(vocab: &GeneVocabulary, expression: &ExpressionMatrix) -> (Self, Vec<Warning>) {
        let mut genes = Vec::new();
        let mut warnings = Vec::new();
        for s in expression.symbols() {
            match vocab.id(s) {
                Some(id) => genes.push(id),
                None => warnings.push(Warning::new(
                    WarningKind::SkippedGene,
                    format!("{s} ({}) is not in the model vocabulary", expression.tags().name()),
                )),
            }
        }
        (Self { genes, extend_with_pair: false }, warnings)
    }

    /// The first `size` vocabulary genes plus whatever pair is queried.
    pub fn background(vocab: &GeneVocabulary, size: usize) -> Self {
        Self { genes: (0..size.min(vocab.len())).collect(), extend_with_pair: true }
    }

    pub fn genes(&self) -> &[usize] {
        &self.genes
    }

    pub fn extends_with_pair(&self) -> bool {
        self.extend_with_pair
    }

    /// Content hash over symbols and mode; feature caches key on it.
    pub fn hash(&self, vocab: &GeneVocabulary) -> String {
        let mut lines: Vec<&str> = self.genes.iter().map(|&g| vocab.symbol(g)).collect();
        lines.push(if self.extend_with_pair { "+pair" } else { "fixed" });
        hash_lines(&lines)
    }
}

/// Panel laid out for one query: ids plus the positions of the pair.
struct Layout {
    genes: Vec<usize>,
    pos_i: usize,
    pos_j: usize,
}

/// Output of [`FeatureExtractor::extract_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub features: Vec<PairFeature>,
    pub warnings: Vec<Warning>,
}

struct Observed<'a> {
    matrix: &'a ExpressionMatrix,
    /// Vocabulary id -> column of `matrix`.
    column: HashMap<usize, usize>,
    mean: Vec<f64>,
}

/// Probes a frozen backend. Pure given the model: every method is safe to
/// call from many threads.
pub struct FeatureExtractor<'a, M: ExpressionModel + ?Sized> {
    model: &'a M,
    grid: VirtualValueGrid,
    panel: Panel,
    position: HashMap<usize, usize>,
    observed: Option<Observed<'a>>,
    aggregation: CellAggregation,
    attention: OnceLock<Vec<f64>>,
}

impl<'a, M: ExpressionModel + ?Sized> FeatureExtractor<'a, M> {
    pub fn new(model: &'a M, grid: VirtualValueGrid, panel: Panel) -> Result<Self> {
        grid.validate()?;
        let vocab_len = model.vocabulary().len();
        if let Some(&g) = panel.genes.iter().find(|&&g| g >= vocab_len) {
            return Err(Error::UnknownGene(format!("#{g}")));
        }
        let position = panel.genes.iter().enumerate().map(|(p, &g)| (g, p)).collect();
        Ok(Self {
            model,
            grid,
            panel,
            position,
            observed: None,
            aggregation: CellAggregation::MeanCell,
            attention: OnceLock::new(),
        })
    }

    /// Supplies observed expression for the perturbation and attention
    /// probes. Panel genes missing from `expression` read as 0.
    pub fn with_expression(mut self, expression: &'a ExpressionMatrix, aggregation: CellAggregation) -> Self {
        let vocab = self.model.vocabulary();
        let column =
            expression.symbols().iter().enumerate().filter_map(|(c, s)| vocab.id(s).map(|id| (id, c))).collect();
        self.observed = Some(Observed { matrix: expression, column, mean: expression.mean_cell() });
        self.aggregation = aggregation;
        self
    }

    pub fn grid(&self) -> &VirtualValueGrid {
        &self.grid
    }

    pub fn panel(&self) -> &Panel {
        &self.panel
    }

    pub fn model(&self) -> &M {
        self.model
    }

    fn vocab(&self) -> &GeneVocabulary {
        self.model.vocabulary()
    }

    fn layout(&self, i: usize, j: usize) -> Result<Layout> {
        if i == j {
            return Err(Error::SelfPair(self.vocab().symbol(i).to_string()));
        }
        let mut genes = self.panel.genes.clone();
        let mut locate = |g: usize| -> Result<usize> {
            if let Some(&p) = self.position.get(&g) {
                return Ok(p);
            }
            if !self.panel.extend_with_pair {
                return Err(Error::NotInPanel(self.vocab().symbol(g).to_string()));
            }
            if let Some(p) = genes[self.panel.genes.len()..].iter().position(|&x| x == g) {
                return Ok(self.panel.genes.len() + p);
            }
            genes.push(g);
            Ok(genes.len() - 1)
        };
        let pos_i = locate(i)?;
        let pos_j = locate(j)?;
        Ok(Layout { genes, pos_i, pos_j })
    }

    fn observed(&self) -> Result<&Observed<'a>> {
        self.observed.as_ref().ok_or_else(|| Error::Config("this probe needs an expression matrix".into()))
    }

    /// Observed values for `genes` in cell `cell` (or the mean cell).
    fn observed_values(&self, obs: &Observed<'_>, genes: &[usize], cell: Option<usize>) -> Vec<f64> {
        genes
            .iter()
            .map(|g| match (obs.column.get(g), cell) {
                (Some(&c), Some(cell)) => obs.matrix.cell(cell)[c],
                (Some(&c), None) => obs.mean[c],
                (None, _) => 0.0,
            })
            .collect()
    }

    /// Knockout effect of gene `i` on the reconstruction of gene `j` at
    /// observed expression: `M(x)_j - M(x with x_i = 0)_j`.
    pub fn origin_pert_score(&self, i: usize, j: usize) -> Result<f64> {
        let layout = self.layout(i, j)?;
        self.knockout(&layout)
    }

    fn knockout(&self, layout: &Layout) -> Result<f64> {
        let obs = self.observed()?;
        let cells: Vec<Option<usize>> = match self.aggregation {
            CellAggregation::MeanCell => vec![None],
            CellAggregation::PerCell => (0..obs.matrix.n_cells()).map(Some).collect(),
        };
        let mut inputs = Vec::with_capacity(2 * cells.len());
        for &cell in &cells {
            let values = self.observed_values(obs, &layout.genes, cell);
            let intact = PanelInput::new(layout.genes.clone(), values)?.with_mask(layout.pos_j);
            let mut knocked = intact.clone();
            knocked.values[layout.pos_i] = 0.0;
            inputs.push(intact);
            inputs.push(knocked);
        }
        let out = self.model.reconstruct_batch(&inputs)?;
        let total: f64 = out.chunks(2).map(|p| p[0][layout.pos_j] - p[1][layout.pos_j]).sum();
        Ok(total / cells.len() as f64)
    }

    /// Layer-summed, head-averaged attention from `i` to `j` in a forward
    /// pass of the mean cell over the panel.
    pub fn origin_attn_score(&self, i: usize, j: usize) -> Result<f64> {
        let layout = self.layout(i, j)?;
        if layout.genes.len() != self.panel.genes.len() {
            let scores = self.attention_scores(&layout.genes)?;
            return Ok(scores[layout.pos_i * layout.genes.len() + layout.pos_j]);
        }
        let k = layout.genes.len();
        Ok(self.attention_matrix()?[layout.pos_i * k + layout.pos_j])
    }

    /// Aggregated attention over the whole panel, `[K, K]` row-major in
    /// panel order; computed once.
    pub fn attention_matrix(&self) -> Result<&[f64]> {
        if self.attention.get().is_none() {
            let scores = self.attention_scores(&self.panel.genes)?;
            let _ = self.attention.set(scores);
        }
        Ok(self.attention.get().expect("set above"))
    }

    /// `[K, K]` row-major matrix of aggregated attention over `genes`.
    fn attention_scores(&self, genes: &[usize]) -> Result<Vec<f64>> {
        let obs = self.observed()?;
        let input = PanelInput::new(genes.to_vec(), self.observed_values(obs, genes, None))?;
        let record = self.model.attention(&input)?;
        let (k, heads) = (record.panel_len(), record.n_heads());
        let mut scores = vec![0.0; k * k];
        for layer in &record.layers {
            for h in 0..heads {
                for (s, a) in scores.iter_mut().zip(&layer.data()[h * k * k..(h + 1) * k * k]) {
                    *s += a / heads as f64;
                }
            }
        }
        Ok(scores)
    }

    /// `[s_ij, s_ji]` with `s` the knockout score.
    pub fn pert_feature(&self, i: usize, j: usize) -> Result<PairFeature> {
        let layout = self.layout(i, j)?;
        let fwd = self.knockout(&layout)?;
        let rev = self.knockout(&swap(&layout))?;
        finish(i, j, Method::Pert, vec![fwd, rev])
    }

    /// `E_i + E_j`, repeated for both directions.
    pub fn emb_feature(&self, i: usize, j: usize) -> Result<PairFeature> {
        if i == j {
            return Err(Error::SelfPair(self.vocab().symbol(i).to_string()));
        }
        let table = self.model.gene_embeddings()?;
        let d = table.last_dim();
        let (n, data) = (self.vocab().len(), table.data());
        if i >= n || j >= n {
            return Err(Error::UnknownGene(format!("#{}", i.max(j))));
        }
        let sum: Vec<f64> = (0..d).map(|k| data[i * d + k] + data[j * d + k]).collect();
        let mut vector = sum.clone();
        vector.extend(sum);
        finish(i, j, Method::Emb, vector)
    }

    /// Virtual perturbation: for every target `v_p,m`, the change in the
    /// reconstruction of `j` when gene `i` moves from `v_b` to `v_p,m` with
    /// the rest of the panel held at `v_b`.
    pub fn vvp_feature(&self, i: usize, j: usize) -> Result<PairFeature> {
        let layout = self.layout(i, j)?;
        let mut vector = self.vvp_direction(&layout)?;
        vector.extend(self.vvp_direction(&swap(&layout))?);
        finish(i, j, Method::Vvp, vector)
    }

    fn vvp_direction(&self, layout: &Layout) -> Result<Vec<f64>> {
        let base = self.virtual_input(layout)?;
        let mut inputs = Vec::with_capacity(self.grid.targets.len() + 1);
        inputs.push(base.clone());
        for &v in &self.grid.targets {
            let mut p = base.clone();
            p.values[layout.pos_i] = v;
            inputs.push(p);
        }
        let out = self.model.reconstruct_batch(&inputs)?;
        let reference = out[0][layout.pos_j];
        Ok(out[1..].iter().map(|o| o[layout.pos_j] - reference).collect())
    }

    /// Gradient trajectory: `d M(v)_j / d v_i` with gene `i` at each base
    /// value `v_b,t` and the rest of the panel at `v_b`.
    pub fn gdt_feature(&self, i: usize, j: usize) -> Result<PairFeature> {
        let layout = self.layout(i, j)?;
        let mut vector = self.gdt_direction(&layout)?;
        vector.extend(self.gdt_direction(&swap(&layout))?);
        finish(i, j, Method::Gdt, vector)
    }

    fn gdt_direction(&self, layout: &Layout) -> Result<Vec<f64>> {
        let base = self.virtual_input(layout)?;
        let inputs: Vec<PanelInput> = self
            .grid
            .gradient_bases
            .iter()
            .map(|&v| {
                let mut p = base.clone();
                p.values[layout.pos_i] = v;
                p
            })
            .collect();
        let targets = vec![layout.pos_j; inputs.len()];
        let grads = self.model.input_gradient_batch(&inputs, &targets)?;
        Ok(grads.iter().map(|g| g[layout.pos_i]).collect())
    }

    fn virtual_input(&self, layout: &Layout) -> Result<PanelInput> {
        let values = vec![self.grid.base; layout.genes.len()];
        Ok(PanelInput::new(layout.genes.clone(), values)?.with_mask(layout.pos_j))
    }

    /// Feature of `method` for the pair of vocabulary ids `(i, j)`. The
    /// zero-shot methods return `[s_ij, s_ji]`.
    pub fn feature(&self, method: Method, i: usize, j: usize) -> Result<PairFeature> {
        match method {
            Method::OriginPert => {
                let v = vec![self.origin_pert_score(i, j)?, self.origin_pert_score(j, i)?];
                finish(i, j, method, v)
            }
            Method::OriginAttn => {
                let v = vec![self.origin_attn_score(i, j)?, self.origin_attn_score(j, i)?];
                finish(i, j, method, v)
            }
            Method::Pert => self.pert_feature(i, j),
            Method::Emb => self.emb_feature(i, j),
            Method::Vvp => self.vvp_feature(i, j),
            Method::Gdt => self.gdt_feature(i, j),
        }
    }

    /// Features for symbol pairs, in input order. Pairs naming a gene the
    /// vocabulary does not know are skipped with a warning.
    pub fn extract_batch(&self, method: Method, pairs: &[(String, String)], exec: Execution) -> Result<Extraction> {
        let mut seen = HashSet::new();
        if let Some((s, t)) = pairs.iter().find(|p| !seen.insert(*p)) {
            return Err(Error::Data(format!("pair ({s}, {t}) is listed twice")));
        }
        let mut warnings = Vec::new();
        let mut resolved = Vec::with_capacity(pairs.len());
        for (s, t) in pairs {
            match (self.vocab().id(s), self.vocab().id(t)) {
                (Some(i), Some(j)) => resolved.push((i, j)),
                (a, b) => {
                    let missing: Vec<&str> = [(a, s), (b, t)]
                        .into_iter()
                        .filter(|(id, _)| id.is_none())
                        .map(|(_, sym)| sym.as_str())
                        .collect();
                    warnings.push(Warning::new(
                        WarningKind::SkippedGene,
                        format!("pair ({s}, {t}) skipped: {} not in the model vocabulary", missing.join(", ")),
                    ));
                }
            }
        }
        if resolved.is_empty() && !pairs.is_empty() {
            return Err(Error::Data(format!("all {} pairs were skipped; no features extracted", pairs.len())));
        }
        let features = parallel::map(exec, &resolved, |&(i, j)| self.feature(method, i, j))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Extraction { features, warnings })
    }
}

fn swap(layout: &Layout) -> Layout {
    Layout { genes: layout.genes.clone(), pos_i: layout.pos_j, pos_j: layout.pos_i }
}

fn finish(source: usize, target: usize, method: Method, vector: Vec<f64>) -> Result<PairFeature> {
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{method} feature for ids ({source}, {target}) is not finite")));
    }
    Ok(PairFeature { source, target, method, vector })
}
