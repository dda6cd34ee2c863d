//! Planted-network expression simulator.
//!
//! Transcription factors are drawn i.i.d. lognormal and clipped to the
//! log1p range `[0, 6]`; every other gene is a rectified linear response to
//! its regulators plus Gaussian noise, clipped at zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetTags, EdgeSet, ExpressionMatrix};
use crate::{Error, Result};

/// Upper end of the log1p expression range.
pub const EXPRESSION_CEILING: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_genes: usize,
    pub n_tfs: usize,
    /// Probability that a given TF regulates a given non-TF gene.
    pub density: f64,
    /// Edge weights are drawn from `±[0.5, 1.5] * weight_scale`.
    pub weight_scale: f64,
    pub noise_sigma: f64,
    pub n_cells: usize,
    pub seed: u64,
    /// Location and scale of the TF lognormal, in log space.
    pub tf_log_mean: f64,
    pub tf_log_sd: f64,
    /// Prepended to every gene symbol; disjoint prefixes emulate species.
    pub symbol_prefix: String,
    pub tags: DatasetTags,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_genes: 50,
            n_tfs: 10,
            density: 0.15,
            weight_scale: 1.0,
            noise_sigma: 0.1,
            n_cells: 2000,
            seed: 0,
            tf_log_mean: 0.0,
            tf_log_sd: 0.5,
            symbol_prefix: String::new(),
            tags: DatasetTags::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tfs == 0 {
            return Err(Error::Config("synthetic data needs at least one TF".into()));
        }
        if self.n_tfs > self.n_genes || self.n_genes < 2 {
            return Err(Error::Config(format!("{} TFs among {} genes", self.n_tfs, self.n_genes)));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density {} outside (0, 1]", self.density)));
        }
        if !(self.noise_sigma >= 0.0) || self.n_cells == 0 || !(self.tf_log_sd >= 0.0) {
            return Err(Error::Config("noise sigma and TF spread must be >= 0, cells > 0".into()));
        }
        Ok(())
    }

    pub fn tf_symbol(&self, i: usize) -> String {
        format!("{}TF{i:03}", self.symbol_prefix)
    }

    pub fn target_symbol(&self, j: usize) -> String {
        format!("{}G{j:03}", self.symbol_prefix)
    }
}

/// Structural equations of a planted network: `weights[t][g]` is the effect
/// of TF `t` on non-TF gene `g`, `bias[g]` its offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedWeights {
    pub tfs: Vec<String>,
    pub targets: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl PlantedWeights {
    pub fn edge_set(&self) -> EdgeSet {
        let mut edges = Vec::new();
        for (t, row) in self.tfs.iter().zip(&self.weights) {
            for (g, &w) in self.targets.iter().zip(row) {
                if w != 0.0 {
                    edges.push((t.clone(), g.clone()));
                }
            }
        }
        EdgeSet::new(self.tfs.clone(), edges).expect("planted TF->target edges are valid")
    }

    /// Noise-free response of every target to a TF profile.
    pub fn respond(&self, tf_values: &[f64]) -> Vec<f64> {
        (0..self.targets.len())
            .map(|g| {
                let pre: f64 =
                    self.bias[g] + tf_values.iter().zip(&self.weights).map(|(x, row)| x * row[g]).sum::<f64>();
                pre.max(0.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub expression: ExpressionMatrix,
    pub edges: EdgeSet,
    pub planted: PlantedWeights,
}

/// Draws planted weights for `config`.
pub fn plant_network(config: &SynthConfig, rng: &mut ChaCha8Rng) -> PlantedWeights {
    let n_targets = config.n_genes - config.n_tfs;
    let tfs: Vec<String> = (0..config.n_tfs).map(|i| config.tf_symbol(i)).collect();
    let targets: Vec<String> = (0..n_targets).map(|j| config.target_symbol(j)).collect();
    let mut weights = vec![vec![0.0; n_targets]; config.n_tfs];
    for row in weights.iter_mut() {
        for w in row.iter_mut() {
            if rng.random::<f64>() < config.density {
                let magnitude = rng.random_range(0.5..1.5) * config.weight_scale;
                *w = if rng.random::<bool>() { magnitude } else { -magnitude };
            }
        }
    }
    // Keep most cells in the linear part of the rectifier: offset every
    // repressive input by the 95th percentile of a TF's level.
    let tf_high = (config.tf_log_mean + 1.645 * config.tf_log_sd).exp().min(EXPRESSION_CEILING);
    let bias =
        (0..n_targets).map(|g| 0.1 + weights.iter().map(|row| (-row[g]).max(0.0) * tf_high).sum::<f64>()).collect();
    PlantedWeights { tfs, targets, weights, bias }
}

/// Samples `n_cells` cells from fixed structural equations. Gene columns are
/// the TFs followed by the targets.
pub fn simulate_cells(
    planted: &PlantedWeights,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ExpressionMatrix> {
    let tf_dist = LogNormal::new(config.tf_log_mean, config.tf_log_sd)
        .map_err(|e| Error::Config(format!("TF distribution: {e}")))?;
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let k = planted.tfs.len() + planted.targets.len();
    let mut values = Vec::with_capacity(config.n_cells * k);
    for _ in 0..config.n_cells {
        let tf_values: Vec<f64> =
            (0..planted.tfs.len()).map(|_| tf_dist.sample(rng).clamp(0.0, EXPRESSION_CEILING)).collect();
        let response = planted.respond(&tf_values);
        values.extend_from_slice(&tf_values);
        for r in response {
            let v = if config.noise_sigma > 0.0 { r + noise.sample(rng) } else { r };
            values.push(v.max(0.0));
        }
    }
    let symbols = planted.tfs.iter().chain(&planted.targets).cloned().collect();
    ExpressionMatrix::new(symbols, values, config.tags.clone())
}

/// Plants a network and samples expression from it; deterministic per seed.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let planted = plant_network(config, &mut rng);
    let expression = simulate_cells(&planted, config, &mut rng)?;
    let edges = planted.edge_set();
    Ok(SyntheticDataset { expression, edges, planted })
}

/// Re-labels a dataset's genes with a new prefix, keeping the mechanism.
/// Used to emulate cross-species splits with disjoint symbol sets.
pub fn rename_species(dataset: &SyntheticDataset, from: &str, to: &str, tags: DatasetTags) -> Result<SyntheticDataset> {
    let rename = |s: &String| match s.strip_prefix(from) {
        Some(rest) => format!("{to}{rest}"),
        None => format!("{to}{s}"),
    };
    let symbols = dataset.expression.symbols().iter().map(rename).collect();
    let expression = ExpressionMatrix::new(symbols, dataset.expression.values().to_vec(), tags)?;
    let planted = PlantedWeights {
        tfs: dataset.planted.tfs.iter().map(rename).collect(),
        targets: dataset.planted.targets.iter().map(rename).collect(),
        weights: dataset.planted.weights.clone(),
        bias: dataset.planted.bias.clone(),
    };
    let edges = planted.edge_set();
    Ok(SyntheticDataset { expression, edges, planted })
}

/// A ground-truth variant over the same expression: keeps each edge with
/// probability `keep`. Emulates alternative networks for one source.
pub fn network_variant(edges: &EdgeSet, keep: f64, seed: u64) -> EdgeSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = edges.edges().iter().filter(|_| rng.random::<f64>() < keep).cloned().collect();
    EdgeSet::new(edges.tfs().to_vec(), kept).expect("subset of a valid edge set is valid")
}
