use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetTags;
use crate::eval::{EvalMethod, ProtocolSpec, SWEEP_RATIOS};
use crate::features::{CellAggregation, Method, VirtualValueGrid};
use crate::model::ScFMConfig;
use crate::parallel::Execution;
use crate::translator::TranslatorConfig;
use crate::{Error, Result};

/// Everything a pipeline run depends on. One file drives every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stage seed is derived from it.
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<EvalMethod>,
    /// N/P ratio of the sampled pair sets.
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub execution: Execution,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub translator: TranslatorConfig,
    #[serde(default)]
    pub eval: EvalSection,
    /// Directory relative paths resolve against; not part of the manifest.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_methods() -> Vec<EvalMethod> {
    vec![EvalMethod::Single(Method::Vvp), EvalMethod::Single(Method::Gdt), EvalMethod::Ensemble]
}

fn default_ratio() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// A planted network simulated from scratch.
    Synthetic {
        source: String,
        species: String,
        network: String,
        #[serde(default)]
        synth: SynthParams,
    },
    /// Another ground-truth network over an earlier dataset's expression.
    Variant { of: String, network: String, keep: f64 },
    /// An earlier synthetic dataset's mechanism under new gene symbols.
    Species { of: String, source: String, species: String, network: String, prefix: String },
    /// BEELINE-style files; tags and TF list come from the metadata sidecar.
    Files {
        expression: PathBuf,
        edges: PathBuf,
        meta: PathBuf,
        #[serde(default)]
        hvg: Option<usize>,
    },
}

/// Simulator settings; the seed and tags come from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_genes: usize,
    pub n_tfs: usize,
    pub density: f64,
    pub weight_scale: f64,
    pub noise_sigma: f64,
    pub n_cells: usize,
    pub tf_log_mean: f64,
    pub tf_log_sd: f64,
    pub symbol_prefix: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        let d = crate::data::SynthConfig::default();
        Self {
            n_genes: d.n_genes,
            n_tfs: d.n_tfs,
            density: d.density,
            weight_scale: d.weight_scale,
            noise_sigma: d.noise_sigma,
            n_cells: d.n_cells,
            tf_log_mean: d.tf_log_mean,
            tf_log_sd: d.tf_log_sd,
            symbol_prefix: d.symbol_prefix,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Transformer,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backend: Backend,
    /// Ridge strength of the linear backend.
    pub ridge: f64,
    pub transformer: ScFMConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { backend: Backend::default(), ridge: 1e-3, transformer: ScFMConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub grid: VirtualValueGrid,
    pub aggregation: CellAggregation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub protocol: ProtocolSpec,
    /// Score every candidate pair instead of a sampled set.
    pub all_pairs: bool,
    pub sweep: Option<SweepSection>,
}

/// Class-imbalance sweep on one dataset with held-out TFs: the translator
/// trains on pairs from half the TFs and is tested on the other half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub dataset: String,
    pub method: EvalMethod,
    pub ratios: Vec<f64>,
    /// Resample and retrain the training half at each ratio; otherwise the
    /// translator is trained once at the run's `ratio`.
    pub retrain: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            dataset: String::new(),
            method: EvalMethod::Single(Method::Gdt),
            ratios: SWEEP_RATIOS.to_vec(),
            retrain: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| Error::format(path, e))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no evaluation methods selected".into()));
        }
        if !(self.ratio > 0.0) || !self.ratio.is_finite() {
            return Err(Error::Config(format!("N/P ratio {} must be finite and > 0", self.ratio)));
        }
        if self.translator.seed != 0 || self.model.transformer.seed != 0 {
            return Err(Error::Config("module seeds are derived from the global `seed`; leave them unset".into()));
        }
        self.translator.validate()?;
        self.features.grid.validate()?;
        if self.model.backend == Backend::Transformer {
            self.model.transformer.validate()?;
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("no datasets configured".into()));
        }
        let mut names: HashSet<String> = HashSet::new();
        for (n, d) in self.datasets.iter().enumerate() {
            match d {
                DatasetSpec::Variant { of, keep, .. } => {
                    self.earlier(n, of)?;
                    if !(*keep > 0.0 && *keep <= 1.0) {
                        return Err(Error::Config(format!("variant of {of}: keep {keep} outside (0, 1]")));
                    }
                }
                DatasetSpec::Species { of, .. } => {
                    if !matches!(self.datasets[self.earlier(n, of)?], DatasetSpec::Synthetic { .. }) {
                        return Err(Error::Config(format!("species copy of {of}: source must be synthetic")));
                    }
                }
                DatasetSpec::Files { expression, edges, meta, .. } => {
                    for p in [expression, edges, meta] {
                        let full = self.resolve(p);
                        if !full.is_file() {
                            return Err(Error::Config(format!("dataset file {} does not exist", full.display())));
                        }
                    }
                }
                DatasetSpec::Synthetic { .. } => {}
            }
            if let Some(name) = self.static_name(n) {
                if !names.insert(name.clone()) {
                    return Err(Error::Config(format!("dataset name {name} is used twice")));
                }
            }
        }
        if let Some(sweep) = &self.eval.sweep {
            if sweep.ratios.is_empty() || sweep.ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
                return Err(Error::Config("sweep ratios must be finite and > 0".into()));
            }
        }
        Ok(())
    }

    /// Index of the dataset named `name` among those before `n`.
    fn earlier(&self, n: usize, name: &str) -> Result<usize> {
        (0..n)
            .find(|&k| self.static_name(k).as_deref() == Some(name))
            .ok_or_else(|| Error::Config(format!("dataset {name} must be defined before it is referenced")))
    }

    /// Tags of dataset `n` when the config alone determines them.
    pub fn static_tags(&self, n: usize) -> Option<DatasetTags> {
        match &self.datasets[n] {
            DatasetSpec::Synthetic { source, species, network, .. }
            | DatasetSpec::Species { source, species, network, .. } => Some(DatasetTags::new(source, species, network)),
            DatasetSpec::Variant { of, network, .. } => {
                let k = self.earlier(n, of).ok()?;
                let base = self.static_tags(k)?;
                Some(DatasetTags { network: network.clone(), ..base })
            }
            DatasetSpec::Files { .. } => None,
        }
    }

    fn static_name(&self, n: usize) -> Option<String> {
        self.static_tags(n).map(|t| t.name())
    }

    /// Canonical JSON echo of the configuration (keys sorted).
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON of every config field.
    pub fn manifest_hash(&self) -> String {
        crate::hash::sha256_hex(self.to_value().to_string())
    }

    /// Single feature methods needed by the evaluation methods and sweep,
    /// in [`Method::ALL`] order.
    pub fn feature_methods(&self) -> Vec<Method> {
        let sweep = self.eval.sweep.iter().map(|s| s.method);
        let wanted: HashSet<Method> = self.methods.iter().copied().chain(sweep).flat_map(EvalMethod::inputs).collect();
        Method::ALL.into_iter().filter(|m| wanted.contains(m)).collect()
    }
}

/// Stage seed derived from the global seed and a label.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{global}:{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
