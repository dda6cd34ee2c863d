//! End-to-end driver: simulate, pretrain, extract, train, evaluate, report.
//!
//! Every stage reads its inputs from and writes its outputs to one output
//! directory. Every JSON output carries the manifest hash of the run config;
//! feature caches carry it in their sidecar and edge files in a comment.
//!
//! ```text
//! <out>/datasets/<name>/{expression.csv, edges.tsv, meta.json, planted.json}
//! <out>/model/{checkpoint.json, loss_trace.json}
//! <out>/pairs/<name>.json
//! <cache>/<name>/<method>.csv (+ .meta.json)     cache = $UGRN_CACHE_DIR or <out>/features
//! <out>/warnings/extract.json
//! <out>/translators/<name>/<method>.json
//! <out>/reports/{report.json, report.txt}
//! ```

mod artifact;
mod config;
mod sweep;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use artifact::{read_json, write_json, Loaded};
pub use config::{
    derive_seed, Backend, DatasetSpec, EvalSection, FeatureSection, ModelSection, RunConfig, SweepSection, SynthParams,
};

use crate::data::io::{load_edges, load_expression, load_meta, save_edges, save_expression, DatasetMeta};
use crate::data::{
    all_pairs, generate_synthetic, sample_pairs, select_hvg, synth, DatasetTags, EdgeSet, ExpressionMatrix,
    PairSampleSet, SynthConfig, SyntheticDataset,
};
use crate::eval::{run_protocol_with, EvalDataset, EvalMethod, EvalReport};
use crate::features::{
    load_feature_table, save_feature_table, CacheMeta, FeatureExtractor, FeatureRow, FeatureTable, Method, Panel,
    CACHE_FORMAT_VERSION,
};
use crate::model::{fit_linear_backend_with, pretrain_masked, ExpressionModel, GeneVocabulary, Model, ModelCheckpoint};
use crate::parallel;
use crate::translator::{self, TranslatorModel};
use crate::warning::{Warning, WarningKind};
use crate::{Error, Result};

/// Overrides the feature cache directory.
pub const CACHE_DIR_ENV: &str = "UGRN_CACHE_DIR";

#[derive(Serialize, Deserialize)]
struct LossTrace {
    loss: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WarningLog {
    warnings: Vec<Warning>,
}

/// A dataset as the later stages see it.
struct Dataset {
    tags: DatasetTags,
    expression: ExpressionMatrix,
    edges: EdgeSet,
    expression_hash: String,
    warnings: Vec<Warning>,
}

impl Dataset {
    fn name(&self) -> String {
        self.tags.name()
    }
}

/// The frozen backend with what feature caches key on.
struct LoadedModel {
    model: Model,
    content_hash: String,
    manifest_hash: String,
}

impl LoadedModel {
    fn supports(&self, method: Method) -> bool {
        match method {
            Method::OriginAttn => matches!(self.model, Model::Transformer(_)),
            Method::Emb => self.model.gene_embeddings().is_ok(),
            _ => true,
        }
    }

    fn model_dim(&self) -> usize {
        self.model.gene_embeddings().map_or(0, |t| t.shape()[1])
    }
}

pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    cache_dir: PathBuf,
    manifest: String,
    /// Let evaluate read artifacts stamped by a different manifest.
    pub allow_mixed_manifest: bool,
    /// Let extract overwrite stale feature caches.
    pub refresh: bool,
}

impl Pipeline {
    /// Validates `config`; outputs go under `out`. The cache directory is
    /// taken from `$UGRN_CACHE_DIR` when set.
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let out = out.into();
        let cache_dir = match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => out.join("features"),
        };
        let manifest = config.manifest_hash();
        Ok(Self { config, out, cache_dir, manifest, allow_mixed_manifest: false, refresh: false })
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = dir.into();
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn manifest_hash(&self) -> &str {
        &self.manifest
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label)
    }

    fn dataset_dir(&self, name: &str) -> PathBuf {
        self.out.join("datasets").join(name)
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.out.join("model").join("checkpoint.json")
    }

    fn pairs_path(&self, name: &str) -> PathBuf {
        self.out.join("pairs").join(format!("{name}.json"))
    }

    fn cache_path(&self, name: &str, method: Method) -> PathBuf {
        self.cache_dir.join(name).join(format!("{method}.csv"))
    }

    fn translator_rel(name: &str, method: Method) -> PathBuf {
        Path::new("translators").join(name).join(format!("{method}.json"))
    }

    fn extract_warnings_path(&self) -> PathBuf {
        self.out.join("warnings").join("extract.json")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out.join("reports").join("report.json")
    }

    /// Runs every stage in order.
    pub fn run(&self) -> Result<EvalReport> {
        self.simulate()?;
        self.pretrain()?;
        self.extract()?;
        self.train()?;
        self.evaluate()
    }

    /// Writes every synthetic, variant and species dataset.
    pub fn simulate(&self) -> Result<()> {
        let mut built: Vec<Option<SyntheticDataset>> = Vec::with_capacity(self.config.datasets.len());
        for (n, spec) in self.config.datasets.iter().enumerate() {
            let Some(tags) = self.config.static_tags(n) else {
                built.push(None);
                continue;
            };
            let name = tags.name();
            let find = |of: &str| -> &SyntheticDataset {
                let k =
                    (0..n).find(|&k| self.config.static_tags(k).is_some_and(|t| t.name() == of)).expect("validated");
                built[k].as_ref().expect("validated")
            };
            let dataset = match spec {
                DatasetSpec::Synthetic { synth, .. } => generate_synthetic(&SynthConfig {
                    n_genes: synth.n_genes,
                    n_tfs: synth.n_tfs,
                    density: synth.density,
                    weight_scale: synth.weight_scale,
                    noise_sigma: synth.noise_sigma,
                    n_cells: synth.n_cells,
                    seed: self.seed(&format!("simulate:{name}")),
                    tf_log_mean: synth.tf_log_mean,
                    tf_log_sd: synth.tf_log_sd,
                    symbol_prefix: synth.symbol_prefix.clone(),
                    tags: tags.clone(),
                })?,
                DatasetSpec::Variant { of, keep, .. } => {
                    let base = find(of);
                    SyntheticDataset {
                        expression: base.expression.clone().with_tags(tags.clone()),
                        edges: synth::network_variant(&base.edges, *keep, self.seed(&format!("variant:{name}"))),
                        planted: base.planted.clone(),
                    }
                }
                DatasetSpec::Species { of, prefix, .. } => {
                    let from = match self
                        .config
                        .datasets
                        .iter()
                        .enumerate()
                        .find(|(k, _)| self.config.static_tags(*k).is_some_and(|t| t.name() == *of))
                    {
                        Some((_, DatasetSpec::Synthetic { synth, .. })) => synth.symbol_prefix.clone(),
                        _ => unreachable!("validated"),
                    };
                    synth::rename_species(find(of), &from, prefix, tags.clone())?
                }
                DatasetSpec::Files { .. } => unreachable!("files datasets have no static tags"),
            };
            self.write_dataset(&name, &dataset)?;
            log::info!("simulated {name}: {} cells, {} edges", dataset.expression.n_cells(), dataset.edges.len());
            built.push(Some(dataset));
        }
        Ok(())
    }

    fn write_dataset(&self, name: &str, d: &SyntheticDataset) -> Result<()> {
        let dir = self.dataset_dir(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_expression(&d.expression, &dir.join("expression.csv"))?;
        let edges = dir.join("edges.tsv");
        save_edges(&d.edges, &edges)?;
        let body = fs::read_to_string(&edges).map_err(|e| Error::io(&edges, e))?;
        fs::write(&edges, format!("# manifest {}\n{body}", self.manifest)).map_err(|e| Error::io(&edges, e))?;
        let tags = d.expression.tags();
        let meta = DatasetMeta {
            source: tags.source.clone(),
            species: tags.species.clone(),
            network: tags.network.clone(),
            tfs: d.edges.tfs().to_vec(),
        };
        write_json(&dir.join("meta.json"), &self.manifest, &meta)?;
        write_json(&dir.join("planted.json"), &self.manifest, &d.planted)?;
        Ok(())
    }

    fn load_datasets(&self) -> Result<Vec<Dataset>> {
        let mut out: Vec<Dataset> = Vec::with_capacity(self.config.datasets.len());
        for (n, spec) in self.config.datasets.iter().enumerate() {
            let (meta, expression_path, edges_path, hvg) = match spec {
                DatasetSpec::Files { expression, edges, meta, hvg } => (
                    load_meta(&self.config.resolve(meta))?,
                    self.config.resolve(expression),
                    self.config.resolve(edges),
                    *hvg,
                ),
                _ => {
                    let name = self.config.static_tags(n).expect("non-file dataset").name();
                    let dir = self.dataset_dir(&name);
                    let meta: DatasetMeta =
                        read_json(&dir.join("meta.json")).map_err(|e| missing_stage(e, "simulate"))?.body;
                    (meta, dir.join("expression.csv"), dir.join("edges.tsv"), None)
                }
            };
            let tags = meta.tags();
            let mut expression = load_expression(&expression_path, tags.clone())?;
            if let Some(k) = hvg {
                expression = select_hvg(&expression, k, &meta.tfs)?;
            }
            let loaded = load_edges(&edges_path, Some(expression.symbols()), Some(&meta.tfs))?;
            let warnings = loaded
                .warnings
                .into_iter()
                .map(|w| Warning::new(w.kind, format!("{}: {}", tags.name(), w.detail)))
                .collect();
            let dataset = Dataset {
                expression_hash: expression_hash(&expression),
                tags,
                expression,
                edges: loaded.edges,
                warnings,
            };
            if out.iter().any(|d| d.name() == dataset.name()) {
                return Err(Error::Config(format!("dataset name {} is used twice", dataset.name())));
            }
            out.push(dataset);
        }
        Ok(out)
    }

    /// Union of every dataset's genes, in dataset then column order.
    fn vocabulary(datasets: &[Dataset]) -> Result<GeneVocabulary> {
        let mut seen = HashSet::new();
        let symbols =
            datasets.iter().flat_map(|d| d.expression.symbols()).filter(|s| seen.insert(s.as_str())).cloned().collect();
        GeneVocabulary::new(symbols)
    }

    /// Fits the configured backend on every distinct expression matrix.
    pub fn pretrain(&self) -> Result<Vec<f64>> {
        let datasets = self.load_datasets()?;
        let vocabulary = Self::vocabulary(&datasets)?;
        let mut seen = HashSet::new();
        let distinct: Vec<&ExpressionMatrix> =
            datasets.iter().filter(|d| seen.insert(d.expression_hash.clone())).map(|d| &d.expression).collect();
        let (model, loss) = match self.config.model.backend {
            Backend::Transformer => {
                let mut config = self.config.model.transformer.clone();
                config.seed = self.seed("pretrain");
                let report = pretrain_masked(&config, vocabulary, &distinct)?;
                (Model::Transformer(report.model), report.loss_trace)
            }
            Backend::Linear => {
                let union = ExpressionMatrix::stack_union(&distinct, DatasetTags::new("union", "mixed", "none"))?;
                let fit = fit_linear_backend_with(&union, self.config.model.ridge, self.config.execution)?;
                (Model::Linear(fit), Vec::new())
            }
        };
        write_json(&self.checkpoint_path(), &self.manifest, &ModelCheckpoint::new(model))?;
        write_json(&self.out.join("model").join("loss_trace.json"), &self.manifest, &LossTrace { loss: loss.clone() })?;
        log::info!("pretrained {} backend ({} steps)", self.config.model.backend.name(), loss.len());
        Ok(loss)
    }

    fn load_model(&self, datasets: &[Dataset]) -> Result<LoadedModel> {
        let path = self.checkpoint_path();
        let loaded: Loaded<ModelCheckpoint> = read_json(&path).map_err(|e| missing_stage(e, "pretrain"))?;
        let vocabulary = Self::vocabulary(datasets)?;
        let model = loaded.body.into_model(&path, Some(&vocabulary))?;
        Ok(LoadedModel { model, content_hash: loaded.content_hash, manifest_hash: loaded.manifest_hash })
    }

    fn expected_meta(&self, model: &LoadedModel, panel: &Panel, dataset: &Dataset, method: Method) -> CacheMeta {
        let grid = self.config.features.grid.clone();
        CacheMeta {
            format_version: CACHE_FORMAT_VERSION,
            method,
            dims: 2 * grid.direction_len(method, model.model_dim()),
            grid,
            aggregation: self.config.features.aggregation,
            panel_hash: panel.hash(model.model.vocabulary()),
            model_hash: model.content_hash.clone(),
            expression_hash: method.needs_expression().then(|| dataset.expression_hash.clone()),
            manifest_hash: Some(self.manifest.clone()),
        }
    }

    fn unavailable(&self, model: &LoadedModel, method: Method) -> Warning {
        Warning::new(
            WarningKind::UnavailableMethod,
            format!("{method} is not supported by the {} backend; skipped", model.model.backend_name()),
        )
    }

    /// Samples each dataset's labelled pairs and caches their features for
    /// every method the run needs. A cache computed from different inputs is
    /// an error unless `refresh` is set.
    pub fn extract(&self) -> Result<Vec<Warning>> {
        let datasets = self.load_datasets()?;
        let model = self.load_model(&datasets)?;
        let vocab = model.model.vocabulary();
        let mut warnings = Vec::new();
        let methods = self.config.feature_methods();
        for m in methods.iter().filter(|m| !model.supports(**m)) {
            warnings.push(self.unavailable(&model, *m));
        }
        for d in &datasets {
            let name = d.name();
            let panel_genes = d.expression.symbols();
            let mut pairs = if self.config.eval.all_pairs {
                all_pairs(&d.edges, panel_genes)
            } else {
                sample_pairs(&d.edges, panel_genes, self.config.ratio, self.seed(&format!("pairs:{name}")))?
            };
            let (panel, skipped) = Panel::from_expression(vocab, &d.expression);
            warnings.extend(skipped);
            for p in pairs.pairs.iter().filter(|p| vocab.id(&p.source).is_none() || vocab.id(&p.target).is_none()) {
                warnings.push(Warning::new(
                    WarningKind::SkippedGene,
                    format!("{name}: pair ({}, {}) skipped: gene not in the model vocabulary", p.source, p.target),
                ));
            }
            pairs.pairs.retain(|p| vocab.id(&p.source).is_some() && vocab.id(&p.target).is_some());
            let queries: Vec<(String, String)> =
                pairs.pairs.iter().map(|p| (p.source.clone(), p.target.clone())).collect();
            let extractor = FeatureExtractor::new(&model.model, self.config.features.grid.clone(), panel.clone())?
                .with_expression(&d.expression, self.config.features.aggregation);
            for &method in methods.iter().filter(|m| model.supports(**m)) {
                let path = self.cache_path(&name, method);
                let expected = self.expected_meta(&model, &panel, d, method);
                if path.is_file() && !self.refresh {
                    let mut table = load_feature_table(&path)?;
                    table.meta.check_matches(&expected, &path)?;
                    if !same_pairs(&table, &queries) {
                        return Err(Error::Incompatible(format!(
                            "{}: stale feature cache (pair list differs); rerun with --refresh",
                            path.display()
                        )));
                    }
                    if table.meta.manifest_hash.as_deref() != Some(self.manifest.as_str()) {
                        table.meta.manifest_hash = Some(self.manifest.clone());
                        save_feature_table(&path, &table)?;
                    }
                    log::info!("{name}/{method}: reusing {} cached rows", table.rows.len());
                    continue;
                }
                let extraction = extractor.extract_batch(method, &queries, self.config.execution)?;
                let rows = extraction
                    .features
                    .into_iter()
                    .map(|f| FeatureRow {
                        source: vocab.symbol(f.source).to_string(),
                        target: vocab.symbol(f.target).to_string(),
                        vector: f.vector,
                    })
                    .collect::<Vec<_>>();
                log::info!("{name}/{method}: extracted {} rows", rows.len());
                save_feature_table(&path, &FeatureTable { meta: expected, rows })?;
            }
            write_json(&self.pairs_path(&name), &self.manifest, &pairs)?;
        }
        warnings.sort();
        warnings.dedup();
        write_json(&self.extract_warnings_path(), &self.manifest, &WarningLog { warnings: warnings.clone() })?;
        Ok(warnings)
    }

    /// Pairs and cached features of every dataset, checked against the
    /// current model and grid. Also returns the `(path, manifest)` stamps.
    fn load_eval_datasets(
        &self,
        datasets: &[Dataset],
        model: &LoadedModel,
    ) -> Result<(Vec<EvalDataset>, Vec<(PathBuf, String)>)> {
        let vocab = model.model.vocabulary();
        let mut stamps = Vec::new();
        let mut out = Vec::with_capacity(datasets.len());
        for d in datasets {
            let name = d.name();
            let path = self.pairs_path(&name);
            let pairs: Loaded<PairSampleSet> = read_json(&path).map_err(|e| missing_stage(e, "extract"))?;
            stamps.push((path, pairs.manifest_hash));
            let queries: Vec<(String, String)> =
                pairs.body.pairs.iter().map(|p| (p.source.clone(), p.target.clone())).collect();
            let (panel, _) = Panel::from_expression(vocab, &d.expression);
            let mut features = BTreeMap::new();
            for method in self.config.feature_methods().into_iter().filter(|m| model.supports(*m)) {
                let path = self.cache_path(&name, method);
                let table = load_feature_table(&path).map_err(|e| missing_stage(e, "extract"))?;
                table.meta.check_matches(&self.expected_meta(model, &panel, d, method), &path)?;
                if !same_pairs(&table, &queries) {
                    return Err(Error::Incompatible(format!(
                        "{}: feature rows do not match {}",
                        path.display(),
                        self.pairs_path(&name).display()
                    )));
                }
                stamps.push((path, table.meta.manifest_hash.clone().unwrap_or_default()));
                features.insert(method, table.rows.into_iter().map(|r| r.vector).collect());
            }
            out.push(EvalDataset { tags: d.tags.clone(), pairs: pairs.body, features });
        }
        Ok((out, stamps))
    }

    fn training_names(&self, datasets: &[EvalDataset]) -> Vec<String> {
        let allowed = &self.config.eval.protocol.train;
        datasets.iter().map(EvalDataset::name).filter(|n| allowed.as_ref().is_none_or(|l| l.contains(n))).collect()
    }

    /// Evaluation methods whose inputs the backend supports.
    fn available_methods(&self, model: &LoadedModel) -> Vec<EvalMethod> {
        self.config.methods.iter().copied().filter(|m| m.inputs().iter().all(|i| model.supports(*i))).collect()
    }

    /// Trains one translator per training dataset and non-zero-shot method.
    pub fn train(&self) -> Result<()> {
        let datasets = self.load_datasets()?;
        let model = self.load_model(&datasets)?;
        let (eval_sets, _) = self.load_eval_datasets(&datasets, &model)?;
        let mut methods: Vec<Method> = self
            .available_methods(&model)
            .into_iter()
            .flat_map(EvalMethod::inputs)
            .filter(|m| !m.is_zero_shot())
            .collect();
        methods.sort();
        methods.dedup();
        let names = self.training_names(&eval_sets);
        let jobs: Vec<(&EvalDataset, Method)> = eval_sets
            .iter()
            .filter(|d| names.contains(&d.name()))
            .flat_map(|d| methods.iter().map(move |&m| (d, m)))
            .collect();
        let trained = parallel::map(self.config.execution, &jobs, |(d, m)| -> Result<TranslatorModel> {
            let mut config = self.config.translator.clone();
            config.seed = self.seed(&format!("translator:{}:{m}", d.name()));
            Ok(translator::train(&config, *m, &d.examples(*m)?)?.model)
        });
        for ((d, m), model) in jobs.iter().zip(trained) {
            let path = self.out.join(Self::translator_rel(&d.name(), *m));
            write_json(&path, &self.manifest, &model?)?;
            log::info!("trained {} translator on {}", m, d.name());
        }
        Ok(())
    }

    fn load_translator(&self, name: &str, method: Method) -> Result<Loaded<TranslatorModel>> {
        let rel = Self::translator_rel(name, method);
        let loaded: Loaded<TranslatorModel> = read_json(&self.out.join(&rel)).map_err(|e| match e {
            // Relative path keeps reports independent of the output location.
            Error::Io { source, .. } => Error::Io { path: rel.clone(), source },
            other => other,
        })?;
        loaded.body.check_format(&rel)?;
        Ok(loaded)
    }

    /// Stamps differing from this run's manifest: an error, or warnings
    /// when mixing is allowed.
    fn check_stamps(&self, stamps: &[(PathBuf, String)]) -> Result<Vec<Warning>> {
        let mixed: Vec<String> = stamps
            .iter()
            .filter(|(_, h)| *h != self.manifest)
            .map(|(p, h)| {
                let rel = p.strip_prefix(&self.out).unwrap_or(p);
                format!("{} was written under manifest {h}", rel.display())
            })
            .collect();
        if mixed.is_empty() {
            return Ok(Vec::new());
        }
        if !self.allow_mixed_manifest {
            let more = if mixed.len() > 3 { format!(" and {} more", mixed.len() - 3) } else { String::new() };
            return Err(Error::Incompatible(format!(
                "inputs come from another manifest ({}{more}); rerun the earlier stages or pass --allow-mixed-manifest",
                mixed[..mixed.len().min(3)].join("; ")
            )));
        }
        Ok(mixed.into_iter().map(|m| Warning::new(WarningKind::MixedManifest, m)).collect())
    }

    /// Runs the protocol (and the sweep, when configured) on the cached
    /// features and stored translators, and writes the report.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let datasets = self.load_datasets()?;
        let model = self.load_model(&datasets)?;
        let (eval_sets, mut stamps) = self.load_eval_datasets(&datasets, &model)?;
        stamps.push((self.checkpoint_path(), model.manifest_hash.clone()));
        for (n, spec) in self.config.datasets.iter().enumerate() {
            if !matches!(spec, DatasetSpec::Files { .. }) {
                let path = self.dataset_dir(&datasets[n].name()).join("meta.json");
                stamps.push((path.clone(), read_json::<DatasetMeta>(&path)?.manifest_hash));
            }
        }
        let methods = self.available_methods(&model);
        let names = self.training_names(&eval_sets);
        let mut trained: Vec<Method> = methods.iter().flat_map(|m| m.inputs()).filter(|m| !m.is_zero_shot()).collect();
        trained.sort();
        trained.dedup();
        for name in &names {
            for &m in &trained {
                if let Ok(t) = self.load_translator(name, m) {
                    stamps.push((self.out.join(Self::translator_rel(name, m)), t.manifest_hash));
                }
            }
        }
        let mut warnings = self.check_stamps(&stamps)?;
        warnings.extend(datasets.iter().flat_map(|d| d.warnings.iter().cloned()));
        let extract_log = self.extract_warnings_path();
        if extract_log.is_file() {
            warnings.extend(read_json::<WarningLog>(&extract_log)?.body.warnings);
        }
        for m in self.config.methods.iter().filter(|m| !methods.contains(m)) {
            warnings.push(Warning::new(
                WarningKind::UnavailableMethod,
                format!("{m} is not supported by the {} backend; skipped", model.model.backend_name()),
            ));
        }

        let source =
            |d: &EvalDataset, m: Method| -> Result<TranslatorModel> { Ok(self.load_translator(&d.name(), m)?.body) };
        let protocol =
            run_protocol_with(&self.config.eval.protocol, &methods, &eval_sets, &source, self.config.execution)?;
        let sweep = match &self.config.eval.sweep {
            Some(s) => {
                if !s.method.inputs().iter().all(|m| model.supports(*m)) {
                    return Err(Error::Unsupported {
                        capability: "the sweep method",
                        backend: model.model.backend_name(),
                    });
                }
                let d = datasets
                    .iter()
                    .find(|d| d.name() == s.dataset)
                    .ok_or_else(|| Error::Config(format!("sweep dataset {} is not configured", s.dataset)))?;
                sweep::run(self, s, d, &model.model)?
            }
            None => Vec::new(),
        };
        warnings.sort();
        warnings.dedup();
        let report = EvalReport {
            manifest_hash: self.manifest.clone(),
            config: self.config.to_value(),
            protocol,
            sweep,
            warnings,
        };
        report.validate()?;
        self.write_report(&report)?;
        Ok(report)
    }

    fn write_report(&self, report: &EvalReport) -> Result<()> {
        let path = self.report_path();
        artifact::write_text(&path, &report.to_json())?;
        artifact::write_text(&path.with_extension("txt"), &report.to_table())
    }

    /// Re-reads and validates the stored report and re-renders its table.
    pub fn report(&self) -> Result<EvalReport> {
        let path = self.report_path();
        let text = fs::read_to_string(&path).map_err(|e| missing_stage(Error::io(&path, e), "evaluate"))?;
        let report = EvalReport::from_json(&text)?;
        report.validate()?;
        if report.manifest_hash != self.manifest && !self.allow_mixed_manifest {
            return Err(Error::Incompatible(format!(
                "{} was written under manifest {}; pass --allow-mixed-manifest to render it anyway",
                path.display(),
                report.manifest_hash
            )));
        }
        artifact::write_text(&path.with_extension("txt"), &report.to_table())?;
        Ok(report)
    }
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Transformer => "transformer",
            Backend::Linear => "linear",
        }
    }
}

fn same_pairs(table: &FeatureTable, queries: &[(String, String)]) -> bool {
    table.rows.len() == queries.len()
        && table.rows.iter().zip(queries).all(|(r, (s, t))| r.source == *s && r.target == *t)
}

/// Points a missing-file error at the stage that produces the file.
fn missing_stage(e: Error, stage: &str) -> Error {
    match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            Error::Config(format!("{} is missing; run the `{stage}` stage first", path.display()))
        }
        other => other,
    }
}

/// Content hash of a matrix: symbols and the bit patterns of its values.
fn expression_hash(m: &ExpressionMatrix) -> String {
    let mut h = Sha256::new();
    for s in m.symbols() {
        h.update(s.as_bytes());
        h.update(b"\n");
    }
    h.update(m.n_cells().to_le_bytes());
    for v in m.values() {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}
