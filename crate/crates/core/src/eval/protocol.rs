use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{auprc, auroc};
use crate::data::{DatasetTags, PairSampleSet, SampledPair};
use crate::features::Method;
use crate::parallel::{self, Execution};
use crate::translator::{self, LabeledPair, TranslatorConfig, TranslatorModel};
use crate::{Error, Result};

/// What gets evaluated: one probe, or the VVP + GDT logit ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvalMethod {
    Single(Method),
    Ensemble,
}

impl EvalMethod {
    pub fn name(self) -> &'static str {
        match self {
            EvalMethod::Single(m) => m.name(),
            EvalMethod::Ensemble => "ens",
        }
    }

    /// Feature methods this evaluation reads.
    pub fn inputs(self) -> Vec<Method> {
        match self {
            EvalMethod::Single(m) => vec![m],
            EvalMethod::Ensemble => vec![Method::Vvp, Method::Gdt],
        }
    }
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ens" {
            return Ok(EvalMethod::Ensemble);
        }
        s.parse().map(EvalMethod::Single)
    }
}

impl Serialize for EvalMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EvalMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One dataset's labelled pairs with their features, per method, aligned
/// with `pairs`.
#[derive(Debug, Clone)]
pub struct EvalDataset {
    pub tags: DatasetTags,
    pub pairs: PairSampleSet,
    pub features: BTreeMap<Method, Vec<Vec<f64>>>,
}

impl EvalDataset {
    pub fn name(&self) -> String {
        self.tags.name()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.labels()
    }

    pub fn rows(&self, method: Method) -> Result<&[Vec<f64>]> {
        let rows = self
            .features
            .get(&method)
            .ok_or_else(|| Error::Config(format!("dataset {} has no {method} features", self.name())))?;
        if rows.len() != self.pairs.pairs.len() {
            return Err(Error::DimMismatch { expected: self.pairs.pairs.len(), got: rows.len() });
        }
        Ok(rows)
    }

    pub fn examples(&self, method: Method) -> Result<Vec<LabeledPair>> {
        let rows = self.rows(method)?;
        Ok(self
            .pairs
            .pairs
            .iter()
            .zip(rows)
            .map(|(p, f)| LabeledPair {
                source: p.source.clone(),
                target: p.target.clone(),
                label: p.label,
                feature: f.clone(),
            })
            .collect())
    }
}

/// Tag compared between training and test datasets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKey {
    /// Plain leave-one-dataset-out.
    #[default]
    Source,
    /// Cross-species: test only on other species.
    Species,
    /// Cross-network: test only on other network names.
    Network,
}

impl GroupKey {
    fn of(self, tags: &DatasetTags) -> &str {
        match self {
            GroupKey::Source => &tags.source,
            GroupKey::Species => &tags.species,
            GroupKey::Network => &tags.network,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolSpec {
    pub group_by: GroupKey,
    /// Dataset names allowed as training sources; all when absent.
    pub train: Option<Vec<String>>,
    /// Dataset names allowed as test sets; all when absent.
    pub test: Option<Vec<String>>,
}

impl ProtocolSpec {
    fn allowed(list: &Option<Vec<String>>, name: &str) -> bool {
        list.as_ref().is_none_or(|l| l.iter().any(|n| n == name))
    }

    /// Test datasets for training dataset `k`. A dataset sharing the training
    /// source-name is never a test set, whatever the grouping key.
    pub fn test_sets(&self, datasets: &[EvalDataset], k: usize) -> Vec<usize> {
        let train = &datasets[k].tags;
        (0..datasets.len())
            .filter(|&t| {
                let tags = &datasets[t].tags;
                t != k
                    && tags.source != train.source
                    && self.group_by.of(tags) != self.group_by.of(train)
                    && Self::allowed(&self.test, &tags.name())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub train: String,
    pub test: String,
    pub train_source: String,
    pub test_source: String,
    pub method: EvalMethod,
    pub auprc: f64,
    pub auroc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Mean over the rows sharing `train` and `method`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub train: String,
    pub method: EvalMethod,
    pub auprc: f64,
    pub auroc: f64,
    pub tests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub train: String,
    pub method: EvalMethod,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub rows: Vec<EvalRow>,
    pub averages: Vec<AverageRow>,
    /// Per-method mean over every row.
    pub method_averages: Vec<AverageRow>,
    pub errors: Vec<CellError>,
}

fn label_rows(pairs: &[SampledPair]) -> (usize, usize) {
    let pos = pairs.iter().filter(|p| p.label).count();
    (pos, pairs.len() - pos)
}

/// Supplies the translator for `(training dataset, feature method)`.
pub type TranslatorSource<'a> = dyn Fn(&EvalDataset, Method) -> Result<TranslatorModel> + Sync + 'a;

/// Scores of `method` on each test dataset after training on `train`.
fn run_cell(
    method: EvalMethod,
    train: &EvalDataset,
    tests: &[&EvalDataset],
    translators: &TranslatorSource<'_>,
) -> Result<Vec<Vec<f64>>> {
    let fetch = |m: Method| -> Result<TranslatorModel> {
        let model = translators(train, m)?;
        let dims = train.rows(m)?.first().map_or(model.input_dims, Vec::len);
        model.check_input(m, dims)?;
        Ok(model)
    };
    let logits = |model: &TranslatorModel, t: &EvalDataset, m: Method| -> Result<Vec<f64>> {
        model.logits(t.rows(m)?, Execution::Serial)
    };
    match method {
        EvalMethod::Single(m) if m.is_zero_shot() => {
            tests.iter().map(|t| Ok(t.rows(m)?.iter().map(|f| f[0]).collect())).collect()
        }
        EvalMethod::Single(m) => {
            let model = fetch(m)?;
            tests.iter().map(|t| Ok(logits(&model, t, m)?.into_iter().map(translator::sigmoid).collect())).collect()
        }
        EvalMethod::Ensemble => {
            let vvp = fetch(Method::Vvp)?;
            let gdt = fetch(Method::Gdt)?;
            tests
                .iter()
                .map(|t| translator::ensemble(&logits(&vvp, t, Method::Vvp)?, &logits(&gdt, t, Method::Gdt)?))
                .collect()
        }
    }
}

/// Leave-one-dataset-out evaluation: each allowed training dataset trains a
/// translator per method, which is scored on every dataset the spec admits.
/// Cells run in parallel; a failing cell is recorded, not fatal.
pub fn run_protocol(
    spec: &ProtocolSpec,
    methods: &[EvalMethod],
    datasets: &[EvalDataset],
    config: &TranslatorConfig,
    exec: Execution,
) -> Result<ProtocolResult> {
    let train = |d: &EvalDataset, m: Method| Ok(translator::train(config, m, &d.examples(m)?)?.model);
    run_protocol_with(spec, methods, datasets, &train, exec)
}

/// [`run_protocol`] with translators supplied by the caller, e.g. loaded
/// from checkpoints.
pub fn run_protocol_with(
    spec: &ProtocolSpec,
    methods: &[EvalMethod],
    datasets: &[EvalDataset],
    translators: &TranslatorSource<'_>,
    exec: Execution,
) -> Result<ProtocolResult> {
    if datasets.len() < 2 {
        return Err(Error::Config(format!("protocol needs at least 2 datasets, got {}", datasets.len())));
    }
    if let (Some(tr), Some(te)) = (&spec.train, &spec.test) {
        if let Some(both) = tr.iter().find(|n| te.contains(n)) {
            return Err(Error::Config(format!("dataset {both} is both a training and a test set")));
        }
    }
    let trains: Vec<usize> =
        (0..datasets.len()).filter(|&k| ProtocolSpec::allowed(&spec.train, &datasets[k].name())).collect();
    if trains.is_empty() {
        return Err(Error::Config("no training dataset selected".into()));
    }
    let mut plan = Vec::new();
    for &k in &trains {
        let tests = spec.test_sets(datasets, k);
        if tests.is_empty() {
            return Err(Error::Config(format!(
                "training on {} leaves no test dataset after exclusions",
                datasets[k].name()
            )));
        }
        for &m in methods {
            plan.push((k, m, tests.clone()));
        }
    }

    let outcomes = parallel::map(exec, &plan, |(k, m, tests)| {
        let test_refs: Vec<&EvalDataset> = tests.iter().map(|&t| &datasets[t]).collect();
        run_cell(*m, &datasets[*k], &test_refs, translators).and_then(|scores| {
            test_refs
                .iter()
                .zip(scores)
                .map(|(t, s)| {
                    let labels = t.labels();
                    let (positives, negatives) = label_rows(&t.pairs.pairs);
                    Ok(EvalRow {
                        train: datasets[*k].name(),
                        test: t.name(),
                        train_source: datasets[*k].tags.source.clone(),
                        test_source: t.tags.source.clone(),
                        method: *m,
                        auprc: auprc(&s, &labels)?,
                        auroc: auroc(&s, &labels)?,
                        positives,
                        negatives,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
    });

    let mut result = ProtocolResult::default();
    for ((k, m, _), outcome) in plan.iter().zip(outcomes) {
        match outcome {
            Ok(rows) => {
                result.averages.push(average(datasets[*k].name(), *m, &rows));
                result.rows.extend(rows);
            }
            Err(e) => result.errors.push(CellError { train: datasets[*k].name(), method: *m, message: e.to_string() }),
        }
    }
    for &m in methods {
        let rows: Vec<EvalRow> = result.rows.iter().filter(|r| r.method == m).cloned().collect();
        if !rows.is_empty() {
            result.method_averages.push(average("all".into(), m, &rows));
        }
    }
    Ok(result)
}

fn average(train: String, method: EvalMethod, rows: &[EvalRow]) -> AverageRow {
    let n = rows.len() as f64;
    AverageRow {
        train,
        method,
        auprc: rows.iter().map(|r| r.auprc).sum::<f64>() / n,
        auroc: rows.iter().map(|r| r.auroc).sum::<f64>() / n,
        tests: rows.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: EvalMethod,
    pub ratio: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Re-samples the labelled set at each N/P ratio with `sample(ratio)` and
/// scores it with `score`.
pub fn imbalance_sweep<S, F>(method: EvalMethod, ratios: &[f64], mut sample: S, mut score: F) -> Result<Vec<SweepRow>>
where
    S: FnMut(f64) -> Result<PairSampleSet>,
    F: FnMut(&PairSampleSet) -> Result<Vec<f64>>,
{
    ratios
        .iter()
        .map(|&ratio| {
            let set = sample(ratio)?;
            let scores = score(&set)?;
            let labels = set.labels();
            Ok(SweepRow {
                method,
                ratio,
                auroc: auroc(&scores, &labels)?,
                auprc: auprc(&scores, &labels)?,
                positives: set.positives(),
                negatives: set.negatives(),
            })
        })
        .collect()
}

/// Ratios of the class-imbalance sweep.
pub const SWEEP_RATIOS: [f64; 5] = [1.0, 2.0, 3.0, 5.0, 10.0];
