use std::collections::{BTreeMap, HashMap};

use super::{Dataset, Pipeline, SweepSection};
use crate::data::{negative_candidates, sample_pairs_capped, split_sources, EdgeSet, PairSampleSet};
use crate::eval::{imbalance_sweep, EvalMethod, SweepRow};
use crate::features::{FeatureExtractor, Method, Panel};
use crate::model::{ExpressionModel, Model};
use crate::translator::{self, LabeledPair, TranslatorModel};
use crate::{Error, Result};

/// Largest positive count for which every ratio up to `max_ratio` has
/// enough negative candidates.
fn positive_cap(edges: &EdgeSet, panel: &[String], max_ratio: f64) -> Result<usize> {
    let positives = edges.restrict_panel(panel).len();
    let candidates = negative_candidates(edges, panel).len();
    let cap = positives.min((candidates as f64 / max_ratio).floor() as usize);
    if cap == 0 {
        return Err(Error::Data(format!(
            "N/P ratio {max_ratio} leaves no room for positives ({candidates} negative candidates)"
        )));
    }
    Ok(cap)
}

struct FeatureMemo<'a> {
    extractor: FeatureExtractor<'a, Model>,
    rows: HashMap<(Method, String, String), Vec<f64>>,
    exec: crate::parallel::Execution,
}

impl FeatureMemo<'_> {
    fn rows(&mut self, method: Method, set: &PairSampleSet) -> Result<Vec<Vec<f64>>> {
        let missing: Vec<(String, String)> = set
            .pairs
            .iter()
            .filter(|p| !self.rows.contains_key(&(method, p.source.clone(), p.target.clone())))
            .map(|p| (p.source.clone(), p.target.clone()))
            .collect();
        if !missing.is_empty() {
            let extraction = self.extractor.extract_batch(method, &missing, self.exec)?;
            if extraction.features.len() != missing.len() {
                return Err(Error::Data("sweep pairs name genes outside the model vocabulary".into()));
            }
            for ((s, t), f) in missing.into_iter().zip(extraction.features) {
                self.rows.insert((method, s, t), f.vector);
            }
        }
        Ok(set.pairs.iter().map(|p| self.rows[&(method, p.source.clone(), p.target.clone())].clone()).collect())
    }

    fn examples(&mut self, method: Method, set: &PairSampleSet) -> Result<Vec<LabeledPair>> {
        let rows = self.rows(method, set)?;
        Ok(set
            .pairs
            .iter()
            .zip(rows)
            .map(|(p, feature)| LabeledPair {
                source: p.source.clone(),
                target: p.target.clone(),
                label: p.label,
                feature,
            })
            .collect())
    }
}

/// Held-out-TF sweep over the configured ratios. The test half keeps one
/// positive subset across ratios so only the negatives change.
pub(super) fn run(pipeline: &Pipeline, section: &SweepSection, d: &Dataset, model: &Model) -> Result<Vec<SweepRow>> {
    let config = &pipeline.config;
    let panel_genes = d.expression.symbols();
    let in_panel = d.edges.restrict_panel(panel_genes);
    let (train_tfs, test_tfs) = split_sources(in_panel.tfs(), pipeline.seed("sweep:split"));
    let train_edges = d.edges.restrict_sources(&train_tfs);
    let test_edges = d.edges.restrict_sources(&test_tfs);
    let max_ratio = section.ratios.iter().copied().fold(0.0, f64::max);
    let test_cap = positive_cap(&test_edges, panel_genes, max_ratio)?;
    let train_ratio_max = if section.retrain { max_ratio } else { config.ratio };
    let train_cap = positive_cap(&train_edges, panel_genes, train_ratio_max)?;
    let test_seed = pipeline.seed("sweep:test");
    let train_seed = pipeline.seed("sweep:train");

    let (panel, _) = Panel::from_expression(model.vocabulary(), &d.expression);
    let extractor = FeatureExtractor::new(model, config.features.grid.clone(), panel)?
        .with_expression(&d.expression, config.features.aggregation);
    let mut memo = FeatureMemo { extractor, rows: HashMap::new(), exec: config.execution };
    let trained_methods: Vec<Method> = section.method.inputs().into_iter().filter(|m| !m.is_zero_shot()).collect();

    let train_all = |memo: &mut FeatureMemo, ratio: f64| -> Result<BTreeMap<Method, TranslatorModel>> {
        let set = sample_pairs_capped(&train_edges, panel_genes, ratio, train_seed, Some(train_cap))?;
        trained_methods
            .iter()
            .map(|&m| {
                let mut tc = config.translator.clone();
                tc.seed = pipeline.seed(&format!("sweep:translator:{m}:{ratio}"));
                Ok((m, translator::train(&tc, m, &memo.examples(m, &set)?)?.model))
            })
            .collect()
    };
    let fixed = if section.retrain { None } else { Some(train_all(&mut memo, config.ratio)?) };

    let sample = |ratio: f64| sample_pairs_capped(&test_edges, panel_genes, ratio, test_seed, Some(test_cap));
    let score = |set: &PairSampleSet| -> Result<Vec<f64>> {
        let retrained;
        let models = match &fixed {
            Some(m) => m,
            None => {
                retrained = train_all(&mut memo, set.ratio)?;
                &retrained
            }
        };
        let mut logits = |m: Method| -> Result<Vec<f64>> { models[&m].logits(&memo.rows(m, set)?, config.execution) };
        match section.method {
            EvalMethod::Single(m) if m.is_zero_shot() => Ok(memo.rows(m, set)?.into_iter().map(|r| r[0]).collect()),
            EvalMethod::Single(m) => Ok(logits(m)?.into_iter().map(translator::sigmoid).collect()),
            EvalMethod::Ensemble => {
                let vvp = logits(Method::Vvp)?;
                translator::ensemble(&vvp, &logits(Method::Gdt)?)
            }
        }
    };
    imbalance_sweep(section.method, &section.ratios, sample, score)
}
