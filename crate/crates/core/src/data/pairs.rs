use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EdgeSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampledPair {
    pub source: String,
    pub target: String,
    pub label: bool,
}

/// Labelled TF-sourced pairs: every in-panel edge as a positive plus
/// `floor(ratio * positives)` sampled non-edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSampleSet {
    pub pairs: Vec<SampledPair>,
    pub ratio: f64,
    pub seed: u64,
}

impl PairSampleSet {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.label).collect()
    }
}

/// Non-edges `(tf, g)` with `tf` a TF in the panel, `g` in the panel and
/// `g != tf`, in TF-list then panel order.
pub fn negative_candidates(edges: &EdgeSet, panel: &[String]) -> Vec<(String, String)> {
    let in_panel: HashSet<&str> = panel.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    for tf in edges.tfs().iter().filter(|t| in_panel.contains(t.as_str())) {
        for g in panel {
            if g != tf && !edges.contains(tf, g) {
                out.push((tf.clone(), g.clone()));
            }
        }
    }
    out
}

/// Positives are all edges inside `panel`; negatives are drawn uniformly
/// without replacement from [`negative_candidates`]. Deterministic per seed.
pub fn sample_pairs(edges: &EdgeSet, panel: &[String], ratio: f64, seed: u64) -> Result<PairSampleSet> {
    sample_pairs_capped(edges, panel, ratio, seed, None)
}

/// [`sample_pairs`] keeping at most `max_positives` positives, chosen by a
/// seeded draw that does not depend on `ratio`. Sweeping the ratio with a
/// fixed cap varies only the negatives.
pub fn sample_pairs_capped(
    edges: &EdgeSet,
    panel: &[String],
    ratio: f64,
    seed: u64,
    max_positives: Option<usize>,
) -> Result<PairSampleSet> {
    if !(ratio >= 0.0) || !ratio.is_finite() {
        return Err(Error::Config(format!("N/P ratio {ratio} must be finite and >= 0")));
    }
    let inside = edges.restrict_panel(panel);
    if inside.is_empty() || max_positives == Some(0) {
        return Err(Error::Data("no positive edges inside the gene panel".into()));
    }
    let mut kept: Vec<usize> = (0..inside.len()).collect();
    if let Some(cap) = max_positives.filter(|&c| c < inside.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        kept = rand::seq::index::sample(&mut rng, inside.len(), cap).into_vec();
        kept.sort_unstable();
    }
    let n_pos = kept.len();
    let candidates = negative_candidates(&inside_tfs(edges, panel), panel);
    let n_neg = (ratio * n_pos as f64).floor() as usize;
    if n_neg > candidates.len() {
        return Err(Error::Data(format!(
            "insufficient negative candidates: {} available for {n_neg} requested; maximum achievable N/P ratio is {:.4}",
            candidates.len(),
            candidates.len() as f64 / n_pos as f64
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), n_neg).into_vec();
    picked.sort_unstable();

    let mut pairs: Vec<SampledPair> = kept
        .iter()
        .map(|&e| {
            let (s, t) = &inside.edges()[e];
            SampledPair { source: s.clone(), target: t.clone(), label: true }
        })
        .collect();
    pairs.extend(picked.into_iter().map(|i| {
        let (s, t) = &candidates[i];
        SampledPair { source: s.clone(), target: t.clone(), label: false }
    }));
    Ok(PairSampleSet { pairs, ratio, seed })
}

/// Splits `tfs` into two disjoint halves (first half rounded down) after a
/// seeded shuffle; used for held-out-TF evaluation.
pub fn split_sources(tfs: &[String], seed: u64) -> (Vec<String>, Vec<String>) {
    let mut shuffled = tfs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(shuffled.len() / 2);
    (shuffled, test)
}

/// Every in-panel edge plus every candidate non-edge.
pub fn all_pairs(edges: &EdgeSet, panel: &[String]) -> PairSampleSet {
    let inside = edges.restrict_panel(panel);
    let mut pairs: Vec<SampledPair> =
        inside.edges().iter().map(|(s, t)| SampledPair { source: s.clone(), target: t.clone(), label: true }).collect();
    let n_pos = pairs.len();
    pairs.extend(
        negative_candidates(&inside_tfs(edges, panel), panel).into_iter().map(|(source, target)| SampledPair {
            source,
            target,
            label: false,
        }),
    );
    let ratio = if n_pos == 0 { 0.0 } else { (pairs.len() - n_pos) as f64 / n_pos as f64 };
    PairSampleSet { pairs, ratio, seed: 0 }
}

/// Edge set keeping every TF (even ones without in-panel edges) but only
/// in-panel edges, so TFs without positives still yield negatives.
fn inside_tfs(edges: &EdgeSet, panel: &[String]) -> EdgeSet {
    let inside = edges.restrict_panel(panel);
    EdgeSet::new(edges.tfs().to_vec(), inside.edges().to_vec()).expect("valid subset")
}
