//! Expression data: synthetic planted networks, BEELINE-style files, HVG
//! selection and labelled pair sampling.

mod edges;
mod hvg;
pub mod io;
mod matrix;
mod pairs;
pub mod synth;

pub use edges::EdgeSet;
pub use hvg::select_hvg;
pub use matrix::{DatasetTags, ExpressionMatrix};
pub use pairs::{
    all_pairs, negative_candidates, sample_pairs, sample_pairs_capped, split_sources, PairSampleSet, SampledPair,
};
pub use synth::{generate_synthetic, PlantedWeights, SynthConfig, SyntheticDataset};
