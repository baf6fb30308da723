//! Layout edit distance, parent-child pair retrieval, next-element accuracy
//! and the mean number of completions per partial tree.

mod completions;
mod edit;
mod evaluate;
mod pairs;

use std::path::PathBuf;

use thiserror::Error;

pub use completions::mean_completions;
pub use edit::{tree_edit_distance, tree_edit_distance_micros, CostTable, EditLabel, MicroCosts};
pub use evaluate::{
    evaluate_completions, next_element_accuracy, next_element_hit, EvalItem, MetricReport,
    NextCounts,
};
pub use pairs::{pair_counts, pair_keys, pair_retrieval, PairCounts, PairKey, PairScores};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid cost table: {0}")]
    Costs(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Decode(#[from] crate::decode::DecodeError),
}
