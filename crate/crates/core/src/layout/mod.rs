//! Layout-tree data model: nodes, validation, grid discretization,
//! traversals, bracket linearization, partial trees and corpus ingestion.

mod discretize;
mod ingest;
mod linearize;
mod manifest;
mod synth;
mod traverse;
mod tree;

pub(crate) use discretize::widen;
pub use discretize::{discretize_bounds, InvalidBounds};
pub use ingest::{
    ingest_corpus, layout_from_file, read_corpus, to_layout_file, write_corpus, CorpusStats,
    FileRejection, IngestError, IngestOptions, Ingested, LayoutFile, LayoutFileNode,
};
pub use linearize::{
    delinearize, linearize, linearize_partial, linearize_prefix, BracketParser, DelinearizeError,
    Pushed, Token, TokenSeq,
};
pub use manifest::{ManifestError, TypeManifest};
pub use synth::{generate_synthetic, SynthParams};
pub use traverse::{
    canonicalize, extract_partial, extract_prefix, prefix_len, reorder, traverse, PartialTree,
};
pub use tree::{
    check_tree, validate_tree, Bounds, LayoutNode, LayoutTree, NodeProps, Order, TreeBuilder,
    ValidationError, GRID_HEIGHT, GRID_WIDTH, MAX_CHILDREN, MAX_NODES,
};
