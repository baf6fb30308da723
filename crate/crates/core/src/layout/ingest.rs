//! Reading layout files and corpus summaries.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::discretize::discretize_bounds;
use super::manifest::TypeManifest;
use super::tree::{
    check_tree, LayoutNode, LayoutTree, NodeProps, ValidationError, GRID_HEIGHT, GRID_WIDTH,
};
use crate::parallel::{par_map, Execution};

/// One screen as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub root: LayoutFileNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutFileNode {
    #[serde(rename = "componentLabel")]
    pub component_label: String,
    pub bounds: [f64; 4],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<LayoutFileNode>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no layout survived ingestion ({files} files seen)")]
    EmptyCorpus { files: usize },
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
}

/// Why a single file was dropped.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FileRejection {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown component label `{0}`")]
    UnknownLabel(String),
    #[error("node out of screen: {0}")]
    OutOfScreen(String),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

impl FileRejection {
    /// Short reason used for rejection counts.
    pub fn kind(&self) -> &'static str {
        match self {
            FileRejection::Parse(_) => "parse",
            FileRejection::UnknownLabel(_) => "unknown-label",
            FileRejection::OutOfScreen(_) => "containment",
            FileRejection::Invalid(ValidationError::ContainmentViolation { .. }) => "containment",
            FileRejection::Invalid(ValidationError::SizeLimit { .. }) => "size-limit",
            FileRejection::Invalid(ValidationError::FanoutLimit { .. }) => "fanout-limit",
            FileRejection::Invalid(ValidationError::OrderViolation { .. }) => "order",
            FileRejection::Invalid(_) => "structure",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    /// Shuffle sibling order with this seed instead of sorting into reading order.
    pub shuffle_children: Option<u64>,
    pub execution: Execution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_layouts: usize,
    pub mean_nodes: f64,
    pub max_nodes: usize,
    pub min_nodes: usize,
    /// Depth counts levels: a root with one child has depth 2.
    pub mean_depth: f64,
    pub max_depth: usize,
    pub min_depth: usize,
    pub type_histogram: Vec<usize>,
}

impl CorpusStats {
    pub fn compute(trees: &[LayoutTree], type_count: usize) -> Self {
        let mut hist = vec![0usize; type_count];
        for t in trees {
            for n in t.nodes() {
                if let Some(slot) = hist.get_mut(n.type_id as usize) {
                    *slot += 1;
                }
            }
        }
        let count = trees.len().max(1) as f64;
        Self {
            num_layouts: trees.len(),
            mean_nodes: trees.iter().map(|t| t.len() as f64).sum::<f64>() / count,
            max_nodes: trees.iter().map(LayoutTree::len).max().unwrap_or(0),
            min_nodes: trees.iter().map(LayoutTree::len).min().unwrap_or(0),
            mean_depth: trees.iter().map(|t| t.levels() as f64).sum::<f64>() / count,
            max_depth: trees.iter().map(LayoutTree::levels).max().unwrap_or(0),
            min_depth: trees.iter().map(LayoutTree::levels).min().unwrap_or(0),
            type_histogram: hist,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub trees: Vec<LayoutTree>,
    pub stats: CorpusStats,
    pub files_seen: usize,
    /// Rejected file counts keyed by [`FileRejection::kind`].
    pub rejected: BTreeMap<String, usize>,
}

impl Ingested {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Converts one parsed layout file into a validated grid-space tree.
pub fn layout_from_file(
    file: &LayoutFile,
    manifest: &TypeManifest,
    shuffle_children: Option<u64>,
) -> Result<LayoutTree, FileRejection> {
    struct Pending<'a> {
        raw: &'a LayoutFileNode,
        parent: Option<usize>,
        depth: usize,
    }
    let mut rng = shuffle_children.map(ChaCha8Rng::seed_from_u64);
    let mut nodes: Vec<LayoutNode> = Vec::new();
    let mut stack = vec![Pending {
        raw: &file.root,
        parent: None,
        depth: 0,
    }];
    while let Some(p) = stack.pop() {
        let type_id = manifest
            .id(&p.raw.component_label)
            .ok_or_else(|| FileRejection::UnknownLabel(p.raw.component_label.clone()))?;
        let bounds = discretize_bounds(p.raw.bounds, file.width, file.height)
            .map_err(|e| FileRejection::OutOfScreen(e.to_string()))?;
        let index = nodes.len();
        nodes.push(LayoutNode::from_props(
            NodeProps::new(type_id, p.raw.children.is_empty(), bounds),
            p.parent,
            p.depth,
        ));
        let mut kids: Vec<(Option<(i32, i32)>, &LayoutFileNode)> =
            Vec::with_capacity(p.raw.children.len());
        for c in &p.raw.children {
            let key = discretize_bounds(c.bounds, file.width, file.height)
                .ok()
                .map(|b| (b.y0, b.x0));
            kids.push((key, c));
        }
        match rng.as_mut() {
            Some(r) => kids.shuffle(r),
            // stable: ties keep file order
            None => kids.sort_by_key(|(k, _)| *k),
        }
        for (_, c) in kids.into_iter().rev() {
            stack.push(Pending {
                raw: c,
                parent: Some(index),
                depth: p.depth + 1,
            });
        }
    }
    let tree = LayoutTree::from_raw(file.id.clone(), nodes);
    check_tree(&tree)?;
    Ok(tree)
}

fn ingest_path(
    path: &Path,
    manifest: &TypeManifest,
    shuffle: Option<u64>,
) -> Result<LayoutTree, FileRejection> {
    let text = fs::read_to_string(path).map_err(|e| FileRejection::Parse(e.to_string()))?;
    let file: LayoutFile =
        serde_json::from_str(&text).map_err(|e| FileRejection::Parse(e.to_string()))?;
    layout_from_file(&file, manifest, shuffle)
}

/// Parses, discretizes and validates every `*.json` file in `dir`.
///
/// Rejected files are dropped and counted; survivors are sorted by source id.
pub fn ingest_corpus(
    dir: &Path,
    manifest: &TypeManifest,
    opts: &IngestOptions,
) -> Result<Ingested, IngestError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| IngestError::Io {
            path: dir.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let results = par_map(opts.execution, &paths, |p| {
        ingest_path(p, manifest, opts.shuffle_children)
    });
    let mut trees = Vec::new();
    let mut rejected = BTreeMap::new();
    for r in results {
        match r {
            Ok(t) => trees.push(t),
            Err(e) => *rejected.entry(e.kind().to_string()).or_insert(0) += 1,
        }
    }
    if trees.is_empty() {
        return Err(IngestError::EmptyCorpus { files: paths.len() });
    }
    trees.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    let stats = CorpusStats::compute(&trees, manifest.len());
    Ok(Ingested {
        trees,
        stats,
        files_seen: paths.len(),
        rejected,
    })
}

/// Grid-space layout file for `tree` (screen size equal to the grid).
pub fn to_layout_file(tree: &LayoutTree, manifest: &TypeManifest) -> LayoutFile {
    fn build(
        tree: &LayoutTree,
        children: &[Vec<usize>],
        n: usize,
        manifest: &TypeManifest,
    ) -> LayoutFileNode {
        let node = tree.node(n);
        let b = node.bounds;
        LayoutFileNode {
            component_label: manifest.name(node.type_id).unwrap_or("?").to_string(),
            bounds: [b.x0 as f64, b.y0 as f64, b.x1 as f64, b.y1 as f64],
            children: children[n]
                .iter()
                .map(|&c| build(tree, children, c, manifest))
                .collect(),
        }
    }
    let children = tree.children();
    LayoutFile {
        id: tree.source_id.clone(),
        width: GRID_WIDTH as f64,
        height: GRID_HEIGHT as f64,
        root: build(tree, &children, 0, manifest),
    }
}

/// Writes trees as JSON lines.
pub fn write_corpus(path: &Path, trees: &[LayoutTree]) -> Result<(), IngestError> {
    let io = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for t in trees {
        let line = serde_json::to_string(t).expect("trees serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a JSON-lines corpus written by [`write_corpus`]; every tree is re-validated.
pub fn read_corpus(path: &Path) -> Result<Vec<LayoutTree>, IngestError> {
    let io = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let tree: LayoutTree = serde_json::from_str(&line).map_err(|e| IngestError::Corpus {
            line: i + 1,
            message: e.to_string(),
        })?;
        check_tree(&tree).map_err(|e| IngestError::Corpus {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(tree);
    }
    Ok(out)
}
