mod common;

use std::fs;
use std::path::Path;

use common::synthetic;
use layout_core::layout::{
    canonicalize, delinearize, discretize_bounds, extract_partial, ingest_corpus, linearize,
    prefix_len, read_corpus, to_layout_file, traverse, write_corpus, Bounds, IngestOptions,
    LayoutFile, LayoutFileNode, LayoutTree, NodeProps, Order, Token, TreeBuilder, TypeManifest,
};
use proptest::prelude::*;

fn file_node(label: &str, bounds: [f64; 4], children: Vec<LayoutFileNode>) -> LayoutFileNode {
    LayoutFileNode {
        component_label: label.into(),
        bounds,
        children,
    }
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn screen(id: &str, root: LayoutFileNode) -> String {
    serde_json::to_string(&LayoutFile {
        id: id.into(),
        width: 1080.0,
        height: 1920.0,
        root,
    })
    .unwrap()
}

#[test]
fn linearization_round_trips_synthetic_corpus() {
    for (seed, tree) in synthetic(1000).into_iter().enumerate() {
        let back = delinearize(&linearize(&tree)).unwrap();
        assert_eq!(back.nodes(), tree.nodes(), "seed {seed}");
    }
}

#[test]
fn single_children_are_not_bracketed() {
    let mut b = TreeBuilder::root(NodeProps::new(0, false, Bounds::screen()));
    let a = b.child(0, NodeProps::new(1, false, Bounds::new(0, 0, 72, 64)));
    b.child(a, NodeProps::new(2, true, Bounds::new(0, 0, 72, 32)));
    let tree = b.build("chain");
    let seq = linearize(&tree);
    assert!(seq.iter().all(|t| matches!(t, Token::Node(_))));
    assert_eq!(delinearize(&seq).unwrap().nodes(), tree.nodes());
}

#[test]
fn full_screen_maps_onto_the_grid() {
    assert_eq!(
        discretize_bounds([0.0, 0.0, 1080.0, 1920.0], 1080.0, 1920.0).unwrap(),
        Bounds::new(0, 0, 72, 128)
    );
    assert_eq!(
        discretize_bounds([540.0, 960.0, 1080.0, 1920.0], 1080.0, 1920.0).unwrap(),
        Bounds::new(36, 64, 72, 128)
    );
    assert!(discretize_bounds([0.0, 0.0, 2000.0, 10.0], 1080.0, 1920.0).is_err());
}

#[test]
fn ingestion_keeps_valid_screens_and_counts_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = file_node(
        "Toolbar",
        [0.0, 0.0, 1080.0, 1920.0],
        vec![
            file_node("Text", [0.0, 960.0, 1080.0, 1920.0], vec![]),
            file_node("Image", [0.0, 0.0, 1080.0, 960.0], vec![]),
        ],
    );
    write(dir.path(), "a.json", &screen("a", good));
    write(
        dir.path(),
        "b.json",
        &screen(
            "b",
            file_node("Warp Drive", [0.0, 0.0, 1080.0, 1920.0], vec![]),
        ),
    );
    write(dir.path(), "c.json", "{ not json");
    let outside = file_node(
        "Toolbar",
        [0.0, 0.0, 540.0, 960.0],
        vec![file_node("Text", [500.0, 0.0, 1080.0, 100.0], vec![])],
    );
    write(dir.path(), "d.json", &screen("d", outside));
    write(dir.path(), "notes.txt", "ignored");

    let manifest = TypeManifest::builtin();
    let out = ingest_corpus(dir.path(), &manifest, &IngestOptions::default()).unwrap();
    assert_eq!(out.files_seen, 4);
    assert_eq!(out.trees.len(), 1);
    assert_eq!(out.rejected_total(), 3);
    assert_eq!(out.rejected.get("parse"), Some(&1));
    assert_eq!(out.rejected.get("unknown-label"), Some(&1));
    assert_eq!(out.rejected.get("containment"), Some(&1));

    let tree = &out.trees[0];
    assert_eq!(tree.len(), 3);
    // siblings are stored in reading order: the image above the text
    assert_eq!(tree.node(1).type_id, manifest.id("Image").unwrap());
    assert_eq!(out.stats.num_layouts, 1);
    assert_eq!(out.stats.mean_nodes, 3.0);
    assert_eq!(out.stats.max_depth, 2);
}

#[test]
fn shuffled_ingestion_only_permutes_siblings() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = TypeManifest::builtin();
    for (i, tree) in synthetic(20).iter().enumerate() {
        fs::write(
            dir.path().join(format!("{i:03}.json")),
            serde_json::to_string(&to_layout_file(tree, &manifest)).unwrap(),
        )
        .unwrap();
    }
    let plain = ingest_corpus(dir.path(), &manifest, &IngestOptions::default()).unwrap();
    let shuffled = ingest_corpus(
        dir.path(),
        &manifest,
        &IngestOptions {
            shuffle_children: Some(3),
            ..IngestOptions::default()
        },
    )
    .unwrap();
    assert_eq!(plain.trees.len(), 20);
    let mut moved = 0;
    for (a, b) in plain.trees.iter().zip(&shuffled.trees) {
        assert_eq!(canonicalize(a).nodes(), canonicalize(b).nodes());
        moved += usize::from(a.nodes() != b.nodes());
    }
    assert!(moved > 0);
}

#[test]
fn corpus_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    let trees = synthetic(30);
    write_corpus(&path, &trees).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), trees);
}

#[test]
fn prefixes_have_the_expected_size() {
    assert_eq!(prefix_len(0.1, 16), 2);
    assert_eq!(prefix_len(0.5, 16), 8);
    assert_eq!(prefix_len(0.8, 16), 13);
    assert_eq!(prefix_len(0.1, 3), 1);
}

fn parent_closed(t: &LayoutTree) -> bool {
    t.nodes()
        .iter()
        .enumerate()
        .all(|(i, n)| n.parent.is_none_or(|p| p < i))
}

proptest! {
    #[test]
    fn partials_are_parent_closed_traversal_prefixes(seed in 0u64..5000, f in 0.05f64..1.0, bfs in any::<bool>()) {
        let tree = synthetic(seed + 1).pop().unwrap();
        let order = if bfs { Order::Bfs } else { Order::Dfs };
        let partial = extract_partial(&tree, f, order);
        prop_assert_eq!(partial.k, prefix_len(f, tree.len()));
        prop_assert!(parent_closed(&partial.tree));
        prop_assert!(partial.follows(order));
        let walk = traverse(&tree, order);
        for (i, &n) in walk.iter().take(partial.k).enumerate() {
            prop_assert_eq!(partial.tree.node(i).props(), tree.node(n).props());
        }
    }
}
