#![allow(dead_code)]

pub mod grad;
pub mod ted;

use layout_core::decode::{Completion, DecodeConfig, DecodeError, LayoutCompleter};
use layout_core::layout::{
    generate_synthetic, reorder, Bounds, LayoutNode, LayoutTree, NodeProps, Order, PartialTree,
    SynthParams, TreeBuilder,
};

/// Knows the true trees and completes any of their prefixes perfectly.
pub struct Oracle {
    pub golds: Vec<LayoutTree>,
}

impl Oracle {
    fn find(&self, partial: &PartialTree) -> Option<LayoutTree> {
        self.golds
            .iter()
            .map(|g| reorder(g, partial.order))
            .find(|g| {
                g.len() >= partial.tree.len()
                    && g.nodes()[..partial.tree.len()] == *partial.tree.nodes()
            })
    }
}

impl LayoutCompleter for Oracle {
    fn complete(
        &self,
        partial: &PartialTree,
        _cfg: &DecodeConfig,
    ) -> Result<Vec<Completion>, DecodeError> {
        let tree = self.find(partial).unwrap_or_else(|| partial.tree.clone());
        Ok(vec![Completion {
            new_node_count: tree.len() - partial.tree.len(),
            tree,
            log_prob: 0.0,
            repairs: 0,
            budget_exhausted: false,
        }])
    }

    fn next_element(&self, partial: &PartialTree) -> Result<Option<LayoutNode>, DecodeError> {
        Ok(self
            .find(partial)
            .and_then(|g| g.nodes().get(partial.tree.len()).copied()))
    }

    fn supports(&self, _order: Order) -> bool {
        true
    }
}

/// Always predicts that the tree is already complete.
pub struct Stopper;

impl LayoutCompleter for Stopper {
    fn complete(
        &self,
        partial: &PartialTree,
        _cfg: &DecodeConfig,
    ) -> Result<Vec<Completion>, DecodeError> {
        Ok(vec![Completion {
            tree: partial.tree.clone(),
            log_prob: 0.0,
            new_node_count: 0,
            repairs: 0,
            budget_exhausted: false,
        }])
    }

    fn next_element(&self, _partial: &PartialTree) -> Result<Option<LayoutNode>, DecodeError> {
        Ok(None)
    }

    fn supports(&self, _order: Order) -> bool {
        true
    }
}

pub fn synthetic(n: u64) -> Vec<LayoutTree> {
    (0..n)
        .map(|s| generate_synthetic(s, &SynthParams::default()))
        .collect()
}

/// root -> {A (container) -> {C, D}, B}
pub fn small_tree() -> LayoutTree {
    let mut b = TreeBuilder::root(NodeProps::new(0, false, Bounds::screen()));
    let a = b.child(0, NodeProps::new(1, false, Bounds::new(0, 0, 72, 64)));
    b.child(0, NodeProps::new(2, true, Bounds::new(0, 64, 72, 128)));
    b.child(a, NodeProps::new(3, true, Bounds::new(0, 0, 36, 64)));
    b.child(a, NodeProps::new(4, true, Bounds::new(36, 0, 72, 64)));
    b.build("small")
}

/// Synthetic trees whose roots all differ in type, so that any prefix
/// identifies its tree.
pub fn distinct_roots(n: u64) -> Vec<LayoutTree> {
    assert!(n <= 25);
    synthetic(n)
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut nodes = t.nodes().to_vec();
            nodes[0].type_id = i as u16;
            LayoutTree::from_raw(t.source_id.clone(), nodes)
        })
        .collect()
}
