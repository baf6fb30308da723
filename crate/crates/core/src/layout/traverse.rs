use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::tree::{LayoutTree, Order};

/// Node indices of `tree` in breadth-first or depth-first preorder.
///
/// Siblings are visited in stored child order, so every parent precedes its
/// children in the result.
pub fn traverse(tree: &LayoutTree, order: Order) -> Vec<usize> {
    if tree.is_empty() {
        return Vec::new();
    }
    let children = tree.children();
    let mut out = Vec::with_capacity(tree.len());
    match order {
        Order::Bfs => {
            let mut queue = VecDeque::from([0usize]);
            while let Some(n) = queue.pop_front() {
                out.push(n);
                queue.extend(children[n].iter().copied());
            }
        }
        Order::Dfs => {
            let mut stack = vec![0usize];
            while let Some(n) = stack.pop() {
                out.push(n);
                stack.extend(children[n].iter().rev().copied());
            }
        }
    }
    out
}

/// `tree` with its nodes stored in traversal order.
pub fn reorder(tree: &LayoutTree, order: Order) -> LayoutTree {
    tree.permuted(&traverse(tree, order))
}

/// Canonical form: siblings sorted into reading order (top-left corner by
/// `(y, x)`, ties by stored order) and nodes stored in depth-first preorder.
pub fn canonicalize(tree: &LayoutTree) -> LayoutTree {
    if tree.is_empty() {
        return tree.clone();
    }
    let mut children = tree.children();
    for list in &mut children {
        list.sort_by_key(|&c| (tree.node(c).bounds.y0, tree.node(c).bounds.x0, c));
    }
    let mut perm = Vec::with_capacity(tree.len());
    let mut stack = vec![0usize];
    while let Some(n) = stack.pop() {
        perm.push(n);
        stack.extend(children[n].iter().rev().copied());
    }
    tree.permuted(&perm)
}

/// A parent-closed prefix of a layout tree that always contains the root.
///
/// `tree` stores exactly the `k` given nodes, in `order` when the partial was
/// cut from a traversal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialTree {
    pub tree: LayoutTree,
    pub k: usize,
    pub order: Order,
}

impl PartialTree {
    /// Wraps a tree whose storage order already follows `order`.
    pub fn new(tree: LayoutTree, order: Order) -> Self {
        Self {
            k: tree.len(),
            tree,
            order,
        }
    }

    /// Whether the stored nodes are in `order` traversal order.
    pub fn follows(&self, order: Order) -> bool {
        traverse(&self.tree, order)
            .iter()
            .enumerate()
            .all(|(i, &n)| i == n)
    }
}

/// Number of given nodes for a fraction of an `n`-node tree: `max(1, round(f * n))`.
pub fn prefix_len(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n.max(1))
}

/// The first `max(1, round(fraction * |T|))` nodes of `tree` in `order`.
pub fn extract_partial(tree: &LayoutTree, fraction: f64, order: Order) -> PartialTree {
    let k = prefix_len(fraction, tree.len());
    extract_prefix(tree, k, order)
}

/// The first `k` nodes of `tree` in `order`.
pub fn extract_prefix(tree: &LayoutTree, k: usize, order: Order) -> PartialTree {
    let ordered = reorder(tree, order);
    let nodes = ordered.nodes()[..k.min(ordered.len())].to_vec();
    PartialTree {
        k: nodes.len(),
        tree: LayoutTree::from_raw(tree.source_id.clone(), nodes),
        order,
    }
}
