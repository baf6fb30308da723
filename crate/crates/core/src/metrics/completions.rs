use std::collections::{HashMap, HashSet};

use crate::layout::{canonicalize, extract_partial, LayoutTree, NodeProps, Order};

type TreeKey = Vec<(NodeProps, Option<usize>)>;

fn key(tree: &LayoutTree) -> TreeKey {
    tree.nodes().iter().map(|n| (n.props(), n.parent)).collect()
}

/// Mean, over trees, of the number of distinct full trees sharing the tree's
/// partial prefix under `order` and `fraction`.
pub fn mean_completions(corpus: &[LayoutTree], order: Order, fraction: f64) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let mut groups: HashMap<TreeKey, HashSet<TreeKey>> = HashMap::new();
    let mut prefix_of = Vec::with_capacity(corpus.len());
    for t in corpus {
        let t = canonicalize(t);
        let prefix = key(&extract_partial(&t, fraction, order).tree);
        groups.entry(prefix.clone()).or_default().insert(key(&t));
        prefix_of.push(prefix);
    }
    prefix_of
        .iter()
        .map(|p| groups[p].len() as f64)
        .sum::<f64>()
        / corpus.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Bounds, TreeBuilder};

    fn tree(kids: &[u16]) -> LayoutTree {
        let mut b = TreeBuilder::root(NodeProps::new(0, false, Bounds::screen()));
        for (i, &t) in kids.iter().enumerate() {
            let y = 10 * i as i32;
            b.child(0, NodeProps::new(t, true, Bounds::new(0, y, 10, y + 10)));
        }
        b.build("t")
    }

    #[test]
    fn distinct_prefixes_give_one() {
        let corpus = [tree(&[1, 2]), tree(&[2, 2]), tree(&[3, 1])];
        assert_eq!(mean_completions(&corpus, Order::Dfs, 0.5), 1.0);
    }

    #[test]
    fn shared_prefix_counts_distinct_suffixes() {
        // prefixes of 2 nodes: root + first child
        let corpus = [
            tree(&[1, 2, 3, 4]),
            tree(&[1, 3, 3, 4]),
            tree(&[1, 3, 3, 4]),
            tree(&[2, 2, 2, 2]),
        ];
        assert_eq!(
            mean_completions(&corpus, Order::Bfs, 0.4),
            (2.0 + 2.0 + 2.0 + 1.0) / 4.0
        );
    }
}
