use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::layout::{Bounds, LayoutTree};

/// A parent-child pair: both nodes' types and, in strict mode, their bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub parent_type: u16,
    pub parent_bounds: Option<Bounds>,
    pub child_type: u16,
    pub child_bounds: Option<Bounds>,
}

/// Every parent-child pair of `tree`; coordinates are dropped when `relaxed`.
pub fn pair_keys(tree: &LayoutTree, relaxed: bool) -> Vec<PairKey> {
    let geo = |b: Bounds| (!relaxed).then_some(b);
    tree.nodes()
        .iter()
        .filter_map(|n| {
            let p = tree.node(n.parent?);
            Some(PairKey {
                parent_type: p.type_id,
                parent_bounds: geo(p.bounds),
                child_type: n.type_id,
                child_bounds: geo(n.bounds),
            })
        })
        .collect()
}

/// Matched and total pair counts; summing counts over a corpus gives the
/// micro-averaged scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// Precision, recall and F1 as percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PairCounts {
    pub fn add(&mut self, other: &PairCounts) {
        self.matched += other.matched;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn scores(&self) -> PairScores {
        let rate = |num: usize, den: usize, other: usize| {
            if den > 0 {
                100.0 * num as f64 / den as f64
            } else if other == 0 {
                100.0
            } else {
                0.0
            }
        };
        let precision = rate(self.matched, self.predicted, self.gold);
        let recall = rate(self.matched, self.gold, self.predicted);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PairScores {
            precision,
            recall,
            f1,
        }
    }
}

/// Pairs of `pred` matched one-to-one against pairs of `gold` (multisets).
pub fn pair_counts(pred: &LayoutTree, gold: &LayoutTree, relaxed: bool) -> PairCounts {
    let pred_keys = pair_keys(pred, relaxed);
    let gold_keys = pair_keys(gold, relaxed);
    let mut available: HashMap<PairKey, usize> = HashMap::new();
    for k in &gold_keys {
        *available.entry(*k).or_default() += 1;
    }
    let mut matched = 0;
    for k in &pred_keys {
        if let Some(c) = available.get_mut(k).filter(|c| **c > 0) {
            *c -= 1;
            matched += 1;
        }
    }
    PairCounts {
        matched,
        predicted: pred_keys.len(),
        gold: gold_keys.len(),
    }
}

/// Parent-child pair retrieval precision, recall and F1 of one prediction.
pub fn pair_retrieval(pred: &LayoutTree, gold: &LayoutTree, relaxed: bool) -> PairScores {
    pair_counts(pred, gold, relaxed).scores()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{NodeProps, TreeBuilder};

    fn tree(kids: &[(u16, i32)]) -> LayoutTree {
        let mut b = TreeBuilder::root(NodeProps::new(0, false, Bounds::screen()));
        for &(t, y) in kids {
            b.child(0, NodeProps::new(t, true, Bounds::new(0, y, 10, y + 5)));
        }
        b.build("t")
    }

    #[test]
    fn identical_trees_score_full() {
        let t = tree(&[(1, 0), (2, 5)]);
        let s = pair_retrieval(&t, &t, false);
        assert_eq!((s.precision, s.recall, s.f1), (100.0, 100.0, 100.0));
    }

    #[test]
    fn duplicates_match_one_to_one() {
        let pred = tree(&[(1, 0), (1, 0), (1, 0)]);
        let gold = tree(&[(1, 0)]);
        assert_eq!(
            pair_counts(&pred, &gold, false),
            PairCounts {
                matched: 1,
                predicted: 3,
                gold: 1
            }
        );
    }

    #[test]
    fn off_by_one_coordinate_only_matches_relaxed() {
        let pred = tree(&[(1, 1)]);
        let gold = tree(&[(1, 0)]);
        assert_eq!(pair_counts(&pred, &gold, false).matched, 0);
        assert_eq!(pair_counts(&pred, &gold, true).matched, 1);
    }

    #[test]
    fn empty_pair_sets() {
        let root = tree(&[]);
        assert_eq!(pair_retrieval(&root, &root, false).f1, 100.0);
        assert_eq!(pair_retrieval(&root, &tree(&[(1, 0)]), false).f1, 0.0);
    }
}
