use serde::{Deserialize, Serialize};

use super::edit::{tree_edit_distance_micros, CostTable};
use super::pairs::{pair_counts, PairCounts};
use super::MetricsError;
use crate::decode::{DecodeConfig, LayoutCompleter};
use crate::layout::{
    canonicalize, extract_prefix, prefix_len, reorder, traverse, LayoutNode, LayoutTree, Order,
};
use crate::parallel::{par_map, Execution};

/// Whether a predicted next node matches the true one: type, terminal flag
/// and, unless `relaxed`, exact bounds.
pub fn next_element_hit(pred: Option<&LayoutNode>, gold: &LayoutNode, relaxed: bool) -> bool {
    pred.is_some_and(|p| {
        p.type_id == gold.type_id
            && p.terminal == gold.terminal
            && (relaxed || p.bounds == gold.bounds)
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextCounts {
    pub total: usize,
    pub strict: usize,
    pub relaxed: usize,
}

impl NextCounts {
    pub fn add(&mut self, o: &NextCounts) {
        self.total += o.total;
        self.strict += o.strict;
        self.relaxed += o.relaxed;
    }

    pub fn percent(&self, relaxed: bool) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        100.0 * if relaxed { self.relaxed } else { self.strict } as f64 / self.total as f64
    }
}

/// A gold tree (depth-first storage, sibling order kept) with the size of
/// the partial tree given to the model.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub gold: LayoutTree,
    pub k: usize,
    pub order: Order,
}

impl EvalItem {
    pub fn new(tree: &LayoutTree, order: Order, fraction: f64) -> Self {
        let gold = reorder(tree, Order::Dfs);
        let k = prefix_len(fraction, gold.len());
        Self { gold, k, order }
    }

    /// The node after the prefix in traversal order, if any.
    pub fn next_gold(&self) -> Option<LayoutNode> {
        traverse(&self.gold, self.order)
            .get(self.k)
            .map(|&i| *self.gold.node(i))
    }
}

fn next_counts(
    completer: &dyn LayoutCompleter,
    item: &EvalItem,
) -> Result<NextCounts, MetricsError> {
    let Some(gold) = item.next_gold() else {
        return Ok(NextCounts::default());
    };
    let partial = extract_prefix(&item.gold, item.k, item.order);
    let pred = completer.next_element(&partial)?;
    Ok(NextCounts {
        total: 1,
        strict: next_element_hit(pred.as_ref(), &gold, false) as usize,
        relaxed: next_element_hit(pred.as_ref(), &gold, true) as usize,
    })
}

/// Next-element accuracy counts for each fraction; trees whose prefix is
/// already complete are skipped.
pub fn next_element_accuracy(
    completer: &dyn LayoutCompleter,
    corpus: &[LayoutTree],
    order: Order,
    fractions: &[f64],
    execution: Execution,
) -> Result<Vec<NextCounts>, MetricsError> {
    fractions
        .iter()
        .map(|&f| {
            let items: Vec<EvalItem> = corpus.iter().map(|t| EvalItem::new(t, order, f)).collect();
            let mut total = NextCounts::default();
            for c in par_map(execution, &items, |it| next_counts(completer, it)) {
                total.add(&c?);
            }
            Ok(total)
        })
        .collect()
}

/// Corpus-level scores in one matching mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub relaxed: bool,
    /// Micro-averaged over all pairs of the corpus, in percent.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Percent of trees with a next element whose prediction matched.
    pub next_accuracy: f64,
    /// Mean edit distance per tree, in seconds.
    pub edit_distance: f64,
    pub trees: usize,
}

#[derive(Default)]
struct Tally {
    pairs: [PairCounts; 2],
    edit_micros: [u64; 2],
    next: NextCounts,
}

/// Greedy completions of every tree's partial prefix scored against the
/// full tree, in strict and relaxed mode (in that order). Both trees are put
/// in reading order before comparison.
pub fn evaluate_completions(
    completer: &dyn LayoutCompleter,
    corpus: &[LayoutTree],
    order: Order,
    fraction: f64,
    costs: &CostTable,
    decode: &DecodeConfig,
    execution: Execution,
) -> Result<[MetricReport; 2], MetricsError> {
    costs.validate()?;
    let micro = costs.micros();
    let items: Vec<EvalItem> = corpus
        .iter()
        .map(|t| EvalItem::new(t, order, fraction))
        .collect();
    let per_tree = par_map(execution, &items, |it| -> Result<Tally, MetricsError> {
        let partial = extract_prefix(&it.gold, it.k, order);
        let completions = completer.complete(&partial, decode)?;
        let pred = completions
            .first()
            .map_or_else(|| partial.tree.clone(), |c| c.tree.clone());
        let pred = canonicalize(&pred);
        let gold = canonicalize(&it.gold);
        let mut t = Tally {
            next: next_counts(completer, it)?,
            ..Tally::default()
        };
        for (m, relaxed) in [false, true].into_iter().enumerate() {
            t.pairs[m] = pair_counts(&pred, &gold, relaxed);
            t.edit_micros[m] = tree_edit_distance_micros(&pred, &gold, &micro, relaxed);
        }
        Ok(t)
    });
    let mut sum = Tally::default();
    for t in per_tree {
        let t = t?;
        for m in 0..2 {
            sum.pairs[m].add(&t.pairs[m]);
            sum.edit_micros[m] += t.edit_micros[m];
        }
        sum.next.add(&t.next);
    }
    let n = items.len();
    let report = |m: usize| {
        let s = sum.pairs[m].scores();
        MetricReport {
            relaxed: m == 1,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            next_accuracy: sum.next.percent(m == 1),
            edit_distance: if n == 0 {
                0.0
            } else {
                sum.edit_micros[m] as f64 / 1e6 / n as f64
            },
            trees: n,
        }
    };
    Ok([report(0), report(1)])
}
