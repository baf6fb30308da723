use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::layout::{Bounds, LayoutTree};

/// Seconds charged per edit operation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTable {
    pub insert_cost: f64,
    pub change_type_cost: f64,
    pub change_geometry_cost: f64,
    pub delete_cost: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            insert_cost: 4.4,
            change_type_cost: 2.2,
            change_geometry_cost: 3.3,
            delete_cost: 0.1,
        }
    }
}

impl CostTable {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let all = [
            self.insert_cost,
            self.change_type_cost,
            self.change_geometry_cost,
            self.delete_cost,
        ];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(MetricsError::Costs(
                "costs must be finite and non-negative".into(),
            ));
        }
        if self.delete_cost
            > self
                .insert_cost
                .min(self.change_type_cost)
                .min(self.change_geometry_cost)
        {
            return Err(MetricsError::Costs(
                "delete_cost must not exceed any other cost".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, MetricsError> {
        let t: Self = toml::from_str(text).map_err(|e| MetricsError::Costs(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Costs in whole microseconds so sums are exact.
    pub fn micros(&self) -> MicroCosts {
        let us = |s: f64| (s * 1e6).round() as u64;
        MicroCosts {
            insert: us(self.insert_cost),
            change_type: us(self.change_type_cost),
            change_geometry: us(self.change_geometry_cost),
            delete: us(self.delete_cost),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MicroCosts {
    pub insert: u64,
    pub change_type: u64,
    pub change_geometry: u64,
    pub delete: u64,
}

/// The properties edit distance compares: type and bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EditLabel {
    pub type_id: u16,
    pub bounds: Bounds,
}

impl MicroCosts {
    /// Cost of relabeling `a` as `b`; geometry is ignored when `relaxed`.
    pub fn change(&self, a: &EditLabel, b: &EditLabel, relaxed: bool) -> u64 {
        let mut c = 0;
        if a.type_id != b.type_id {
            c += self.change_type;
        }
        if !relaxed && a.bounds != b.bounds {
            c += self.change_geometry;
        }
        c
    }
}

/// A tree flattened in postorder for the edit-distance recursion.
struct Postorder {
    labels: Vec<EditLabel>,
    /// Postorder index of each node's leftmost leaf descendant.
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl Postorder {
    fn new(tree: &LayoutTree) -> Self {
        let n = tree.len();
        let children = tree.children();
        let mut labels = Vec::with_capacity(n);
        let mut leftmost = Vec::with_capacity(n);
        // iterative postorder: (node, next child cursor, leftmost of subtree)
        let mut stack: Vec<(usize, usize, Option<usize>)> = if n > 0 {
            vec![(0, 0, None)]
        } else {
            Vec::new()
        };
        while let Some(top) = stack.last_mut() {
            let (node, cursor, _) = *top;
            if cursor < children[node].len() {
                top.1 += 1;
                stack.push((children[node][cursor], 0, None));
                continue;
            }
            let (_, _, lm) = stack.pop().expect("non-empty stack");
            let idx = labels.len();
            let lm = lm.unwrap_or(idx);
            let nd = tree.node(node);
            labels.push(EditLabel {
                type_id: nd.type_id,
                bounds: nd.bounds,
            });
            leftmost.push(lm);
            if let Some(parent) = stack.last_mut() {
                if parent.2.is_none() {
                    parent.2 = Some(lm);
                }
            }
        }
        let mut keyroots: Vec<usize> = (0..labels.len())
            .filter(|&i| !(i + 1..labels.len()).any(|j| leftmost[j] == leftmost[i]))
            .collect();
        keyroots.sort_unstable();
        Self {
            labels,
            leftmost,
            keyroots,
        }
    }
}

/// Minimal cost, in microseconds, of an edit script turning `pred` into
/// `gold`: deleting predicted nodes, inserting missing gold nodes and
/// changing the type and/or bounds of matched nodes. Ordered trees with
/// siblings in storage order.
pub fn tree_edit_distance_micros(
    pred: &LayoutTree,
    gold: &LayoutTree,
    costs: &MicroCosts,
    relaxed: bool,
) -> u64 {
    let a = Postorder::new(pred);
    let b = Postorder::new(gold);
    let (n, m) = (a.labels.len(), b.labels.len());
    if n == 0 || m == 0 {
        return n as u64 * costs.delete + m as u64 * costs.insert;
    }
    let mut td = vec![vec![0u64; m]; n];
    let mut fd = vec![vec![0u64; m + 1]; n + 1];
    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.leftmost[i], b.leftmost[j]);
            // fd[x][y]: forest a[li..li+x) vs b[lj..lj+y)
            let (rows, cols) = (i - li + 1, j - lj + 1);
            fd[0][0] = 0;
            for x in 1..=rows {
                fd[x][0] = fd[x - 1][0] + costs.delete;
            }
            for y in 1..=cols {
                fd[0][y] = fd[0][y - 1] + costs.insert;
            }
            for x in 1..=rows {
                let ai = li + x - 1;
                for y in 1..=cols {
                    let bj = lj + y - 1;
                    let del = fd[x - 1][y] + costs.delete;
                    let ins = fd[x][y - 1] + costs.insert;
                    if a.leftmost[ai] == li && b.leftmost[bj] == lj {
                        let ch =
                            fd[x - 1][y - 1] + costs.change(&a.labels[ai], &b.labels[bj], relaxed);
                        fd[x][y] = del.min(ins).min(ch);
                        td[ai][bj] = fd[x][y];
                    } else {
                        let px = a.leftmost[ai] - li;
                        let py = b.leftmost[bj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ai][bj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// [`tree_edit_distance_micros`] in seconds.
pub fn tree_edit_distance(
    pred: &LayoutTree,
    gold: &LayoutTree,
    costs: &CostTable,
    relaxed: bool,
) -> f64 {
    tree_edit_distance_micros(pred, gold, &costs.micros(), relaxed) as f64 / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{NodeProps, TreeBuilder};

    fn props(t: u16, b: Bounds) -> NodeProps {
        NodeProps::new(t, true, b)
    }

    fn base() -> LayoutTree {
        let mut b = TreeBuilder::root(NodeProps::new(0, false, Bounds::screen()));
        b.child(0, props(1, Bounds::new(0, 0, 10, 10)));
        b.child(0, props(2, Bounds::new(0, 10, 10, 20)));
        b.build("base")
    }

    #[test]
    fn identity_is_zero() {
        assert_eq!(
            tree_edit_distance(&base(), &base(), &CostTable::default(), false),
            0.0
        );
    }

    #[test]
    fn missing_leaf_costs_one_insert() {
        let mut b = TreeBuilder::root(NodeProps::new(0, false, Bounds::screen()));
        b.child(0, props(1, Bounds::new(0, 0, 10, 10)));
        let pred = b.build("pred");
        let c = CostTable::default();
        assert_eq!(
            tree_edit_distance_micros(&pred, &base(), &c.micros(), false),
            4_400_000
        );
        assert_eq!(
            tree_edit_distance_micros(&base(), &pred, &c.micros(), false),
            100_000
        );
    }

    #[test]
    fn change_components_add() {
        let mut b = TreeBuilder::root(NodeProps::new(0, false, Bounds::screen()));
        b.child(0, props(3, Bounds::new(0, 0, 10, 11)));
        b.child(0, props(2, Bounds::new(0, 10, 10, 20)));
        let pred = b.build("pred");
        let c = CostTable::default().micros();
        // delete + insert (4.5) is cheaper than changing type and geometry (5.5)
        assert_eq!(
            tree_edit_distance_micros(&pred, &base(), &c, false),
            4_500_000
        );
        assert_eq!(
            tree_edit_distance_micros(&pred, &base(), &c, true),
            2_200_000
        );
    }

    #[test]
    fn cost_table_toml() {
        let c = CostTable::from_toml("insert_cost = 1.0\nchange_type_cost = 1.0\nchange_geometry_cost = 1.0\ndelete_cost = 0.5").unwrap();
        assert_eq!(c.delete_cost, 0.5);
        assert!(CostTable::from_toml("delete_cost = 9.0").is_err());
        assert!(CostTable::from_toml("bogus = 1").is_err());
    }
}
