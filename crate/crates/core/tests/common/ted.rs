//! Brute-force ordered tree edit distance: shortest edit scripts found by
//! Dijkstra over every labeled ordered forest up to a node limit.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use layout_core::layout::{Bounds, LayoutNode, LayoutTree, NodeProps};
use layout_core::metrics::{EditLabel, MicroCosts};

/// A forest in preorder: (label, subtree size) per node.
pub type Forest = Vec<(u8, u8)>;

/// Label `l` as node properties: labels differ in type, geometry or both.
pub fn label_props(l: u8) -> (u16, Bounds) {
    match l {
        0 => (0, Bounds::new(0, 0, 10, 10)),
        1 => (1, Bounds::new(0, 0, 10, 10)),
        _ => (0, Bounds::new(0, 0, 20, 10)),
    }
}

fn edit_label(l: u8) -> EditLabel {
    let (type_id, bounds) = label_props(l);
    EditLabel { type_id, bounds }
}

/// Top-level subtree start positions of the children of `parent` (`None`: forest roots).
fn child_starts(f: &Forest, parent: Option<usize>) -> Vec<usize> {
    let (mut i, end) = match parent {
        Some(p) => (p + 1, p + f[p].1 as usize),
        None => (0, f.len()),
    };
    let mut out = Vec::new();
    while i < end {
        out.push(i);
        i += f[i].1 as usize;
    }
    out
}

fn ancestors(f: &Forest, i: usize) -> Vec<usize> {
    (0..i).filter(|&a| a + f[a].1 as usize > i).collect()
}

/// Every forest reachable by one edit, with its cost.
fn neighbours(f: &Forest, labels: u8, max_nodes: usize, c: &MicroCosts) -> Vec<(Forest, u64)> {
    let mut out = Vec::new();
    for i in 0..f.len() {
        for l in 0..labels {
            if l != f[i].0 {
                let mut g = f.clone();
                g[i].0 = l;
                out.push((g, c.change(&edit_label(f[i].0), &edit_label(l), false)));
            }
        }
        let mut g = f.clone();
        for a in ancestors(f, i) {
            g[a].1 -= 1;
        }
        g.remove(i);
        out.push((g, c.delete));
    }
    if f.len() < max_nodes {
        let parents: Vec<Option<usize>> = std::iter::once(None)
            .chain((0..f.len()).map(Some))
            .collect();
        for p in parents {
            let kids = child_starts(f, p);
            let insert_at = |j: usize| -> usize {
                kids.get(j)
                    .copied()
                    .unwrap_or_else(|| p.map_or(f.len(), |p| p + f[p].1 as usize))
            };
            for a in 0..=kids.len() {
                for b in a..=kids.len() {
                    let pos = insert_at(a);
                    let size = 1 + (a..b).map(|j| f[kids[j]].1 as usize).sum::<usize>();
                    for l in 0..labels {
                        let mut g = f.clone();
                        if let Some(p) = p {
                            g[p].1 += 1;
                            for anc in ancestors(f, p) {
                                g[anc].1 += 1;
                            }
                        }
                        g.insert(pos, (l, size as u8));
                        out.push((g, c.insert));
                    }
                }
            }
        }
    }
    out
}

/// All ordered trees (single root) with 1..=max_nodes nodes over `labels` labels.
pub fn all_trees(max_nodes: usize, labels: u8) -> Vec<Forest> {
    // shapes as preorder size sequences, then all labelings
    fn forests(n: usize) -> Vec<Vec<u8>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for first in 1..=n {
            for head in trees(first) {
                for tail in forests(n - first) {
                    let mut v = head.clone();
                    v.extend(tail);
                    out.push(v);
                }
            }
        }
        out
    }
    fn trees(n: usize) -> Vec<Vec<u8>> {
        forests(n - 1)
            .into_iter()
            .map(|kids| {
                let mut v = vec![n as u8];
                v.extend(kids);
                v
            })
            .collect()
    }
    let mut out = Vec::new();
    for n in 1..=max_nodes {
        for shape in trees(n) {
            let combos = (labels as usize).pow(n as u32);
            for mut code in 0..combos {
                let f: Forest = shape
                    .iter()
                    .map(|&s| {
                        let l = (code % labels as usize) as u8;
                        code /= labels as usize;
                        (l, s)
                    })
                    .collect();
                out.push(f);
            }
        }
    }
    out
}

/// The forest as a layout tree in preorder storage.
pub fn to_tree(f: &Forest) -> LayoutTree {
    let mut nodes = Vec::with_capacity(f.len());
    for (i, &(l, _)) in f.iter().enumerate() {
        let parent = ancestors(f, i).last().copied();
        let depth = ancestors(f, i).len();
        let (t, b) = label_props(l);
        nodes.push(LayoutNode::from_props(
            NodeProps::new(t, false, b),
            parent,
            depth,
        ));
    }
    LayoutTree::from_raw("oracle", nodes)
}

/// The state graph of all forests with at most `max_nodes` nodes.
pub struct ScriptGraph {
    pub index: HashMap<Forest, usize>,
    edges: Vec<Vec<(usize, u64)>>,
}

impl ScriptGraph {
    pub fn new(max_nodes: usize, labels: u8, costs: &MicroCosts) -> Self {
        let mut index: HashMap<Forest, usize> = HashMap::new();
        let mut states: Vec<Forest> = vec![Vec::new()];
        index.insert(Vec::new(), 0);
        let mut edges = Vec::new();
        let mut i = 0;
        while i < states.len() {
            let mut out = Vec::new();
            for (g, c) in neighbours(&states[i], labels, max_nodes, costs) {
                let next = states.len();
                let j = *index.entry(g.clone()).or_insert_with(|| {
                    states.push(g);
                    next
                });
                out.push((j, c));
            }
            edges.push(out);
            i += 1;
        }
        Self { index, edges }
    }

    /// Cheapest edit script cost from `source` to every state.
    pub fn distances(&self, source: &Forest) -> Vec<u64> {
        let mut dist = vec![u64::MAX; self.edges.len()];
        let s = self.index[source];
        dist[s] = 0;
        let mut heap = BinaryHeap::from([Reverse((0u64, s))]);
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, c) in &self.edges[u] {
                let nd = d + c;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        dist
    }
}
