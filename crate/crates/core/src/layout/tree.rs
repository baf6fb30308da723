use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Horizontal extent of the discretized design grid.
pub const GRID_WIDTH: i32 = 72;
/// Vertical extent of the discretized design grid.
pub const GRID_HEIGHT: i32 = 128;
/// Largest tree kept by ingestion and produced by decoding.
pub const MAX_NODES: usize = 100;
/// Largest number of children any single parent may have.
pub const MAX_CHILDREN: usize = 30;

/// Axis-aligned box in grid units: `(x0, y0)` top-left, `(x1, y1)` bottom-right, exclusive-end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bounds {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Bounds {
    pub const fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// The whole design canvas.
    pub const fn screen() -> Self {
        Self::new(0, 0, GRID_WIDTH, GRID_HEIGHT)
    }

    pub fn contains(&self, other: &Bounds) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn has_area(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn as_array(&self) -> [i32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// The predicted properties of a node: everything but its place in the tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeProps {
    pub type_id: u16,
    pub terminal: bool,
    pub bounds: Bounds,
}

impl NodeProps {
    pub fn new(type_id: u16, terminal: bool, bounds: Bounds) -> Self {
        Self {
            type_id,
            terminal,
            bounds,
        }
    }
}

/// One UI element of a layout tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayoutNode {
    pub type_id: u16,
    pub terminal: bool,
    pub bounds: Bounds,
    pub parent: Option<usize>,
    pub depth: usize,
}

impl LayoutNode {
    pub fn props(&self) -> NodeProps {
        NodeProps {
            type_id: self.type_id,
            terminal: self.terminal,
            bounds: self.bounds,
        }
    }

    pub fn from_props(props: NodeProps, parent: Option<usize>, depth: usize) -> Self {
        Self {
            type_id: props.type_id,
            terminal: props.terminal,
            bounds: props.bounds,
            parent,
            depth,
        }
    }
}

/// Traversal order used to build partial trees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Bfs,
    Dfs,
}

impl Order {
    pub const ALL: [Order; 2] = [Order::Bfs, Order::Dfs];

    pub fn as_str(self) -> &'static str {
        match self {
            Order::Bfs => "bfs",
            Order::Dfs => "dfs",
        }
    }
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Order {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bfs" => Ok(Order::Bfs),
            "dfs" => Ok(Order::Dfs),
            other => Err(format!(
                "unknown traversal order `{other}` (expected bfs or dfs)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("tree has no nodes")]
    Empty,
    #[error("node {node}: {reason}")]
    ContainmentViolation { node: usize, reason: String },
    #[error("tree has {count} nodes (limit {MAX_NODES})")]
    SizeLimit { count: usize },
    #[error("node {node} has {count} children (limit {MAX_CHILDREN})")]
    FanoutLimit { node: usize, count: usize },
    #[error("node {node} is stored before its parent")]
    OrderViolation { node: usize },
    #[error("node {node}: {reason}")]
    Structure { node: usize, reason: String },
}

/// A rooted, ordered layout tree.
///
/// Nodes are stored so that parents precede their children; the children of a
/// node are ordered by storage position.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayoutTree {
    pub source_id: String,
    nodes: Vec<LayoutNode>,
}

impl LayoutTree {
    /// Wraps nodes without checking any invariant; see [`validate_tree`].
    pub fn from_raw(source_id: impl Into<String>, nodes: Vec<LayoutNode>) -> Self {
        Self {
            source_id: source_id.into(),
            nodes,
        }
    }

    pub fn nodes(&self) -> &[LayoutNode] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &LayoutNode {
        &self.nodes[index]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn into_nodes(self) -> Vec<LayoutNode> {
        self.nodes
    }

    /// Children of every node, in sibling order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                if p < out.len() {
                    out[p].push(i);
                }
            }
        }
        out
    }

    /// Number of levels (a lone root has depth 1).
    pub fn levels(&self) -> usize {
        self.nodes.iter().map(|n| n.depth + 1).max().unwrap_or(0)
    }

    /// Rebuilds the tree with nodes stored in the order given by `perm`
    /// (a permutation listing old indices), remapping parent links.
    ///
    /// `perm` must list every parent before its children.
    pub fn permuted(&self, perm: &[usize]) -> LayoutTree {
        let mut new_index = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in perm.iter().enumerate() {
            new_index[old] = new;
        }
        let nodes = perm
            .iter()
            .map(|&old| {
                let n = self.nodes[old];
                LayoutNode {
                    parent: n.parent.map(|p| new_index[p]),
                    ..n
                }
            })
            .collect();
        LayoutTree {
            source_id: self.source_id.clone(),
            nodes,
        }
    }
}

/// Incremental constructor that fills in parent links and depths.
#[derive(Debug, Default, Clone)]
pub struct TreeBuilder {
    nodes: Vec<LayoutNode>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(props: NodeProps) -> Self {
        Self {
            nodes: vec![LayoutNode::from_props(props, None, 0)],
        }
    }

    /// Appends a child of `parent` and returns its index.
    pub fn child(&mut self, parent: usize, props: NodeProps) -> usize {
        let depth = self.nodes[parent].depth + 1;
        self.nodes
            .push(LayoutNode::from_props(props, Some(parent), depth));
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn build(self, source_id: impl Into<String>) -> LayoutTree {
        LayoutTree::from_raw(source_id, self.nodes)
    }
}

/// Checks every layout-tree invariant, returning the tree unchanged on success.
pub fn validate_tree(tree: LayoutTree) -> Result<LayoutTree, ValidationError> {
    check_tree(&tree)?;
    Ok(tree)
}

/// Borrowing form of [`validate_tree`].
pub fn check_tree(tree: &LayoutTree) -> Result<(), ValidationError> {
    let nodes = tree.nodes();
    if nodes.is_empty() {
        return Err(ValidationError::Empty);
    }
    if nodes.len() > MAX_NODES {
        return Err(ValidationError::SizeLimit { count: nodes.len() });
    }
    let screen = Bounds::screen();
    let mut fanout = vec![0usize; nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        if !n.bounds.has_area() {
            return Err(ValidationError::ContainmentViolation {
                node: i,
                reason: format!("degenerate bounds {:?}", n.bounds.as_array()),
            });
        }
        if !screen.contains(&n.bounds) {
            return Err(ValidationError::ContainmentViolation {
                node: i,
                reason: format!("bounds {:?} are out of screen", n.bounds.as_array()),
            });
        }
        match (i, n.parent) {
            (0, None) => {
                if n.depth != 0 {
                    return Err(ValidationError::Structure {
                        node: 0,
                        reason: "root depth must be 0".into(),
                    });
                }
            }
            (0, Some(_)) => {
                return Err(ValidationError::Structure {
                    node: 0,
                    reason: "root has a parent".into(),
                });
            }
            (_, None) => {
                return Err(ValidationError::Structure {
                    node: i,
                    reason: "second root".into(),
                });
            }
            (_, Some(p)) => {
                if p >= i {
                    return Err(ValidationError::OrderViolation { node: i });
                }
                let parent = &nodes[p];
                if parent.terminal {
                    return Err(ValidationError::Structure {
                        node: p,
                        reason: "terminal node has children".into(),
                    });
                }
                if n.depth != parent.depth + 1 {
                    return Err(ValidationError::Structure {
                        node: i,
                        reason: format!("depth {} but parent depth {}", n.depth, parent.depth),
                    });
                }
                if !parent.bounds.contains(&n.bounds) {
                    return Err(ValidationError::ContainmentViolation {
                        node: i,
                        reason: format!(
                            "bounds {:?} outside parent {:?}",
                            n.bounds.as_array(),
                            parent.bounds.as_array()
                        ),
                    });
                }
                fanout[p] += 1;
                if fanout[p] > MAX_CHILDREN {
                    return Err(ValidationError::FanoutLimit {
                        node: p,
                        count: fanout[p],
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn props(b: Bounds, terminal: bool) -> NodeProps {
        NodeProps::new(0, terminal, b)
    }

    #[test]
    fn accepts_contained_child() {
        let mut b = TreeBuilder::root(props(Bounds::screen(), false));
        b.child(0, props(Bounds::new(0, 0, 36, 64), true));
        assert!(validate_tree(b.build("t")).is_ok());
    }

    #[test]
    fn rejects_child_outside_parent() {
        let mut b = TreeBuilder::root(props(Bounds::screen(), false));
        b.child(0, props(Bounds::new(0, 0, 80, 64), true));
        assert!(matches!(
            validate_tree(b.build("t")),
            Err(ValidationError::ContainmentViolation { node: 1, .. })
        ));
    }

    #[test]
    fn rejects_chain_of_101() {
        let mut b = TreeBuilder::root(props(Bounds::screen(), false));
        for i in 0..100 {
            b.child(i, props(Bounds::screen(), i == 99));
        }
        assert_eq!(b.len(), 101);
        assert_eq!(
            validate_tree(b.build("t")),
            Err(ValidationError::SizeLimit { count: 101 })
        );
    }

    #[test]
    fn rejects_wide_fanout() {
        let mut b = TreeBuilder::root(props(Bounds::screen(), false));
        for _ in 0..31 {
            b.child(0, props(Bounds::new(0, 0, 1, 1), true));
        }
        assert_eq!(
            validate_tree(b.build("t")),
            Err(ValidationError::FanoutLimit { node: 0, count: 31 })
        );
    }

    #[test]
    fn rejects_child_before_parent() {
        let root = LayoutNode::from_props(props(Bounds::screen(), false), None, 0);
        let a = LayoutNode::from_props(props(Bounds::screen(), true), Some(2), 2);
        let b = LayoutNode::from_props(props(Bounds::screen(), false), Some(0), 1);
        let t = LayoutTree::from_raw("t", vec![root, a, b]);
        assert_eq!(
            validate_tree(t),
            Err(ValidationError::OrderViolation { node: 1 })
        );
    }

    #[test]
    fn rejects_terminal_parent_and_bad_depth() {
        let mut b = TreeBuilder::root(props(Bounds::screen(), true));
        b.child(0, props(Bounds::screen(), true));
        assert!(matches!(
            validate_tree(b.build("t")),
            Err(ValidationError::Structure { node: 0, .. })
        ));

        let root = LayoutNode::from_props(props(Bounds::screen(), false), None, 0);
        let a = LayoutNode::from_props(props(Bounds::screen(), true), Some(0), 3);
        assert!(matches!(
            validate_tree(LayoutTree::from_raw("t", vec![root, a])),
            Err(ValidationError::Structure { node: 1, .. })
        ));
    }

    #[test]
    fn permuted_remaps_parents() {
        let mut b = TreeBuilder::root(props(Bounds::screen(), false));
        let a = b.child(0, props(Bounds::screen(), false));
        b.child(0, props(Bounds::screen(), true));
        b.child(a, props(Bounds::screen(), true));
        let t = b.build("t");
        let p = t.permuted(&[0, 1, 3, 2]);
        assert_eq!(p.node(2).parent, Some(1));
        assert_eq!(p.node(3).parent, Some(0));
        assert!(check_tree(&p).is_ok());
    }
}
