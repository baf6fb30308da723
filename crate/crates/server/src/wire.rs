//! JSON wire schema shared by the HTTP service and the command line.

use std::collections::VecDeque;

use layout_core::decode::{Completion, DecodeConfig, Strategy};
use layout_core::layout::{
    check_tree, Bounds, LayoutNode, LayoutTree, NodeProps, Order, PartialTree, TypeManifest,
    GRID_HEIGHT, GRID_WIDTH, MAX_NODES,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Most candidates a request may ask for.
pub const MAX_CANDIDATES: usize = 5;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("invalid tree: {0}")]
    Tree(String),
}

fn field(path: &str, message: impl Into<String>) -> WireError {
    WireError::Field {
        path: path.to_string(),
        message: message.into(),
    }
}

/// One element: `bounds` are `[x, y, x̂, ŷ]` in grid units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireNode {
    #[serde(rename = "type")]
    pub type_name: String,
    pub bounds: [i32; 4],
    pub terminal: bool,
    #[serde(default)]
    pub children: Vec<WireNode>,
    /// Set on responses: whether the node was added by the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<bool>,
}

fn default_candidates() -> usize {
    1
}

fn default_beam_width() -> usize {
    DecodeConfig::default().beam_width
}

fn default_order() -> Order {
    Order::Dfs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CompletionRequest {
    pub root: WireNode,
    #[serde(default = "default_order")]
    pub order: Order,
    #[serde(default = "default_candidates")]
    pub num_candidates: usize,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_beam_width")]
    pub beam_width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Candidate {
    pub root: WireNode,
    pub log_prob: f64,
    pub new_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelInfo {
    pub variant: String,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompletionResponse {
    pub candidates: Vec<Candidate>,
    /// Log-probability of the best candidate.
    pub log_prob: f64,
    pub model_info: ModelInfo,
    pub timing_ms: f64,
}

/// Deepest JSON nesting a body may use: two levels per element plus the envelope.
pub const MAX_JSON_DEPTH: usize = 2 * MAX_NODES + 8;

fn json_depth(body: &[u8]) -> usize {
    let (mut depth, mut max, mut in_str, mut escaped) = (0usize, 0, false, false);
    for &b in body {
        if in_str {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' | b'[' => {
                depth += 1;
                max = max.max(depth);
            }
            b'}' | b']' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    max
}

/// Parses JSON whose nesting is bounded by [`MAX_JSON_DEPTH`], reporting the
/// path of the first bad field.
pub fn from_json<T: DeserializeOwned>(body: &[u8]) -> Result<T, WireError> {
    if json_depth(body) > MAX_JSON_DEPTH {
        return Err(field(
            "root",
            format!("nested deeper than {MAX_JSON_DEPTH} levels"),
        ));
    }
    let mut de = serde_json::Deserializer::from_slice(body);
    de.disable_recursion_limit();
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        field(&path, e.into_inner().to_string())
    })?;
    de.end().map_err(|e| field(".", e.to_string()))?;
    Ok(value)
}

/// Parses a request body, reporting the JSON path of the first bad field.
pub fn parse_request(body: &[u8]) -> Result<CompletionRequest, WireError> {
    let req: CompletionRequest = from_json(body)?;
    if !(1..=MAX_CANDIDATES).contains(&req.num_candidates) {
        return Err(field(
            "numCandidates",
            format!("must be between 1 and {MAX_CANDIDATES}"),
        ));
    }
    if req.beam_width == 0 {
        return Err(field("beamWidth", "must be at least 1"));
    }
    Ok(req)
}

impl CompletionRequest {
    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            strategy: self.strategy,
            beam_width: self.beam_width.max(self.num_candidates),
            max_new_nodes: None,
        }
    }
}

fn check_node(
    node: &WireNode,
    parent: Option<&Bounds>,
    path: &str,
    manifest: &TypeManifest,
) -> Result<(u16, Bounds), WireError> {
    let type_id = manifest.id(&node.type_name).ok_or_else(|| {
        field(
            &format!("{path}.type"),
            format!("unknown type `{}`", node.type_name),
        )
    })?;
    let [x0, y0, x1, y1] = node.bounds;
    let b = Bounds::new(x0, y0, x1, y1);
    let bounds_path = format!("{path}.bounds");
    if !b.has_area() {
        return Err(field(&bounds_path, "needs x < x̂ and y < ŷ"));
    }
    if !Bounds::screen().contains(&b) {
        return Err(field(
            &bounds_path,
            format!("outside the {GRID_WIDTH}x{GRID_HEIGHT} grid"),
        ));
    }
    if parent.is_some_and(|p| !p.contains(&b)) {
        return Err(field(&bounds_path, "outside the parent element"));
    }
    if node.terminal && !node.children.is_empty() {
        return Err(field(
            &format!("{path}.children"),
            "a terminal element has no children",
        ));
    }
    Ok((type_id, b))
}

/// Flattens a wire tree into a partial tree stored in `order`, keeping the
/// given sibling order.
pub fn to_partial(
    root: &WireNode,
    order: Order,
    manifest: &TypeManifest,
) -> Result<PartialTree, WireError> {
    struct Pending<'a> {
        node: &'a WireNode,
        parent: Option<usize>,
        depth: usize,
        path: String,
    }
    let mut nodes: Vec<LayoutNode> = Vec::new();
    let mut queue = VecDeque::from([Pending {
        node: root,
        parent: None,
        depth: 0,
        path: "root".into(),
    }]);
    while let Some(p) = match order {
        Order::Bfs => queue.pop_front(),
        Order::Dfs => queue.pop_back(),
    } {
        if nodes.len() == MAX_NODES {
            return Err(field("root", format!("more than {MAX_NODES} elements")));
        }
        let parent_bounds = p.parent.map(|i| nodes[i].bounds);
        let (type_id, bounds) = check_node(p.node, parent_bounds.as_ref(), &p.path, manifest)?;
        let index = nodes.len();
        nodes.push(LayoutNode::from_props(
            NodeProps::new(type_id, p.node.terminal, bounds),
            p.parent,
            p.depth,
        ));
        let kids = p.node.children.iter().enumerate().map(|(i, c)| Pending {
            node: c,
            parent: Some(index),
            depth: p.depth + 1,
            path: format!("{}.children[{i}]", p.path),
        });
        match order {
            Order::Bfs => queue.extend(kids),
            Order::Dfs => queue.extend(kids.rev()),
        }
    }
    let tree = LayoutTree::from_raw("request", nodes);
    check_tree(&tree).map_err(|e| WireError::Tree(e.to_string()))?;
    Ok(PartialTree::new(tree, order))
}

/// Nests a tree, flagging nodes at positions `given..` as predicted.
pub fn from_tree(tree: &LayoutTree, given: usize, manifest: &TypeManifest) -> WireNode {
    fn build(
        tree: &LayoutTree,
        children: &[Vec<usize>],
        n: usize,
        given: usize,
        manifest: &TypeManifest,
    ) -> WireNode {
        let node = tree.node(n);
        WireNode {
            type_name: manifest.name(node.type_id).unwrap_or("?").to_string(),
            bounds: node.bounds.as_array(),
            terminal: node.terminal,
            children: children[n]
                .iter()
                .map(|&c| build(tree, children, c, given, manifest))
                .collect(),
            predicted: Some(n >= given),
        }
    }
    build(tree, &tree.children(), 0, given, manifest)
}

pub fn candidate(c: &Completion, given: usize, manifest: &TypeManifest) -> Candidate {
    Candidate {
        root: from_tree(&c.tree, given, manifest),
        log_prob: c.log_prob,
        new_nodes: c.new_node_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(t: &str, bounds: [i32; 4]) -> WireNode {
        WireNode {
            type_name: t.into(),
            bounds,
            terminal: true,
            children: vec![],
            predicted: None,
        }
    }

    fn sample() -> WireNode {
        let mut inner = leaf("Toolbar", [0, 0, 72, 20]);
        inner.terminal = false;
        inner.children = vec![leaf("Text", [0, 0, 36, 20]), leaf("Icon", [36, 0, 72, 20])];
        WireNode {
            type_name: "Background Image".into(),
            bounds: [0, 0, 72, 128],
            terminal: false,
            children: vec![inner, leaf("Image", [0, 20, 72, 128])],
            predicted: None,
        }
    }

    #[test]
    fn flattening_follows_the_order() {
        let m = TypeManifest::builtin();
        let dfs = to_partial(&sample(), Order::Dfs, &m).unwrap();
        let bfs = to_partial(&sample(), Order::Bfs, &m).unwrap();
        assert!(dfs.follows(Order::Dfs) && bfs.follows(Order::Bfs));
        assert_eq!(dfs.tree.node(2).type_id, m.id("Text").unwrap());
        assert_eq!(bfs.tree.node(2).type_id, m.id("Image").unwrap());
    }

    #[test]
    fn nesting_round_trips() {
        let m = TypeManifest::builtin();
        for order in Order::ALL {
            let p = to_partial(&sample(), order, &m).unwrap();
            let mut back = from_tree(&p.tree, p.tree.len(), &m);
            fn clear(n: &mut WireNode) {
                assert_eq!(n.predicted, Some(false));
                n.predicted = None;
                n.children.iter_mut().for_each(clear);
            }
            clear(&mut back);
            assert_eq!(back, sample());
        }
    }

    #[test]
    fn bad_fields_name_their_path() {
        let m = TypeManifest::builtin();
        let mut bad = sample();
        bad.children[0].children[1].bounds = [50, 0, 40, 20];
        let err = to_partial(&bad, Order::Dfs, &m).unwrap_err().to_string();
        assert!(
            err.starts_with("root.children[0].children[1].bounds"),
            "{err}"
        );
        bad.children[0].children[1] = leaf("Hologram", [36, 0, 72, 20]);
        let err = to_partial(&bad, Order::Bfs, &m).unwrap_err().to_string();
        assert!(
            err.starts_with("root.children[0].children[1].type"),
            "{err}"
        );
    }

    #[test]
    fn request_defaults_and_limits() {
        let body = br#"{"root":{"type":"Text","bounds":[0,0,72,128],"terminal":true}}"#;
        let req = parse_request(body).unwrap();
        assert_eq!(
            (req.order, req.num_candidates, req.strategy),
            (Order::Dfs, 1, Strategy::Greedy)
        );
        let body = br#"{"root":{"type":"Text","bounds":[0,0,72],"terminal":true}}"#;
        assert!(parse_request(body)
            .unwrap_err()
            .to_string()
            .starts_with("root.bounds"));
        let body =
            br#"{"root":{"type":"Text","bounds":[0,0,72,128],"terminal":true},"numCandidates":6}"#;
        assert!(parse_request(body)
            .unwrap_err()
            .to_string()
            .starts_with("numCandidates"));
    }

    fn chain(depth: usize) -> WireNode {
        let mut node = leaf("Text", [0, 0, 72, 128]);
        for _ in 1..depth {
            node = WireNode {
                type_name: "Toolbar".into(),
                bounds: [0, 0, 72, 128],
                terminal: false,
                children: vec![node],
                predicted: None,
            };
        }
        node
    }

    #[test]
    fn deep_layouts_parse_and_deeper_bodies_are_rejected() {
        let body = serde_json::to_vec(&serde_json::json!({ "root": chain(MAX_NODES) })).unwrap();
        let req = parse_request(&body).unwrap();
        assert_eq!(req.root, chain(MAX_NODES));
        let bomb = format!("{{\"root\":{}{}", "[".repeat(100_000), "]".repeat(100_000));
        let err = parse_request(bomb.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("nested deeper"), "{err}");
        assert_eq!(json_depth(br#"{"a":"[[{\"}"}"#), 1);
    }
}
