//! Autoregressive completion of partial layout trees.

mod frontier;
mod repair;
mod search;
mod select;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{
    check_tree, LayoutNode, LayoutTree, Order, PartialTree, ValidationError, MAX_NODES,
};
use crate::model::{ForestList, Model, ModelError, Variant};
use crate::tensor::{Scalar, Tensor};

pub use repair::{repair, Repaired};
pub use select::{ranked, step_select, Choice};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("partial tree is invalid: {0}")]
    InvalidPartial(#[from] ValidationError),
    #[error("prefix violation: {0}")]
    PrefixViolation(String),
    #[error("beam width must be at least 1")]
    BadWidth,
    #[error("every hypothesis was pruned")]
    NoHypotheses,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Greedy,
    Beam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    /// Cap on new nodes; the tree size limit applies regardless.
    pub max_new_nodes: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            beam_width: 4,
            max_new_nodes: None,
        }
    }
}

impl DecodeConfig {
    pub fn beam(width: usize) -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_width: width,
            ..Self::default()
        }
    }

    fn budget(&self, given: usize) -> usize {
        let room = MAX_NODES.saturating_sub(given);
        self.max_new_nodes.map_or(room, |m| m.min(room))
    }
}

/// A completed tree; its first nodes are the given partial tree, unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub tree: LayoutTree,
    pub log_prob: f64,
    pub new_node_count: usize,
    /// Decoded nodes whose bounds had to be clipped or widened.
    pub repairs: usize,
    /// Decoding stopped at the node budget rather than by the model's choice.
    pub budget_exhausted: bool,
}

/// Anything that can complete partial layouts: trained decoders, or fixed
/// oracles in tests.
pub trait LayoutCompleter: Sync {
    /// Completions ranked by non-increasing log-probability.
    fn complete(
        &self,
        partial: &PartialTree,
        cfg: &DecodeConfig,
    ) -> Result<Vec<Completion>, DecodeError>;

    /// The greedy prediction of the node following `partial` in its
    /// traversal order, or `None` if the model predicts the tree is done.
    fn next_element(&self, partial: &PartialTree) -> Result<Option<LayoutNode>, DecodeError>;

    /// Whether prefixes in `order` can be conditioned on.
    fn supports(&self, order: Order) -> bool;
}

fn check_partial<T: Scalar>(model: &Model<T>, partial: &PartialTree) -> Result<(), DecodeError> {
    check_tree(&partial.tree)?;
    if model.variant() == Variant::Vanilla && !partial.follows(Order::Dfs) {
        return Err(DecodeError::PrefixViolation(
            "the vanilla decoder needs a depth-first preorder prefix".into(),
        ));
    }
    Ok(())
}

fn finish<T: Scalar>(partial: &PartialTree, hyp: search::Hypothesis<T>) -> Completion {
    let given = partial.tree.len();
    let raw = LayoutTree::from_raw(
        partial.tree.source_id.clone(),
        hyp.frontier.nodes().to_vec(),
    );
    let Repaired { tree, repairs } = repair(&raw, given);
    debug_assert!(check_tree(&tree).is_ok(), "completion must be valid");
    Completion {
        new_node_count: tree.len() - given,
        tree,
        log_prob: hyp.log_prob,
        repairs,
        budget_exhausted: hyp.frontier.budget.exhausted,
    }
}

fn run<T: Scalar>(
    model: &Model<T>,
    partial: &PartialTree,
    width: usize,
    max_new: usize,
) -> Result<Vec<Completion>, DecodeError> {
    let start = frontier::Frontier::new(model, &partial.tree, max_new)?;
    Ok(search::search(model, start, width)?
        .into_iter()
        .map(|h| finish(partial, h))
        .collect())
}

impl<T: Scalar> LayoutCompleter for Model<T> {
    fn complete(
        &self,
        partial: &PartialTree,
        cfg: &DecodeConfig,
    ) -> Result<Vec<Completion>, DecodeError> {
        check_partial(self, partial)?;
        let budget = cfg.budget(partial.tree.len());
        let greedy = run(self, partial, 1, budget)?;
        if cfg.strategy == Strategy::Greedy {
            return Ok(greedy);
        }
        if cfg.beam_width == 0 {
            return Err(DecodeError::BadWidth);
        }
        let mut out = run(self, partial, cfg.beam_width, budget)?;
        for g in greedy {
            if !out.iter().any(|c| c.tree == g.tree) {
                out.push(g);
            }
        }
        out.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        out.truncate(cfg.beam_width);
        Ok(out)
    }

    fn next_element(&self, partial: &PartialTree) -> Result<Option<LayoutNode>, DecodeError> {
        check_partial(self, partial)?;
        let given = partial.tree.len();
        if given >= MAX_NODES {
            return Ok(None);
        }
        if self.variant() != Variant::Recursive {
            let start = frontier::Frontier::new(self, &partial.tree, 1)?;
            let best = search::search(self, start, 1)?.into_iter().next();
            return Ok(best.and_then(|h| finish(partial, h).tree.nodes().get(given).copied()));
        }
        recursive_next(self, partial)
    }

    fn supports(&self, order: Order) -> bool {
        self.variant() != Variant::Vanilla || order == Order::Dfs
    }
}

/// Sibling lists that may continue after the last given node, in the order
/// the traversal would visit their next child.
fn open_lists(partial: &PartialTree) -> Vec<usize> {
    let nodes = partial.tree.nodes();
    let last = nodes.len() - 1;
    let mut out = Vec::new();
    match partial.order {
        Order::Dfs => {
            let mut cursor = Some(last);
            while let Some(n) = cursor {
                out.push(n);
                cursor = nodes[n].parent;
            }
        }
        Order::Bfs => {
            let walk = crate::layout::traverse(&partial.tree, Order::Bfs);
            let start = nodes[last].parent.unwrap_or(0);
            let pos = walk.iter().position(|&n| n == start).unwrap_or(0);
            out.extend_from_slice(&walk[pos..]);
        }
    }
    out.retain(|&n| !nodes[n].terminal);
    out
}

fn recursive_next<T: Scalar>(
    model: &Model<T>,
    partial: &PartialTree,
) -> Result<Option<LayoutNode>, DecodeError> {
    let tree = &partial.tree;
    let nodes = tree.nodes();
    let children = tree.children();
    let mut states: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
    states[0] = Some(model.recursive_root_state(nodes[0].props())?);
    let memory = |states: &[Option<Tensor<T>>], node: usize| -> Result<Tensor<T>, DecodeError> {
        let mut chain = vec![node];
        let mut cursor = nodes[node].parent;
        while let Some(p) = cursor {
            chain.push(p);
            cursor = nodes[p].parent;
        }
        let mut data = Vec::new();
        for &a in chain.iter().rev() {
            data.extend_from_slice(
                states[a]
                    .as_ref()
                    .ok_or(ModelError::MissingAncestry(a))?
                    .data(),
            );
        }
        Ok(
            Tensor::new(vec![chain.len(), model.config.hidden_dim], data)
                .map_err(ModelError::from)?,
        )
    };
    let list = |p: usize| -> ForestList<T> {
        let mut inputs = vec![nodes[p].props()];
        inputs.extend(children[p].iter().map(|&c| nodes[c].props()));
        ForestList {
            inputs,
            memory: Tensor::zeros(&[0, 0]),
        }
    };
    // Parents precede children, so one pass in storage order fills every state.
    let mut dists = vec![None; nodes.len()];
    for p in 0..nodes.len() {
        if nodes[p].terminal {
            continue;
        }
        let mut l = list(p);
        l.memory = memory(&states, p)?;
        let step = model.recursive_step(&[l])?.remove(0);
        for (j, &c) in children[p].iter().enumerate() {
            states[c] = Some(step.hidden.slice_rows(j + 1, j + 2));
        }
        dists[p] = Some(step.next);
    }
    for p in open_lists(partial) {
        let Some(dist) = &dists[p] else { continue };
        let mut allowed = vec![true; model.config.type_classes()];
        allowed[model.config.open_class()] = false;
        allowed[model.config.close_class()] = false;
        if children[p].len() >= crate::layout::MAX_CHILDREN {
            continue;
        }
        if let Some((Choice::Node(props, _), _)) = step_select(dist, &allowed, &model.config) {
            let b = repair(
                &LayoutTree::from_raw(
                    "",
                    vec![nodes[p], LayoutNode::from_props(props, Some(0), 1)],
                ),
                1,
            );
            let props = crate::layout::NodeProps {
                bounds: b.tree.node(1).bounds,
                ..props
            };
            return Ok(Some(LayoutNode::from_props(
                props,
                Some(p),
                nodes[p].depth + 1,
            )));
        }
    }
    Ok(None)
}
