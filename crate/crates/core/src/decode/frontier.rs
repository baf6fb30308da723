//! Per-variant decoding state: what the next model call needs and how a
//! chosen step changes the partial tree.

use std::sync::Arc;

use super::select::Choice;
use super::DecodeError;
use crate::layout::{
    linearize_partial, BracketParser, LayoutNode, LayoutTree, NodeProps, Pushed, Token,
    MAX_CHILDREN,
};
use crate::model::{ForestList, Model, ModelConfig, NodeInput, StepDistribution, Variant};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub(crate) struct Budget {
    pub new_nodes: usize,
    pub max_new: usize,
    pub exhausted: bool,
}

impl Budget {
    fn take(&mut self) -> bool {
        self.new_nodes += 1;
        self.exhausted = self.new_nodes >= self.max_new;
        self.exhausted
    }
}

#[derive(Clone, Debug)]
pub(crate) struct VanillaFrontier {
    parser: BracketParser,
    inputs: Vec<NodeInput>,
    fanout: Vec<usize>,
}

#[derive(Clone, Debug)]
pub(crate) struct PointerFrontier {
    nodes: Vec<LayoutNode>,
    fanout: Vec<usize>,
}

#[derive(Clone, Debug)]
struct SiblingList<T> {
    parent: usize,
    children: Vec<usize>,
    inputs: Vec<NodeProps>,
    hidden: Option<Arc<Tensor<T>>>,
    done: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct RecursiveFrontier<T> {
    nodes: Vec<LayoutNode>,
    states: Vec<Option<Arc<Tensor<T>>>>,
    depth: usize,
    lists: Vec<SiblingList<T>>,
}

#[derive(Clone, Debug)]
pub(crate) enum Kind<T> {
    Vanilla(VanillaFrontier),
    Pointer(PointerFrontier),
    Recursive(RecursiveFrontier<T>),
}

#[derive(Clone, Debug)]
pub(crate) struct Frontier<T> {
    pub kind: Kind<T>,
    pub budget: Budget,
    pub done: bool,
}

fn fanout(nodes: &[LayoutNode]) -> Vec<usize> {
    let mut f = vec![0; nodes.len()];
    for n in nodes {
        if let Some(p) = n.parent {
            f[p] += 1;
        }
    }
    f
}

fn one_row<T: Scalar>(t: &Tensor<T>, row: usize) -> Arc<Tensor<T>> {
    Arc::new(t.slice_rows(row, row + 1))
}

impl<T: Scalar> RecursiveFrontier<T> {
    fn new(model: &Model<T>, partial: &LayoutTree) -> Result<Self, DecodeError> {
        let nodes = partial.nodes().to_vec();
        let mut states = vec![None; nodes.len()];
        states[0] = Some(Arc::new(model.recursive_root_state(nodes[0].props())?));
        let mut f = Self {
            nodes,
            states,
            depth: 0,
            lists: Vec::new(),
        };
        f.lists = f.level(0);
        Ok(f)
    }

    fn level(&self, depth: usize) -> Vec<SiblingList<T>> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.depth == depth && !n.terminal)
            .map(|(i, n)| {
                let children: Vec<usize> = (i + 1..self.nodes.len())
                    .filter(|&c| self.nodes[c].parent == Some(i))
                    .collect();
                let mut inputs = vec![n.props()];
                inputs.extend(children.iter().map(|&c| self.nodes[c].props()));
                SiblingList {
                    parent: i,
                    children,
                    inputs,
                    hidden: None,
                    done: false,
                }
            })
            .collect()
    }

    fn memory(&self, node: usize) -> Result<Tensor<T>, DecodeError> {
        let mut chain = vec![node];
        let mut cursor = self.nodes[node].parent;
        while let Some(p) = cursor {
            chain.push(p);
            cursor = self.nodes[p].parent;
        }
        let mut data = Vec::new();
        let mut cols = 0;
        for &a in chain.iter().rev() {
            let s = self.states[a]
                .as_ref()
                .ok_or(crate::model::ModelError::MissingAncestry(a))?;
            cols = s.cols();
            data.extend_from_slice(s.data());
        }
        Ok(Tensor::new(vec![chain.len(), cols], data).map_err(crate::model::ModelError::from)?)
    }

    pub fn request(&self, slot: usize) -> Result<ForestList<T>, DecodeError> {
        let l = &self.lists[slot];
        Ok(ForestList {
            inputs: l.inputs.clone(),
            memory: self.memory(l.parent)?,
        })
    }

    /// Moves to the next depth once every list of the current one has ended.
    fn settle(&mut self) -> bool {
        while self.lists.iter().all(|l| l.done) {
            for l in std::mem::take(&mut self.lists) {
                if let Some(h) = &l.hidden {
                    for (j, &c) in l.children.iter().enumerate() {
                        self.states[c] = Some(one_row(h, j + 1));
                    }
                }
            }
            self.depth += 1;
            self.lists = self.level(self.depth);
            if self.lists.is_empty() {
                return true;
            }
        }
        false
    }
}

impl<T: Scalar> Frontier<T> {
    pub fn new(
        model: &Model<T>,
        partial: &LayoutTree,
        max_new: usize,
    ) -> Result<Self, DecodeError> {
        let kind = match model.variant() {
            Variant::Vanilla => {
                let mut parser = BracketParser::new();
                let mut inputs = Vec::new();
                let tokens = linearize_partial(&crate::layout::PartialTree::new(
                    partial.clone(),
                    crate::layout::Order::Dfs,
                ));
                for tok in &tokens {
                    parser.push(tok);
                    inputs.push(match tok {
                        Token::Node(p) => NodeInput::Node(*p),
                        Token::Open => NodeInput::Open,
                        Token::Close => NodeInput::Close,
                    });
                }
                Kind::Vanilla(VanillaFrontier {
                    fanout: fanout(parser.nodes()),
                    parser,
                    inputs,
                })
            }
            Variant::Pointer => {
                let nodes = partial.nodes().to_vec();
                Kind::Pointer(PointerFrontier {
                    fanout: fanout(&nodes),
                    nodes,
                })
            }
            Variant::Recursive => Kind::Recursive(RecursiveFrontier::new(model, partial)?),
        };
        let mut f = Self {
            kind,
            budget: Budget {
                new_nodes: 0,
                max_new,
                exhausted: false,
            },
            done: max_new == 0,
        };
        if let Kind::Recursive(r) = &mut f.kind {
            f.done |= r.lists.is_empty();
        }
        if let Kind::Vanilla(v) = &f.kind {
            f.done |= v.parser.is_complete();
        }
        f.budget.exhausted = max_new == 0 && !f.done_naturally();
        Ok(f)
    }

    fn done_naturally(&self) -> bool {
        match &self.kind {
            Kind::Vanilla(v) => v.parser.is_complete(),
            Kind::Pointer(_) => false,
            Kind::Recursive(r) => r.lists.is_empty(),
        }
    }

    /// Slots that need a distribution before the next decisions.
    pub fn slots(&self) -> Vec<usize> {
        if self.done {
            return Vec::new();
        }
        match &self.kind {
            Kind::Recursive(r) => (0..r.lists.len()).filter(|&s| !r.lists[s].done).collect(),
            _ => vec![0],
        }
    }

    pub fn allowed_types(&self, slot: usize, cfg: &ModelConfig) -> Vec<bool> {
        let mut allowed = vec![false; cfg.type_classes()];
        allowed[cfg.eos_class()] = true;
        let nodes_ok = match &self.kind {
            Kind::Vanilla(v) => {
                allowed[cfg.open_class()] = v.parser.can_open();
                allowed[cfg.close_class()] = v.parser.can_close();
                matches!(v.parser.attach_point(), Some(Some(p)) if v.fanout[p] < MAX_CHILDREN)
            }
            Kind::Pointer(p) => p
                .nodes
                .iter()
                .zip(&p.fanout)
                .any(|(n, f)| !n.terminal && *f < MAX_CHILDREN),
            Kind::Recursive(r) => r.lists[slot].children.len() < MAX_CHILDREN,
        };
        if nodes_ok {
            allowed[..cfg.type_count].iter_mut().for_each(|a| *a = true);
        }
        allowed
    }

    /// Parent candidates for the pointer decoder.
    pub fn parent_allowed(&self, j: usize) -> bool {
        match &self.kind {
            Kind::Pointer(p) => !p.nodes[j].terminal && p.fanout[j] < MAX_CHILDREN,
            _ => false,
        }
    }

    pub fn record_hidden(&mut self, slot: usize, hidden: Tensor<T>) {
        if let Kind::Recursive(r) = &mut self.kind {
            r.lists[slot].hidden = Some(Arc::new(hidden));
        }
    }

    pub fn apply(&mut self, slot: usize, choice: Choice) {
        if self.done {
            return;
        }
        match &mut self.kind {
            Kind::Vanilla(v) => {
                let tok = match choice {
                    Choice::Node(p, _) => Token::Node(p),
                    Choice::Open => Token::Open,
                    Choice::Close => Token::Close,
                    Choice::Eos => {
                        self.done = true;
                        return;
                    }
                };
                match v.parser.push(&tok) {
                    Pushed::Node(i) => {
                        if let Some(p) = v.parser.nodes()[i].parent {
                            v.fanout[p] += 1;
                        }
                        v.fanout.push(0);
                        v.inputs.push(NodeInput::Node(v.parser.nodes()[i].props()));
                        self.done |= self.budget.take();
                    }
                    Pushed::Bracket => {
                        v.inputs.push(if tok == Token::Open {
                            NodeInput::Open
                        } else {
                            NodeInput::Close
                        });
                    }
                    Pushed::Ignored => {}
                }
                self.done |= v.parser.is_complete();
            }
            Kind::Pointer(p) => match choice {
                Choice::Node(props, Some(parent)) => {
                    let depth = p.nodes[parent].depth + 1;
                    p.nodes
                        .push(LayoutNode::from_props(props, Some(parent), depth));
                    p.fanout[parent] += 1;
                    p.fanout.push(0);
                    self.done |= self.budget.take();
                }
                _ => self.done = true,
            },
            Kind::Recursive(r) => {
                match choice {
                    Choice::Node(props, _) => {
                        let parent = r.lists[slot].parent;
                        let idx = r.nodes.len();
                        r.nodes
                            .push(LayoutNode::from_props(props, Some(parent), r.depth + 1));
                        r.states.push(None);
                        let l = &mut r.lists[slot];
                        l.children.push(idx);
                        l.inputs.push(props);
                        self.done |= self.budget.take();
                    }
                    _ => r.lists[slot].done = true,
                }
                if !self.done {
                    self.done = r.settle();
                }
            }
        }
    }

    pub fn nodes(&self) -> &[LayoutNode] {
        match &self.kind {
            Kind::Vanilla(v) => v.parser.nodes(),
            Kind::Pointer(p) => &p.nodes,
            Kind::Recursive(r) => &r.nodes,
        }
    }
}

type Scored<T> = (StepDistribution, Option<Tensor<T>>);

/// Distributions for a batch of (frontier, slot) requests; recursive
/// requests run as one forest batch and also return the list states.
pub(crate) fn distributions<T: Scalar>(
    model: &Model<T>,
    requests: &[(&Frontier<T>, usize)],
) -> Result<Vec<Scored<T>>, DecodeError> {
    match model.variant() {
        Variant::Recursive => {
            let lists = requests
                .iter()
                .map(|(f, s)| match &f.kind {
                    Kind::Recursive(r) => r.request(*s),
                    _ => unreachable!("frontier kind follows the model variant"),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(model
                .recursive_step(&lists)?
                .into_iter()
                .map(|s| (s.next, Some(s.hidden)))
                .collect())
        }
        _ => requests
            .iter()
            .map(|(f, _)| {
                let d = match &f.kind {
                    Kind::Vanilla(v) => model.vanilla_next(&v.inputs)?,
                    Kind::Pointer(p) => model.pointer_next(&p.nodes, &|j| f.parent_allowed(j))?,
                    Kind::Recursive(_) => unreachable!("frontier kind follows the model variant"),
                };
                Ok((d, None))
            })
            .collect(),
    }
}
