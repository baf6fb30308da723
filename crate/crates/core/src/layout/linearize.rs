//! Bracketed preorder linearization of layout trees.
//!
//! A parent's children are wrapped in `Open`/`Close` only when there are two
//! or more of them; a single child follows its parent bare. Whether a node
//! expects children at all is read from its terminal flag, so the bracket
//! stream plus the flags determine the tree.

use thiserror::Error;

use super::traverse::{traverse, PartialTree};
use super::tree::{LayoutNode, LayoutTree, NodeProps, Order};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Node(NodeProps),
    Open,
    Close,
}

pub type TokenSeq = Vec<Token>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DelinearizeError {
    #[error("token sequence contains no nodes")]
    EmptySequence,
}

/// Canonical bracket linearization of `tree`.
///
/// A non-terminal node without children is written as an empty group
/// (`Open Close`) so that the sequence still round-trips.
pub fn linearize(tree: &LayoutTree) -> TokenSeq {
    linearize_with(tree, &vec![false; tree.len()])
}

/// Linearization used to condition on the first `k` depth-first nodes.
///
/// Returns the full sequence and the number of leading tokens that are given
/// (everything up to and including the `k`-th node token). The strict
/// ancestors of the `k`-th node always bracket their children: at the cut
/// their final child count is unknown, so the group must be left open.
pub fn linearize_prefix(tree: &LayoutTree, k: usize) -> (TokenSeq, usize) {
    let walk = traverse(tree, Order::Dfs);
    let k = k.clamp(1, tree.len());
    let mut forced = vec![false; tree.len()];
    let mut cursor = tree.node(walk[k - 1]).parent;
    while let Some(p) = cursor {
        forced[p] = true;
        cursor = tree.node(p).parent;
    }
    let tokens = linearize_with(tree, &forced);
    let mut seen = 0;
    let mut given = tokens.len();
    for (i, tok) in tokens.iter().enumerate() {
        if matches!(tok, Token::Node(_)) {
            seen += 1;
            if seen == k {
                given = i + 1;
                break;
            }
        }
    }
    (tokens, given)
}

/// Tokens describing a depth-first partial tree, ready to be continued.
pub fn linearize_partial(partial: &PartialTree) -> TokenSeq {
    let (mut tokens, given) = linearize_prefix(&partial.tree, partial.tree.len());
    tokens.truncate(given);
    tokens
}

fn linearize_with(tree: &LayoutTree, forced_open: &[bool]) -> TokenSeq {
    let mut out = Vec::with_capacity(tree.len() * 2);
    if tree.is_empty() {
        return out;
    }
    let children = tree.children();
    // (node, entering?) work stack; `None` marks a Close.
    enum Step {
        Enter(usize),
        Close,
    }
    let mut stack = vec![Step::Enter(0)];
    while let Some(step) = stack.pop() {
        match step {
            Step::Close => out.push(Token::Close),
            Step::Enter(n) => {
                let node = tree.node(n);
                out.push(Token::Node(node.props()));
                let kids = &children[n];
                let bracket =
                    kids.len() >= 2 || forced_open[n] || (kids.is_empty() && !node.terminal);
                if bracket {
                    out.push(Token::Open);
                    stack.push(Step::Close);
                }
                stack.extend(kids.iter().rev().map(|&c| Step::Enter(c)));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Frame {
    Group(usize),
    Single(usize),
}

/// What [`BracketParser::push`] did with a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pushed {
    /// A node was appended at this index.
    Node(usize),
    /// A bracket changed the parser state.
    Bracket,
    /// The token had no valid reading and was dropped.
    Ignored,
}

/// Incremental bracket-sequence reader with a repair policy for malformed
/// input: an unmatched `Close` is ignored, groups left open are closed at the
/// end, and a bare node after a non-terminal node becomes its single child.
/// Tokens arriving after the root's subtree is complete are ignored.
#[derive(Clone, Debug, Default)]
pub struct BracketParser {
    nodes: Vec<LayoutNode>,
    frames: Vec<Frame>,
    pending: Option<usize>,
    done: bool,
}

impl BracketParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[LayoutNode] {
        &self.nodes
    }

    /// True once the root's subtree has been closed.
    pub fn is_complete(&self) -> bool {
        self.done
    }

    /// Where the next node token would attach: `Some(Some(p))` as a child of
    /// `p`, `Some(None)` as the root, `None` if it would be ignored.
    pub fn attach_point(&self) -> Option<Option<usize>> {
        if self.done {
            return None;
        }
        if self.nodes.is_empty() {
            return Some(None);
        }
        if let Some(p) = self.pending {
            return Some(Some(p));
        }
        match self.frames.last() {
            Some(Frame::Group(p)) => Some(Some(*p)),
            _ => None,
        }
    }

    /// Whether an `Open` would be accepted.
    pub fn can_open(&self) -> bool {
        !self.done && self.pending.is_some()
    }

    /// Whether a `Close` would be accepted.
    pub fn can_close(&self) -> bool {
        !self.done
            && (self.pending.is_some() || matches!(self.frames.last(), Some(Frame::Group(_))))
    }

    pub fn push(&mut self, token: &Token) -> Pushed {
        if self.done {
            return Pushed::Ignored;
        }
        match token {
            Token::Node(props) => {
                let parent = match self.attach_point() {
                    Some(p) => p,
                    None => return Pushed::Ignored,
                };
                if let Some(p) = self.pending.take() {
                    self.frames.push(Frame::Single(p));
                }
                let depth = parent.map_or(0, |p| self.nodes[p].depth + 1);
                self.nodes
                    .push(LayoutNode::from_props(*props, parent, depth));
                let idx = self.nodes.len() - 1;
                if props.terminal {
                    self.unwind();
                } else {
                    self.pending = Some(idx);
                }
                Pushed::Node(idx)
            }
            Token::Open => match self.pending.take() {
                Some(p) => {
                    self.frames.push(Frame::Group(p));
                    Pushed::Bracket
                }
                None => Pushed::Ignored,
            },
            Token::Close => {
                let mut changed = false;
                if self.pending.take().is_some() {
                    self.unwind();
                    changed = true;
                }
                if matches!(self.frames.last(), Some(Frame::Group(_))) {
                    self.frames.pop();
                    self.unwind();
                    changed = true;
                }
                if changed {
                    Pushed::Bracket
                } else {
                    Pushed::Ignored
                }
            }
        }
    }

    /// A subtree just finished: pop single-child frames whose parent is thereby complete.
    fn unwind(&mut self) {
        while let Some(Frame::Single(_)) = self.frames.last() {
            self.frames.pop();
        }
        if self.frames.is_empty() && self.pending.is_none() {
            self.done = true;
        }
    }

    pub fn finish(self, source_id: impl Into<String>) -> Result<LayoutTree, DelinearizeError> {
        if self.nodes.is_empty() {
            return Err(DelinearizeError::EmptySequence);
        }
        Ok(LayoutTree::from_raw(source_id, self.nodes))
    }
}

/// Rebuilds a tree from a (possibly malformed) token sequence.
pub fn delinearize(seq: &[Token]) -> Result<LayoutTree, DelinearizeError> {
    let mut parser = BracketParser::new();
    for tok in seq {
        parser.push(tok);
    }
    parser.finish("")
}
