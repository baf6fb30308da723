//! Top-down decoding of sibling lists.
//!
//! Each non-terminal node `P` owns a list `[P, c1, .., cm]` run through the
//! shared stack with causal self-attention over the list and cross-attention
//! over the stored states of `P` and its ancestors. A node's stored state is
//! the final hidden state at its own position in its parent's list; the
//! root's state comes from a pass over `[root]` with no memory. Lists whose
//! parents sit at the same depth are independent given the shallower states,
//! so each depth level runs as one block-diagonal batch, also across trees.

use rand_chacha::ChaCha8Rng;

use super::loss::{ExampleGraph, Targets};
use super::net::{Net, NodeInput};
use super::{Model, ModelError, StepDistribution};
use crate::layout::{LayoutTree, NodeProps};
use crate::tensor::{Mask, Scalar, Tape, Tensor, Var};

/// Runs a batch of lists through the stack. `memory` holds the concatenated
/// ancestry rows and the number of rows belonging to each list.
fn run_lists<T: Scalar>(
    tape: &mut Tape<'_, T>,
    net: &Net<'_>,
    lists: &[Vec<NodeInput>],
    memory: Option<(Var, &[usize])>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Vec<usize>), ModelError> {
    let lens: Vec<usize> = lists.iter().map(Vec::len).collect();
    let mut offsets = Vec::with_capacity(lists.len());
    let mut acc = 0;
    for l in &lens {
        offsets.push(acc);
        acc += l;
    }
    let inputs: Vec<NodeInput> = lists.iter().flatten().copied().collect();
    let x = net.embed(tape, &inputs)?;
    let self_mask = Mask::block_causal(&lens);
    let hidden = match memory {
        Some((mem, mem_lens)) => {
            let row_list: Vec<usize> = lens
                .iter()
                .enumerate()
                .flat_map(|(b, &l)| std::iter::repeat_n(b, l))
                .collect();
            let mem_list: Vec<usize> = mem_lens
                .iter()
                .enumerate()
                .flat_map(|(b, &l)| std::iter::repeat_n(b, l))
                .collect();
            let cross = Mask::from_fn(row_list.len(), mem_list.len(), |r, c| {
                row_list[r] == mem_list[c]
            });
            net.stack(tape, x, &self_mask, Some((mem, &cross)), rng)
                .hidden
        }
        None => net.stack(tape, x, &self_mask, None, rng).hidden,
    };
    Ok((hidden, offsets))
}

struct ForestTree<'a> {
    tree: &'a LayoutTree,
    /// Children scored as predictions (`None`: all).
    given: Option<Vec<bool>>,
}

struct LevelRecord {
    /// (tree, parent node, first row in the level's hidden states, children)
    lists: Vec<(usize, usize, usize, Vec<usize>)>,
    heads: super::net::HeadVars,
}

struct ForestPass {
    levels: Vec<LevelRecord>,
    loss_parts: Vec<ExampleGraph>,
}

/// Teacher-forced forward over a forest, level by level.
fn forest_pass<T: Scalar>(
    tape: &mut Tape<'_, T>,
    net: &Net<'_>,
    forest: &[ForestTree<'_>],
    mut rng: Option<&mut ChaCha8Rng>,
    with_loss: bool,
) -> Result<ForestPass, ModelError> {
    let cfg = net.cfg;
    let roots: Vec<Vec<NodeInput>> = forest
        .iter()
        .map(|f| vec![NodeInput::Node(f.tree.node(0).props())])
        .collect();
    let (root_hidden, _) = run_lists(tape, net, &roots, None, rng.as_deref_mut())?;
    // Cumulative state table and each node's row in it.
    let mut table = root_hidden;
    let mut table_rows = forest.len();
    let mut row_of: Vec<Vec<Option<usize>>> =
        forest.iter().map(|f| vec![None; f.tree.len()]).collect();
    for (t, rows) in row_of.iter_mut().enumerate() {
        rows[0] = Some(t);
    }
    let children: Vec<Vec<Vec<usize>>> = forest.iter().map(|f| f.tree.children()).collect();
    let max_depth = forest.iter().map(|f| f.tree.levels()).max().unwrap_or(0);
    let mut levels = Vec::new();
    let mut loss_parts = Vec::new();
    for depth in 0..max_depth {
        let mut lists = Vec::new();
        let mut inputs = Vec::new();
        let mut mem_idx = Vec::new();
        let mut mem_lens = Vec::new();
        for (t, f) in forest.iter().enumerate() {
            for (i, node) in f.tree.nodes().iter().enumerate() {
                if node.depth != depth || node.terminal {
                    continue;
                }
                let kids = children[t][i].clone();
                let mut list = vec![NodeInput::Node(node.props())];
                list.extend(
                    kids.iter()
                        .map(|&c| NodeInput::Node(f.tree.node(c).props())),
                );
                let mut chain = vec![i];
                let mut cursor = node.parent;
                while let Some(p) = cursor {
                    chain.push(p);
                    cursor = f.tree.node(p).parent;
                }
                chain.reverse();
                for a in &chain {
                    mem_idx.push(Some(row_of[t][*a].ok_or(ModelError::MissingAncestry(*a))?));
                }
                mem_lens.push(chain.len());
                lists.push((t, i, kids));
                inputs.push(list);
            }
        }
        if lists.is_empty() {
            continue;
        }
        let mem = tape.gather_rows(table, mem_idx);
        let (hidden, offsets) = run_lists(
            tape,
            net,
            &inputs,
            Some((mem, &mem_lens)),
            rng.as_deref_mut(),
        )?;
        let heads = net.heads(tape, hidden);
        let total: usize = inputs.iter().map(Vec::len).sum();
        if with_loss {
            let mut targets = Targets::new(total);
            for ((t, _, kids), &off) in lists.iter().zip(&offsets) {
                let given = forest[*t].given.as_deref();
                for (j, &c) in kids.iter().enumerate() {
                    if given.is_none_or(|g| !g[c]) {
                        targets.set_node(off + j, &forest[*t].tree.node(c).props());
                    }
                }
                targets.set_class(off + kids.len(), cfg.eos_class());
            }
            loss_parts.push(targets.into_graph(tape, &heads, None));
        }
        for ((t, _, kids), &off) in lists.iter().zip(&offsets) {
            for (j, &c) in kids.iter().enumerate() {
                row_of[*t][c] = Some(table_rows + off + 1 + j);
            }
        }
        table = tape.concat_rows(&[table, hidden]);
        table_rows += total;
        levels.push(LevelRecord {
            lists: lists
                .into_iter()
                .zip(offsets)
                .map(|((t, p, kids), off)| (t, p, off, kids))
                .collect(),
            heads,
        });
    }
    Ok(ForestPass { levels, loss_parts })
}

pub(crate) fn graph<T: Scalar>(
    tape: &mut Tape<'_, T>,
    net: &Net<'_>,
    tree: &LayoutTree,
    given: Vec<bool>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ExampleGraph, ModelError> {
    let forest = [ForestTree {
        tree,
        given: Some(given),
    }];
    let pass = forest_pass(tape, net, &forest, rng, true)?;
    Ok(ExampleGraph::merge(tape, pass.loss_parts))
}

/// Teacher-forced distributions for one parent's sibling list.
#[derive(Clone, Debug)]
pub struct ListDistributions {
    pub parent: usize,
    /// Entry `j` predicts child `j + 1` (the last entry predicts the list's EOS).
    pub steps: Vec<StepDistribution>,
}

/// Input to one step of list decoding.
#[derive(Clone, Debug)]
pub struct ForestList<T> {
    /// The parent followed by the children decoded so far.
    pub inputs: Vec<NodeProps>,
    /// Stored states of the ancestry, root first, ending with the parent's.
    pub memory: Tensor<T>,
}

/// Hidden states produced by a list step.
#[derive(Clone, Debug)]
pub struct RecursiveState<T> {
    /// Distribution of the next child (or EOS) of the list.
    pub next: StepDistribution,
    /// Final hidden state at every list position.
    pub hidden: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    fn expect(&self, v: super::Variant) -> Result<(), ModelError> {
        if self.config.variant != v {
            return Err(ModelError::WrongVariant {
                expected: v,
                found: self.config.variant,
            });
        }
        Ok(())
    }

    /// Teacher-forced list distributions for every tree, computed as one
    /// forest (all trees batched per depth level).
    pub fn recursive_forest(
        &self,
        trees: &[&LayoutTree],
    ) -> Result<Vec<Vec<ListDistributions>>, ModelError> {
        self.expect(super::Variant::Recursive)?;
        let mut tape = Tape::new();
        let net = Net::bind(self, &mut tape, false);
        let forest: Vec<ForestTree<'_>> = trees
            .iter()
            .map(|t| ForestTree {
                tree: t,
                given: None,
            })
            .collect();
        let pass = forest_pass(&mut tape, &net, &forest, None, false)?;
        let mut out: Vec<Vec<ListDistributions>> = vec![Vec::new(); trees.len()];
        for level in &pass.levels {
            for (t, parent, off, kids) in &level.lists {
                let steps = (0..=kids.len())
                    .map(|j| Net::distribution(&tape, &level.heads, off + j))
                    .collect();
                out[*t].push(ListDistributions {
                    parent: *parent,
                    steps,
                });
            }
        }
        for lists in &mut out {
            lists.sort_by_key(|l| l.parent);
        }
        Ok(out)
    }

    /// Final hidden state of the root alone; the first ancestry entry of every list.
    pub fn recursive_root_state(&self, root: NodeProps) -> Result<Tensor<T>, ModelError> {
        self.expect(super::Variant::Recursive)?;
        let mut tape = Tape::new();
        let net = Net::bind(self, &mut tape, false);
        let (hidden, _) = run_lists(&mut tape, &net, &[vec![NodeInput::Node(root)]], None, None)?;
        Ok(tape.value(hidden).clone())
    }

    /// One decoding step for each list, batched.
    pub fn recursive_step(
        &self,
        lists: &[ForestList<T>],
    ) -> Result<Vec<RecursiveState<T>>, ModelError> {
        self.expect(super::Variant::Recursive)?;
        if lists.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let net = Net::bind(self, &mut tape, false);
        let mut mem_lens = Vec::with_capacity(lists.len());
        let mut mem_rows = Vec::new();
        for (i, l) in lists.iter().enumerate() {
            if l.memory.shape().len() != 2
                || l.memory.rows() == 0
                || l.memory.cols() != self.config.hidden_dim
            {
                return Err(ModelError::MissingAncestry(i));
            }
            mem_lens.push(l.memory.rows());
            mem_rows.extend_from_slice(l.memory.data());
        }
        let total_mem: usize = mem_lens.iter().sum();
        let mem = tape.constant(Tensor::new(
            vec![total_mem, self.config.hidden_dim],
            mem_rows,
        )?);
        let inputs: Vec<Vec<NodeInput>> = lists
            .iter()
            .map(|l| l.inputs.iter().map(|p| NodeInput::Node(*p)).collect())
            .collect();
        let (hidden, offsets) = run_lists(&mut tape, &net, &inputs, Some((mem, &mem_lens)), None)?;
        let last: Vec<Option<usize>> = offsets
            .iter()
            .zip(&inputs)
            .map(|(o, l)| Some(o + l.len() - 1))
            .collect();
        let last_rows = tape.gather_rows(hidden, last);
        let heads = net.heads(&mut tape, last_rows);
        let hv = tape.value(hidden);
        Ok(offsets
            .iter()
            .zip(&inputs)
            .enumerate()
            .map(|(b, (&o, l))| RecursiveState {
                next: Net::distribution(&tape, &heads, b),
                hidden: hv.slice_rows(o, o + l.len()),
            })
            .collect())
    }
}
