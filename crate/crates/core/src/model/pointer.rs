use rand_chacha::ChaCha8Rng;

use super::loss::{ExampleGraph, Targets};
use super::net::{Net, NodeInput};
use super::{log_softmax_masked, ModelError, StepDistribution};
use crate::layout::{reorder, LayoutNode, LayoutTree, Order};
use crate::tensor::{Mask, Scalar, Tape};

/// `tree` with nodes stored in `order` traversal order, the pointer decoder's sequence.
pub fn pointer_sequence(tree: &LayoutTree, order: Order) -> LayoutTree {
    reorder(tree, order)
}

/// Which earlier positions may be the parent of the node predicted at each position.
pub(crate) fn parent_mask(nodes: &[LayoutNode], masked: bool) -> Mask {
    Mask::from_fn(nodes.len(), nodes.len(), |p, j| {
        j <= p && (!masked || !nodes[j].terminal)
    })
}

/// Teacher-forced graph: position `p` predicts node `p + 1` (EOS after the
/// last) including its parent position; positions before the `k`-th node
/// are given.
pub(crate) fn graph<T: Scalar>(
    tape: &mut Tape<'_, T>,
    net: &Net<'_>,
    tree: &LayoutTree,
    k: usize,
    order: Order,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ExampleGraph, ModelError> {
    let seq = pointer_sequence(tree, order);
    let nodes = seq.nodes();
    let n = nodes.len();
    let mut targets = Targets::new(n);
    let mut parents = vec![None; n];
    for (p, parent) in parents.iter_mut().enumerate().skip(k.max(1) - 1) {
        match nodes.get(p + 1) {
            Some(node) => {
                targets.set_node(p, &node.props());
                *parent = node.parent;
            }
            None => targets.set_class(p, net.cfg.eos_class()),
        }
    }
    let inputs: Vec<NodeInput> = nodes.iter().map(|n| NodeInput::Node(n.props())).collect();
    let x = net.embed(tape, &inputs)?;
    let out = net.stack(tape, x, &Mask::causal(n), None, rng);
    let heads = net.heads(tape, out.hidden);
    let scores = tape.matmul_t(out.hidden, out.hidden);
    let mask = parent_mask(nodes, net.cfg.parent_mask);
    Ok(targets.into_graph(tape, &heads, Some((scores, parents, mask))))
}

/// Distribution of the node following `nodes` (stored in decoding order),
/// including its parent position among them.
pub(crate) fn next<T: Scalar>(
    net: &Net<'_>,
    tape: &mut Tape<'_, T>,
    nodes: &[LayoutNode],
    allowed_parent: &dyn Fn(usize) -> bool,
) -> Result<StepDistribution, ModelError> {
    if nodes.is_empty() {
        return Err(ModelError::NoCandidates);
    }
    let inputs: Vec<NodeInput> = nodes.iter().map(|n| NodeInput::Node(n.props())).collect();
    let n = inputs.len();
    let x = net.embed(tape, &inputs)?;
    let out = net.stack(tape, x, &Mask::causal(n), None, None);
    let last = tape.slice_rows(out.hidden, n - 1, n);
    let heads = net.heads(tape, last);
    let scores = tape.matmul_t(last, out.hidden);
    let mut dist = Net::distribution(tape, &heads, 0);
    let allowed: Vec<bool> = (0..n)
        .map(|j| (!net.cfg.parent_mask || !nodes[j].terminal) && allowed_parent(j))
        .collect();
    dist.parent_logp = Some(log_softmax_masked(tape.value(scores).row(0), &allowed));
    Ok(dist)
}
