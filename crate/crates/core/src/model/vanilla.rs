use rand_chacha::ChaCha8Rng;

use super::loss::{ExampleGraph, Targets};
use super::net::{Net, NodeInput};
use super::{ModelError, StepDistribution};
use crate::layout::{linearize_prefix, LayoutTree, Token};
use crate::tensor::{Mask, Scalar, Tape};

pub(crate) fn token_input(tok: &Token) -> NodeInput {
    match tok {
        Token::Node(p) => NodeInput::Node(*p),
        Token::Open => NodeInput::Open,
        Token::Close => NodeInput::Close,
    }
}

/// The bracket sequence of `tree` as decoder inputs, and how many leading
/// positions are given when conditioning on its first `k` depth-first nodes.
pub fn vanilla_inputs(tree: &LayoutTree, k: usize) -> (Vec<NodeInput>, usize) {
    let (tokens, given) = linearize_prefix(tree, k);
    (tokens.iter().map(token_input).collect(), given)
}

/// Teacher-forced graph: position `i` predicts token `i + 1` (EOS after the
/// last), scoring only predictions past the given prefix.
pub(crate) fn graph<T: Scalar>(
    tape: &mut Tape<'_, T>,
    net: &Net<'_>,
    tree: &LayoutTree,
    k: usize,
    pad_to: Option<usize>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ExampleGraph, ModelError> {
    let (tokens, given) = linearize_prefix(tree, k);
    let len = tokens.len();
    let mut inputs: Vec<NodeInput> = tokens.iter().map(token_input).collect();
    let total = pad_to.unwrap_or(len).max(len);
    inputs.resize(total, NodeInput::Pad);
    let mut targets = Targets::new(total);
    for i in given.saturating_sub(1)..len {
        match tokens.get(i + 1) {
            Some(Token::Node(p)) => targets.set_node(i, p),
            Some(Token::Open) => targets.set_class(i, net.cfg.open_class()),
            Some(Token::Close) => targets.set_class(i, net.cfg.close_class()),
            None => targets.set_class(i, net.cfg.eos_class()),
        }
    }
    let x = net.embed(tape, &inputs)?;
    let out = net.stack(tape, x, &Mask::causal(total), None, rng);
    let heads = net.heads(tape, out.hidden);
    Ok(targets.into_graph(tape, &heads, None))
}

/// Next-token distribution after `inputs`.
pub(crate) fn next<T: Scalar>(
    net: &Net<'_>,
    tape: &mut Tape<'_, T>,
    inputs: &[NodeInput],
) -> Result<StepDistribution, ModelError> {
    let x = net.embed(tape, inputs)?;
    let out = net.stack(tape, x, &Mask::causal(inputs.len()), None, None);
    let last = tape.slice_rows(out.hidden, inputs.len() - 1, inputs.len());
    let heads = net.heads(tape, last);
    Ok(Net::distribution(tape, &heads, 0))
}
