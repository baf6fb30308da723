use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{HeadVars, Net};
use super::{pointer, recursive, vanilla, Model, ModelError, Variant};
use crate::layout::{traverse, LayoutTree, NodeProps, Order};
use crate::parallel::{par_map, Execution};
use crate::tensor::{Mask, Scalar, Tape, Tensor, TensorError, Var};

/// A training tree with the number of leading nodes (in `order`) that are given.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    /// Stored in depth-first preorder with siblings in reading order.
    pub tree: LayoutTree,
    pub k: usize,
    pub order: Order,
}

/// Teacher-forced prediction counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Scored positions.
    pub total: usize,
    /// Positions whose structure and type (type/bracket/EOS, terminal flag and,
    /// for the pointer decoder, parent) were all predicted correctly.
    pub structure: usize,
    /// Positions where every predicted property was correct.
    pub full: usize,
}

impl Accuracy {
    pub fn structure_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.structure as f64 / self.total as f64
        }
    }

    pub fn full_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.full as f64 / self.total as f64
        }
    }

    pub fn add(&mut self, other: &Accuracy) {
        self.total += other.total;
        self.structure += other.structure;
        self.full += other.full;
    }
}

/// Per-position targets for the six property heads.
pub(crate) struct Targets {
    kind: Vec<Option<usize>>,
    terminal: Vec<Option<usize>>,
    x: Vec<Option<usize>>,
    y: Vec<Option<usize>>,
    x2: Vec<Option<usize>>,
    y2: Vec<Option<usize>>,
}

pub(crate) struct ExampleGraph {
    pub loss: Option<Var>,
    pub scored: usize,
    pub accuracy: Accuracy,
}

impl ExampleGraph {
    pub fn merge<T: Scalar>(tape: &mut Tape<'_, T>, parts: Vec<ExampleGraph>) -> ExampleGraph {
        let losses: Vec<Var> = parts.iter().filter_map(|p| p.loss).collect();
        let mut accuracy = Accuracy::default();
        for p in &parts {
            accuracy.add(&p.accuracy);
        }
        ExampleGraph {
            loss: (!losses.is_empty()).then(|| tape.sum(&losses)),
            scored: parts.iter().map(|p| p.scored).sum(),
            accuracy,
        }
    }
}

fn argmax<T: Scalar>(row: &[T], allowed: Option<&[bool]>) -> usize {
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, v) in row.iter().enumerate() {
        if allowed.is_some_and(|a| !a[i]) {
            continue;
        }
        if *v > best_v {
            best = i;
            best_v = *v;
        }
    }
    best
}

impl Targets {
    pub fn new(n: usize) -> Self {
        Self {
            kind: vec![None; n],
            terminal: vec![None; n],
            x: vec![None; n],
            y: vec![None; n],
            x2: vec![None; n],
            y2: vec![None; n],
        }
    }

    pub fn set_node(&mut self, i: usize, p: &NodeProps) {
        self.kind[i] = Some(p.type_id as usize);
        self.terminal[i] = Some(p.terminal as usize);
        self.x[i] = Some(p.bounds.x0 as usize);
        self.y[i] = Some(p.bounds.y0 as usize);
        self.x2[i] = Some(p.bounds.x1 as usize);
        self.y2[i] = Some(p.bounds.y1 as usize);
    }

    /// A bracket or EOS step: only the type head is scored.
    pub fn set_class(&mut self, i: usize, class: usize) {
        self.kind[i] = Some(class);
    }

    /// Cross-entropy over scored positions plus teacher-forced accuracy
    /// counts. `pointer` adds the parent head: scores, parent targets and the
    /// candidate mask.
    pub fn into_graph<T: Scalar>(
        self,
        tape: &mut Tape<'_, T>,
        heads: &HeadVars,
        pointer: Option<(Var, Vec<Option<usize>>, Mask)>,
    ) -> ExampleGraph {
        let scored = self.kind.iter().filter(|t| t.is_some()).count();
        let mut accuracy = Accuracy {
            total: scored,
            ..Accuracy::default()
        };
        for i in 0..self.kind.len() {
            let Some(kind) = self.kind[i] else { continue };
            let hit = |v: Var, t: Option<usize>| {
                t.is_none_or(|t| argmax(tape.value(v).row(i), None) == t)
            };
            let mut structure =
                hit(heads.kind, Some(kind)) && hit(heads.terminal, self.terminal[i]);
            if let Some((scores, parents, mask)) = &pointer {
                if let Some(p) = parents[i] {
                    structure &= argmax(tape.value(*scores).row(i), Some(mask.row(i))) == p;
                }
            }
            let full = structure
                && hit(heads.x, self.x[i])
                && hit(heads.y, self.y[i])
                && hit(heads.x2, self.x2[i])
                && hit(heads.y2, self.y2[i]);
            accuracy.structure += structure as usize;
            accuracy.full += full as usize;
        }
        if scored == 0 {
            return ExampleGraph {
                loss: None,
                scored,
                accuracy,
            };
        }
        let mut parts = vec![tape.cross_entropy(heads.kind, self.kind, None)];
        if self.terminal.iter().any(Option::is_some) {
            parts.push(tape.cross_entropy(heads.terminal, self.terminal, None));
            parts.push(tape.cross_entropy(heads.x, self.x, None));
            parts.push(tape.cross_entropy(heads.y, self.y, None));
            parts.push(tape.cross_entropy(heads.x2, self.x2, None));
            parts.push(tape.cross_entropy(heads.y2, self.y2, None));
        }
        if let Some((scores, parents, mask)) = pointer {
            if parents.iter().any(Option::is_some) {
                parts.push(tape.cross_entropy(scores, parents, Some(&mask)));
            }
        }
        ExampleGraph {
            loss: Some(tape.sum(&parts)),
            scored,
            accuracy,
        }
    }
}

fn example_graph<T: Scalar>(
    tape: &mut Tape<'_, T>,
    net: &Net<'_>,
    ex: &Example,
    pad_to: Option<usize>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ExampleGraph, ModelError> {
    let k = ex.k.clamp(1, ex.tree.len().max(1));
    match net.cfg.variant {
        Variant::Vanilla => {
            if ex.order != Order::Dfs {
                return Err(ModelError::PrefixViolation(format!(
                    "{} prefixes cannot be linearized",
                    ex.order
                )));
            }
            vanilla::graph(tape, net, &ex.tree, k, pad_to, rng)
        }
        Variant::Pointer => pointer::graph(tape, net, &ex.tree, k, ex.order, rng),
        Variant::Recursive => {
            let mut given = vec![false; ex.tree.len()];
            for &i in &traverse(&ex.tree, ex.order)[..k] {
                given[i] = true;
            }
            recursive::graph(tape, net, &ex.tree, given, rng)
        }
    }
}

/// The mean per-position loss of one example built from caller-provided
/// parameter leaves (`params` in [`Model::tensors`] order).
pub fn example_loss<'p, T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<'p, T>,
    params: &[Var],
    ex: &Example,
) -> Result<Var, ModelError> {
    let net = Net {
        cfg: &model.config,
        ids: &model.params.ids,
        vars: params.to_vec(),
    };
    let g = example_graph(tape, &net, ex, None, None)?;
    let loss = g.loss.ok_or(ModelError::EmptyBatch)?;
    Ok(tape.scale(loss, T::one() / T::of(g.scored as f64)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub grads: bool,
    /// Vanilla only: pad every input sequence to this many positions.
    pub pad_to: Option<usize>,
    /// Enables dropout, seeding one stream per example.
    pub dropout_seed: Option<u64>,
    pub execution: Execution,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            grads: true,
            pad_to: None,
            dropout_seed: None,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Mean over scored positions of the summed per-property cross-entropies.
    pub loss: f64,
    pub scored: usize,
    pub accuracy: Accuracy,
    /// Gradient of `loss`, in [`Model::tensors`] order.
    pub grads: Option<Vec<Tensor<T>>>,
}

struct PerExample<T> {
    loss: f64,
    scored: usize,
    accuracy: Accuracy,
    grads: Option<Vec<Option<Vec<T>>>>,
}

/// Teacher-forced loss of a batch, with gradients when requested.
///
/// Examples are evaluated independently (in parallel when enabled) and their
/// contributions summed in batch order, so the result does not depend on the
/// execution mode.
pub fn teacher_forced_loss<T: Scalar>(
    model: &Model<T>,
    batch: &[Example],
    opts: &LossOptions,
) -> Result<LossOutput<T>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let indexed: Vec<(usize, &Example)> = batch.iter().enumerate().collect();
    let results = par_map(
        opts.execution,
        &indexed,
        |(i, ex)| -> Result<PerExample<T>, ModelError> {
            let mut tape = Tape::new();
            let net = Net::bind(model, &mut tape, opts.grads);
            let mut rng = opts.dropout_seed.map(|s| {
                let mut r = ChaCha8Rng::seed_from_u64(s);
                r.set_stream(*i as u64);
                r
            });
            let g = example_graph(&mut tape, &net, ex, opts.pad_to, rng.as_mut())?;
            let Some(loss) = g.loss else {
                return Ok(PerExample {
                    loss: 0.0,
                    scored: 0,
                    accuracy: g.accuracy,
                    grads: None,
                });
            };
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(TensorError::NonFinite { op: "loss" }.into());
            }
            let grads = if opts.grads {
                let gr = tape.backward(loss)?;
                Some(
                    net.vars
                        .iter()
                        .map(|v| gr.get(*v).map(<[T]>::to_vec))
                        .collect(),
                )
            } else {
                None
            };
            Ok(PerExample {
                loss: value.to_f64_lossy(),
                scored: g.scored,
                accuracy: g.accuracy,
                grads,
            })
        },
    );
    let mut total = 0.0;
    let mut scored = 0;
    let mut accuracy = Accuracy::default();
    let mut sums: Option<Vec<Vec<T>>> = opts.grads.then(|| {
        model
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect()
    });
    for r in results {
        let r = r?;
        total += r.loss;
        scored += r.scored;
        accuracy.add(&r.accuracy);
        if let (Some(sums), Some(grads)) = (sums.as_mut(), r.grads) {
            for (s, g) in sums.iter_mut().zip(grads) {
                if let Some(g) = g {
                    for (a, b) in s.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
        }
    }
    if scored == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let inv = T::one() / T::of(scored as f64);
    let grads = sums.map(|sums| {
        sums.into_iter()
            .zip(model.tensors())
            .map(|(mut s, t)| {
                s.iter_mut().for_each(|v| *v *= inv);
                Tensor::from_parts(t.shape().to_vec(), s)
            })
            .collect()
    });
    Ok(LossOutput {
        loss: total / scored as f64,
        scored,
        accuracy,
        grads,
    })
}
