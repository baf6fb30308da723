mod common;

use common::grad::{decoder_loss_check, three_node_tree};
use common::{small_tree, synthetic};
use layout_core::layout::{Bounds, LayoutTree, NodeProps, Order, TreeBuilder};
use layout_core::model::{
    embed_node, teacher_forced_loss, vanilla_inputs, Example, LossOptions, Model, ModelConfig,
    NodeInput, StepDistribution, Variant, X_VOCAB, Y_VOCAB,
};
use layout_core::tensor::Tensor;

fn model(variant: Variant) -> Model<f64> {
    Model::init(ModelConfig {
        seed: 11,
        ..tiny(variant)
    })
    .unwrap()
}

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        hidden_dim: 16,
        layers: 2,
        heads: 2,
        ffn_dim: 32,
        ..ModelConfig::desk(variant)
    }
}

fn node(t: u16, terminal: bool, b: Bounds) -> NodeProps {
    NodeProps::new(t, terminal, b)
}

fn assert_normalized(d: &StepDistribution) {
    for head in d.heads() {
        let finite: Vec<f64> = head.iter().copied().filter(|v| v.is_finite()).collect();
        assert!(!finite.is_empty());
        assert!(head
            .iter()
            .all(|v| v.is_finite() || *v == f64::NEG_INFINITY));
        let total: f64 = finite.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-5, "head sums to {total}");
    }
}

#[test]
fn head_widths_follow_the_vocabularies() {
    let m = model(Variant::Vanilla);
    let d = m
        .vanilla_next(&[NodeInput::Node(small_tree().node(0).props())])
        .unwrap();
    assert_eq!(d.type_logp.len(), 25 + 3);
    assert_eq!(d.terminal_logp.len(), 2);
    assert_eq!((d.x_logp.len(), d.x2_logp.len()), (73, 73));
    assert_eq!((d.y_logp.len(), d.y2_logp.len()), (129, 129));
    assert_eq!((X_VOCAB, Y_VOCAB), (73, 129));
    assert!(d.parent_logp.is_none());
    assert_normalized(&d);
}

#[test]
fn embedding_blocks_are_laid_out_x_y_x2_y2() {
    let m = model(Variant::Pointer);
    let q = m.config.embed_dim / 4;
    let base = node(3, true, Bounds::new(10, 20, 30, 40));
    let e0 = embed_node(&m, NodeInput::Node(base)).unwrap();
    assert_eq!(e0.len(), m.config.embed_dim);
    assert_eq!(embed_node(&m, NodeInput::Node(base)).unwrap(), e0);
    let variants = [
        Bounds::new(11, 20, 30, 40),
        Bounds::new(10, 21, 30, 40),
        Bounds::new(10, 20, 31, 40),
        Bounds::new(10, 20, 30, 41),
    ];
    for (block, b) in variants.into_iter().enumerate() {
        let e = embed_node(&m, NodeInput::Node(node(3, true, b))).unwrap();
        for (j, (a, c)) in e0.iter().zip(&e).enumerate() {
            assert_eq!(j / q == block, a != c, "block {block} column {j}");
        }
    }
}

#[test]
fn special_tokens_have_no_geometry() {
    let mut m = model(Variant::Vanilla);
    for name in ["embed.x", "embed.y", "embed.x2", "embed.y2"] {
        for v in m.params.get_mut(name).unwrap().data_mut() {
            *v = 100.0;
        }
    }
    let open = embed_node(&m, NodeInput::Open).unwrap();
    let e_type = m.params.get("embed.type").unwrap();
    let e_term = m.params.get("embed.terminal").unwrap();
    let expected: Vec<f64> = e_type
        .row(m.config.open_class())
        .iter()
        .zip(e_term.row(2))
        .map(|(a, b)| a + b)
        .collect();
    assert_eq!(open, expected);

    let zero = Model::<f64> {
        params: {
            let mut p = m.params.clone();
            p.tensors_mut()
                .iter_mut()
                .for_each(|t| *t = Tensor::zeros(t.shape()));
            p
        },
        ..m
    };
    assert!(embed_node(&zero, NodeInput::Close)
        .unwrap()
        .iter()
        .all(|v| *v == 0.0));
}

#[test]
fn single_position_attends_to_itself() {
    let m = model(Variant::Pointer);
    let out = m
        .decode_stack(&[NodeInput::Node(small_tree().node(0).props())])
        .unwrap();
    assert_eq!(out.hidden.shape(), &[1, m.config.hidden_dim]);
    assert_eq!(out.layers.len(), m.config.layers);
    for probs in &out.self_attention {
        assert!(probs.iter().all(|p| *p == 1.0));
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let m = model(Variant::Vanilla);
    let (inputs, _) = vanilla_inputs(&small_tree(), 1);
    let out = m.decode_stack(&inputs).unwrap();
    let n = inputs.len();
    for probs in &out.self_attention {
        for row in probs.chunks(n) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn vanilla_stack_is_causal() {
    let m = model(Variant::Vanilla);
    for tree in synthetic(10) {
        let (inputs, _) = vanilla_inputs(&tree, 1);
        let base = m.decode_stack(&inputs).unwrap();
        for cut in 0..inputs.len() - 1 {
            let mut changed = inputs.clone();
            for slot in &mut changed[cut + 1..] {
                *slot = match *slot {
                    NodeInput::Node(p) => NodeInput::Node(NodeProps {
                        type_id: (p.type_id + 7) % 25,
                        ..p
                    }),
                    NodeInput::Open => NodeInput::Close,
                    _ => NodeInput::Open,
                };
            }
            let other = m.decode_stack(&changed).unwrap();
            let h = m.config.hidden_dim;
            assert_eq!(
                base.hidden.data()[..(cut + 1) * h],
                other.hidden.data()[..(cut + 1) * h]
            );
            // appending a step leaves earlier states untouched
            let prefix = m.decode_stack(&inputs[..=cut]).unwrap();
            assert_eq!(prefix.hidden.data(), &base.hidden.data()[..(cut + 1) * h]);
        }
    }
}

#[test]
fn pointer_distributions_are_causal() {
    let m = model(Variant::Pointer);
    for tree in synthetic(10) {
        let nodes = tree.nodes();
        for i in 1..nodes.len() {
            let mut changed = nodes.to_vec();
            for n in &mut changed[i..] {
                n.type_id = (n.type_id + 3) % 25;
                n.bounds = Bounds::new(0, 0, 1, 1);
            }
            let a = m.pointer_next(&nodes[..i], &|_| true).unwrap();
            let b = m.pointer_next(&changed[..i], &|_| true).unwrap();
            assert_eq!(a, b);
            let full = m
                .decode_stack(
                    &nodes
                        .iter()
                        .map(|n| NodeInput::Node(n.props()))
                        .collect::<Vec<_>>(),
                )
                .unwrap();
            let part = m
                .decode_stack(
                    &changed
                        .iter()
                        .map(|n| NodeInput::Node(n.props()))
                        .collect::<Vec<_>>(),
                )
                .unwrap();
            let h = m.config.hidden_dim;
            assert_eq!(full.hidden.data()[..i * h], part.hidden.data()[..i * h]);
        }
    }
}

#[test]
fn pointer_first_parent_is_certain() {
    let m = model(Variant::Pointer);
    let root = *small_tree().node(0);
    let d = m.pointer_next(&[root], &|_| true).unwrap();
    assert_eq!(d.parent_logp, Some(vec![0.0]));
}

#[test]
fn pointer_parents_normalize_over_unmasked_candidates() {
    let m = model(Variant::Pointer);
    let tree = small_tree();
    let nodes = tree.nodes();
    let d = m.pointer_next(nodes, &|j| j != 0).unwrap();
    let parents = d.parent_logp.clone().unwrap();
    assert_eq!(parents.len(), nodes.len());
    for (j, lp) in parents.iter().enumerate() {
        let allowed = j != 0 && !nodes[j].terminal;
        assert_eq!(lp.is_finite(), allowed, "candidate {j}");
    }
    assert_normalized(&d);
}

fn family() -> LayoutTree {
    // root -> {A -> {C, D}, B -> {E}}
    let mut b = TreeBuilder::root(node(0, false, Bounds::screen()));
    let a = b.child(0, node(1, false, Bounds::new(0, 0, 72, 64)));
    let bb = b.child(0, node(2, false, Bounds::new(0, 64, 72, 128)));
    b.child(a, node(3, true, Bounds::new(0, 0, 36, 64)));
    b.child(a, node(4, true, Bounds::new(36, 0, 72, 64)));
    b.child(bb, node(5, true, Bounds::new(0, 64, 72, 100)));
    b.build("family")
}

#[test]
fn recursive_lists_ignore_later_subtrees() {
    let m = model(Variant::Recursive);
    let tree = family();
    let a = tree.nodes().iter().position(|n| n.type_id == 1).unwrap();
    let b = tree.nodes().iter().position(|n| n.type_id == 2).unwrap();
    let mut nodes = tree.nodes().to_vec();
    for n in nodes
        .iter_mut()
        .filter(|n| n.type_id == 2 || n.type_id == 5)
    {
        n.type_id = 9;
        n.bounds = Bounds::new(5, 70, 60, 120);
    }
    assert!(a < b);
    let changed = LayoutTree::from_raw("changed", nodes);
    let base = m.recursive_forest(&[&tree]).unwrap().remove(0);
    let other = m.recursive_forest(&[&changed]).unwrap().remove(0);
    let list = |lists: &[layout_core::model::ListDistributions], p: usize| {
        lists.iter().find(|l| l.parent == p).unwrap().steps.clone()
    };
    assert_eq!(list(&base, a), list(&other, a));
    // root's list sees B itself, so its later steps do change
    assert_ne!(list(&base, 0), list(&other, 0));
}

#[test]
fn forest_batching_matches_single_trees() {
    let m = model(Variant::Recursive);
    let trees = synthetic(6);
    let refs: Vec<&LayoutTree> = trees.iter().collect();
    let batched = m.recursive_forest(&refs).unwrap();
    for (t, tree) in trees.iter().enumerate() {
        let alone = m.recursive_forest(&[tree]).unwrap().remove(0);
        assert_eq!(alone.len(), batched[t].len());
        for (x, y) in alone.iter().zip(&batched[t]) {
            assert_eq!(x.parent, y.parent);
            for (dx, dy) in x.steps.iter().zip(&y.steps) {
                assert_normalized(dx);
                for (hx, hy) in dx.heads().zip(dy.heads()) {
                    for (a, b) in hx.iter().zip(hy) {
                        assert!((a - b).abs() < 1e-5);
                    }
                }
            }
        }
    }
}

#[test]
fn recursive_root_list_has_one_ancestor() {
    let m = model(Variant::Recursive);
    let state = m.recursive_root_state(family().node(0).props()).unwrap();
    assert_eq!(state.shape(), &[1, m.config.hidden_dim]);
}

fn zero_heads(m: &mut Model<f64>) {
    let names: Vec<String> = m
        .params
        .names()
        .iter()
        .filter(|n| n.starts_with("head."))
        .cloned()
        .collect();
    for n in names {
        let t = m.params.get_mut(&n).unwrap();
        *t = Tensor::zeros(t.shape());
    }
}

#[test]
fn uniform_heads_cost_log_vocabulary() {
    let mut m = model(Variant::Vanilla);
    zero_heads(&mut m);
    let mut b = TreeBuilder::root(node(0, false, Bounds::screen()));
    b.child(0, node(1, true, Bounds::new(0, 0, 72, 64)));
    let tree = b.build("pair");
    let out = teacher_forced_loss(
        &m,
        &[Example {
            tree,
            k: 1,
            order: Order::Dfs,
        }],
        &LossOptions::default(),
    )
    .unwrap();
    let node_loss = [28.0f64, 2.0, 73.0, 129.0, 73.0, 129.0]
        .iter()
        .map(|v| v.ln())
        .sum::<f64>();
    let eos_loss = 28f64.ln();
    assert_eq!(out.scored, 2);
    assert!(
        (out.loss - (node_loss + eos_loss) / 2.0).abs() < 1e-9,
        "{}",
        out.loss
    );
}

#[test]
fn confident_heads_cost_nothing() {
    let mut m = model(Variant::Vanilla);
    zero_heads(&mut m);
    let eos = m.config.eos_class();
    m.params.get_mut("head.type.bias").unwrap().data_mut()[eos] = 50.0;
    let tree = TreeBuilder::root(node(0, true, Bounds::screen())).build("leaf");
    let out = teacher_forced_loss(
        &m,
        &[Example {
            tree,
            k: 1,
            order: Order::Dfs,
        }],
        &LossOptions::default(),
    )
    .unwrap();
    assert!(out.loss < 1e-8);
}

#[test]
fn padding_does_not_change_the_loss() {
    let m = model(Variant::Vanilla);
    let batch: Vec<Example> = synthetic(4)
        .into_iter()
        .map(|tree| Example {
            tree,
            k: 2,
            order: Order::Dfs,
        })
        .collect();
    let plain = teacher_forced_loss(&m, &batch, &LossOptions::default()).unwrap();
    let padded = teacher_forced_loss(
        &m,
        &batch,
        &LossOptions {
            pad_to: Some(120),
            ..LossOptions::default()
        },
    )
    .unwrap();
    assert_eq!(plain.scored, padded.scored);
    assert!((plain.loss - padded.loss).abs() < 1e-12);
    for (a, b) in plain
        .grads
        .unwrap()
        .iter()
        .zip(padded.grads.unwrap().iter())
    {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_scores_only_positions_after_the_prefix() {
    let m = model(Variant::Pointer);
    let tree = small_tree();
    for k in 1..=tree.len() {
        let out = teacher_forced_loss(
            &m,
            &[Example {
                tree: tree.clone(),
                k,
                order: Order::Bfs,
            }],
            &LossOptions::default(),
        )
        .unwrap();
        assert_eq!(out.scored, tree.len() - k + 1);
    }
}

#[test]
fn every_variant_passes_gradient_check() {
    assert_eq!(three_node_tree().len(), 3);
    for v in Variant::ALL {
        let report = decoder_loss_check::<f64>(v, 3);
        assert!(report.max_abs_error < 1e-7, "{v}: {report:?}");
        assert!(report.max_rel_error < 1e-3, "{v}: {report:?}");
    }
}

#[test]
fn checkpoints_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for v in Variant::ALL {
        let m = model(v).cast::<f32>();
        let path = dir.path().join(format!("{v}.ckpt"));
        let hash = m.save(&path).unwrap();
        let (back, loaded_hash) = Model::<f32>::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(hash, loaded_hash);
    }
}
