//! Gradient-check cases shared by the tensor tests and the acceptance suite.

use layout_core::layout::{Bounds, LayoutTree, NodeProps, Order, TreeBuilder};
use layout_core::model::{example_loss, Example, Model, ModelConfig, Variant};
use layout_core::tensor::{grad_check, GradCheckReport, Mask, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-difference step for a precision.
pub fn eps<T: Scalar>() -> f64 {
    if std::mem::size_of::<T>() == 8 {
        1e-6
    } else {
        1e-2
    }
}

fn random<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-1.0..1.0)))
}

/// Random linear read-out `sum(y · w)` of a matrix, so that every output
/// entry contributes with its own weight.
fn readout<T: Scalar>(tape: &mut Tape<'_, T>, y: Var, w: &Tensor<T>) -> Var {
    let wv = tape.constant(w.clone());
    let prod = tape.matmul_t(y, wv);
    let picked = tape.gather_rows(prod, vec![Some(0)]);
    tape.sum(&[picked, prod])
}

type Case<T> = (
    &'static str,
    Vec<Tensor<T>>,
    Box<dyn Fn(&mut Tape<'_, T>, &[Var]) -> Var>,
);

/// One case per differentiable tape primitive.
pub fn primitive_cases<T: Scalar + 'static>(seed: u64) -> Vec<Case<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random::<T>(shape, &mut rng);
    let w3 = r(&[2, 3]);
    let w4 = r(&[2, 4]);
    let w8 = r(&[2, 8]);
    let w6 = r(&[2, 6]);
    let drop_seed = seed;
    let mut cases: Vec<Case<T>> = Vec::new();
    {
        let w = w3.clone();
        cases.push((
            "matmul",
            vec![r(&[3, 4]), r(&[4, 3])],
            Box::new(move |t, p| {
                let y = t.matmul(p[0], p[1]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w3.clone();
        cases.push((
            "matmul_t",
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(move |t, p| {
                let y = t.matmul_t(p[0], p[1]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "add",
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(move |t, p| {
                let y = t.add(p[0], p[1]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "add_bias",
            vec![r(&[3, 4]), r(&[4])],
            Box::new(move |t, p| {
                let y = t.add_bias(p[0], p[1]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "scale",
            vec![r(&[3, 4])],
            Box::new(move |t, p| {
                let y = t.scale(p[0], T::of(-1.7));
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "gather_rows",
            vec![r(&[3, 4])],
            Box::new(move |t, p| {
                let y = t.gather_rows(p[0], vec![Some(2), None, Some(0), Some(2)]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w6.clone();
        cases.push((
            "concat_cols",
            vec![r(&[3, 4]), r(&[3, 2])],
            Box::new(move |t, p| {
                let y = t.concat_cols(&[p[0], p[1]]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "concat_rows",
            vec![r(&[2, 4]), r(&[3, 4])],
            Box::new(move |t, p| {
                let y = t.concat_rows(&[p[0], p[1]]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "gelu",
            vec![r(&[3, 4])],
            Box::new(move |t, p| {
                let y = t.gelu(p[0]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w4.clone();
        cases.push((
            "softmax",
            vec![r(&[3, 4])],
            Box::new(move |t, p| {
                let y = t.softmax(p[0]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w8.clone();
        cases.push((
            "layer_norm",
            vec![r(&[3, 8]), r(&[8]), r(&[8])],
            Box::new(move |t, p| {
                let y = t.layer_norm(p[0], p[1], p[2]);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w8.clone();
        let mask = Mask::causal(4);
        cases.push((
            "attention",
            vec![r(&[4, 8]), r(&[4, 8]), r(&[4, 8])],
            Box::new(move |t, p| {
                let y = t.attention(p[0], p[1], p[2], 2, &mask);
                readout(t, y, &w)
            }),
        ));
    }
    {
        let w = w8.clone();
        cases.push((
            "dropout",
            vec![r(&[3, 8])],
            Box::new(move |t, p| {
                let y = t.dropout(p[0], 0.3, &mut ChaCha8Rng::seed_from_u64(drop_seed));
                readout(t, y, &w)
            }),
        ));
    }
    {
        let mask = Mask::from_fn(3, 5, |r, c| (r + c) % 4 != 3);
        cases.push((
            "cross_entropy",
            vec![r(&[3, 5])],
            Box::new(move |t, p| t.cross_entropy(p[0], vec![Some(1), None, Some(4)], Some(&mask))),
        ));
    }
    cases.push((
        "sum",
        vec![r(&[3, 4]), r(&[2])],
        Box::new(|t, p| t.sum(&[p[0], p[1]])),
    ));
    cases
}

/// Maximum relative error of every primitive case at `seed`.
pub fn primitive_errors<T: Scalar + 'static>(seed: u64) -> Vec<(&'static str, f64)> {
    primitive_cases::<T>(seed)
        .into_iter()
        .map(|(name, params, f)| {
            let report = grad_check(|t, p| f(t, p), &params, eps::<T>()).expect("finite");
            (name, report.max_rel_error)
        })
        .collect()
}

/// A small decoder configuration for exhaustive gradient checks.
pub fn tiny_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        embed_dim: 8,
        hidden_dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 8,
        type_count: 4,
        seed,
        ..ModelConfig::default()
    }
}

/// root -> {A, B} with two leaf children.
pub fn three_node_tree() -> LayoutTree {
    let mut b = TreeBuilder::root(NodeProps::new(0, false, Bounds::screen()));
    b.child(0, NodeProps::new(1, true, Bounds::new(0, 0, 72, 40)));
    b.child(0, NodeProps::new(2, true, Bounds::new(0, 40, 72, 128)));
    b.build("three")
}

/// Random parameters at the scale of a working model: initialized weight
/// matrices, unit-scale embeddings and small biases. At initialization the
/// embeddings are tiny and the first layer norm amplifies finite-difference
/// truncation error.
pub fn conditioned_model(variant: Variant, seed: u64) -> Model<f64> {
    let mut model = Model::<f64>::init(tiny_config(variant, seed)).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    let names = model.params.names().to_vec();
    for (name, t) in names.iter().zip(model.params.tensors_mut()) {
        let leaf = name.rsplit('.').next().unwrap_or_default();
        for x in t.data_mut() {
            if name.starts_with("embed.") {
                *x = rng.gen_range(-1.0..1.0);
            } else if leaf == "gamma" {
                *x = rng.gen_range(0.8..1.2);
            } else if leaf == "beta" || leaf == "bias" || leaf.starts_with('b') {
                *x = rng.gen_range(-0.1..0.1);
            }
        }
    }
    model
}

/// Finite-difference step for full decoder losses.
pub fn loss_eps<T: Scalar>() -> f64 {
    if std::mem::size_of::<T>() == 8 {
        1e-4
    } else {
        1e-2
    }
}

/// Gradient check of the teacher-forced loss of `variant` on the three-node
/// tree with the root given.
pub fn decoder_loss_check<T: Scalar>(variant: Variant, seed: u64) -> GradCheckReport {
    let model = conditioned_model(variant, seed).cast::<T>();
    let order = if seed.is_multiple_of(2) || variant == Variant::Vanilla {
        Order::Dfs
    } else {
        Order::Bfs
    };
    let ex = Example {
        tree: three_node_tree(),
        k: 1,
        order,
    };
    grad_check(
        |tape, vars| example_loss(&model, tape, vars, &ex).expect("loss builds"),
        model.tensors(),
        loss_eps::<T>(),
    )
    .expect("finite")
}
