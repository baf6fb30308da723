use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, Variant, X_VOCAB, Y_VOCAB};
use crate::tensor::{CheckpointError, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
enum Init {
    Zeros,
    Ones,
    Embedding,
    Xavier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct AttnIds {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct NormIds {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LayerIds {
    pub ln_self: NormIds,
    pub attn: AttnIds,
    pub cross: Option<(NormIds, AttnIds)>,
    pub ln_ffn: NormIds,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct HeadIds {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ParamIds {
    pub e_type: usize,
    pub e_terminal: usize,
    pub e_x: usize,
    pub e_y: usize,
    pub e_x2: usize,
    pub e_y2: usize,
    pub proj: Option<usize>,
    pub layers: Vec<LayerIds>,
    pub final_ln: NormIds,
    pub h_type: HeadIds,
    pub h_terminal: HeadIds,
    pub h_x: HeadIds,
    pub h_y: HeadIds,
    pub h_x2: HeadIds,
    pub h_y2: HeadIds,
}

struct Spec {
    entries: Vec<(String, Vec<usize>, Init)>,
}

impl Spec {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        self.entries.push((name.into(), shape.to_vec(), init));
        self.entries.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gamma: self.add(format!("{prefix}.gamma"), &[d], Init::Ones),
            beta: self.add(format!("{prefix}.beta"), &[d], Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, h: usize) -> AttnIds {
        let w = |s: &mut Self, n: &str| s.add(format!("{prefix}.w{n}"), &[h, h], Init::Xavier);
        let b = |s: &mut Self, n: &str| s.add(format!("{prefix}.b{n}"), &[h], Init::Zeros);
        // a key bias only shifts each query's logits uniformly, so there is none
        let (wq, bq) = (w(self, "q"), b(self, "q"));
        let wk = w(self, "k");
        let (wv, bv) = (w(self, "v"), b(self, "v"));
        let (wo, bo) = (w(self, "o"), b(self, "o"));
        AttnIds {
            wq,
            bq,
            wk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn head(&mut self, name: &str, classes: usize, h: usize) -> HeadIds {
        HeadIds {
            w: self.add(format!("head.{name}.weight"), &[classes, h], Init::Xavier),
            b: self.add(format!("head.{name}.bias"), &[classes], Init::Zeros),
        }
    }
}

fn layout(cfg: &ModelConfig) -> (Spec, ParamIds) {
    let (e, h, f) = (cfg.embed_dim, cfg.hidden_dim, cfg.ffn_dim);
    let q = e / 4;
    let mut s = Spec {
        entries: Vec::new(),
    };
    let e_type = s.add("embed.type", &[cfg.type_count + 4, e], Init::Embedding);
    let e_terminal = s.add("embed.terminal", &[3, e], Init::Embedding);
    let e_x = s.add("embed.x", &[X_VOCAB, q], Init::Embedding);
    let e_y = s.add("embed.y", &[Y_VOCAB, q], Init::Embedding);
    let e_x2 = s.add("embed.x2", &[X_VOCAB, q], Init::Embedding);
    let e_y2 = s.add("embed.y2", &[Y_VOCAB, q], Init::Embedding);
    let proj = (e != h).then(|| s.add("embed.proj", &[e, h], Init::Xavier));
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let ln_self = s.norm(&format!("layer{l}.ln_self"), h);
        let attn = s.attn(&format!("layer{l}.self_attn"), h);
        let cross = (cfg.variant == Variant::Recursive).then(|| {
            (
                s.norm(&format!("layer{l}.ln_cross"), h),
                s.attn(&format!("layer{l}.cross_attn"), h),
            )
        });
        let ln_ffn = s.norm(&format!("layer{l}.ln_ffn"), h);
        let w1 = s.add(format!("layer{l}.ffn.w1"), &[h, f], Init::Xavier);
        let b1 = s.add(format!("layer{l}.ffn.b1"), &[f], Init::Zeros);
        let w2 = s.add(format!("layer{l}.ffn.w2"), &[f, h], Init::Xavier);
        let b2 = s.add(format!("layer{l}.ffn.b2"), &[h], Init::Zeros);
        layers.push(LayerIds {
            ln_self,
            attn,
            cross,
            ln_ffn,
            w1,
            b1,
            w2,
            b2,
        });
    }
    let final_ln = s.norm("final_ln", h);
    let h_type = s.head("type", cfg.type_classes(), h);
    let h_terminal = s.head("terminal", 2, h);
    let h_x = s.head("x", X_VOCAB, h);
    let h_y = s.head("y", Y_VOCAB, h);
    let h_x2 = s.head("x2", X_VOCAB, h);
    let h_y2 = s.head("y2", Y_VOCAB, h);
    let ids = ParamIds {
        e_type,
        e_terminal,
        e_x,
        e_y,
        e_x2,
        e_y2,
        proj,
        layers,
        final_ln,
        h_type,
        h_terminal,
        h_x,
        h_y,
        h_x2,
        h_y2,
    };
    (s, ids)
}

/// Named parameter tensors in a fixed order determined by the config.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    pub(crate) ids: ParamIds,
}

impl<T: Scalar> ParamSet<T> {
    pub(crate) fn init(cfg: &ModelConfig) -> Self {
        let (spec, ids) = layout(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut names = Vec::with_capacity(spec.entries.len());
        let mut tensors = Vec::with_capacity(spec.entries.len());
        for (name, shape, init) in spec.entries {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::from_fn(&shape, |_| T::one()),
                Init::Embedding => Tensor::from_fn(&shape, |_| T::of(rng.gen_range(-0.1..0.1))),
                Init::Xavier => {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::from_fn(&shape, |_| T::of(rng.gen_range(-a..a)))
                }
            };
            names.push(name);
            tensors.push(t);
        }
        Self {
            names,
            tensors,
            ids,
        }
    }

    pub(crate) fn from_tensors(
        cfg: &ModelConfig,
        given: &[(String, Tensor<f32>)],
    ) -> Result<Self, ModelError> {
        let (spec, ids) = layout(cfg);
        for (name, _) in given {
            if !spec.entries.iter().any(|(n, _, _)| n == name) {
                return Err(CheckpointError::Unexpected(name.clone()).into());
            }
        }
        let mut names = Vec::with_capacity(spec.entries.len());
        let mut tensors = Vec::with_capacity(spec.entries.len());
        for (name, shape, _) in spec.entries {
            let t = given
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: shape,
                    found: t.shape().to_vec(),
                }
                .into());
            }
            tensors.push(t.cast());
            names.push(name);
        }
        Ok(Self {
            names,
            tensors,
            ids,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            ids: self.ids.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor as a leaf; `trainable` decides whether it gets gradients.
    pub(crate) fn bind<'p>(&'p self, tape: &mut Tape<'p, T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t)
                } else {
                    tape.frozen(t)
                }
            })
            .collect()
    }
}
