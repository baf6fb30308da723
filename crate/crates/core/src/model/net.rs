use rand_chacha::ChaCha8Rng;

use super::params::{AttnIds, HeadIds, NormIds, ParamIds};
use super::{log_softmax_rows, Model, ModelConfig, ModelError, StepDistribution, X_VOCAB, Y_VOCAB};
use crate::layout::NodeProps;
use crate::tensor::{Mask, Scalar, Tape, Tensor, Var};

/// One decoder input position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeInput {
    Node(NodeProps),
    Open,
    Close,
    Eos,
    Pad,
}

const TERMINAL_NON: usize = 0;
const TERMINAL_YES: usize = 1;
const TERMINAL_NA: usize = 2;

struct Rows {
    kind: usize,
    terminal: usize,
    coords: Option<[usize; 4]>,
}

fn rows(input: &NodeInput, cfg: &ModelConfig) -> Result<Rows, ModelError> {
    let special = |offset: usize| Rows {
        kind: cfg.type_count + offset,
        terminal: TERMINAL_NA,
        coords: None,
    };
    Ok(match input {
        NodeInput::Node(p) => {
            let t = p.type_id as usize;
            if t >= cfg.type_count {
                return Err(ModelError::VocabOverflow {
                    what: "type id",
                    value: t,
                    size: cfg.type_count,
                });
            }
            let b = p.bounds;
            let mut coords = [0usize; 4];
            for (i, (v, size)) in [
                (b.x0, X_VOCAB),
                (b.y0, Y_VOCAB),
                (b.x1, X_VOCAB),
                (b.y1, Y_VOCAB),
            ]
            .into_iter()
            .enumerate()
            {
                if v < 0 || v as usize >= size {
                    return Err(ModelError::VocabOverflow {
                        what: "coordinate",
                        value: v.max(0) as usize,
                        size,
                    });
                }
                coords[i] = v as usize;
            }
            Rows {
                kind: t,
                terminal: if p.terminal {
                    TERMINAL_YES
                } else {
                    TERMINAL_NON
                },
                coords: Some(coords),
            }
        }
        NodeInput::Open => special(0),
        NodeInput::Close => special(1),
        NodeInput::Eos => special(2),
        NodeInput::Pad => special(3),
    })
}

/// Logit variables of the six property heads.
pub(crate) struct HeadVars {
    pub kind: Var,
    pub terminal: Var,
    pub x: Var,
    pub y: Var,
    pub x2: Var,
    pub y2: Var,
}

/// A parameter set bound to a tape.
pub(crate) struct Net<'m> {
    pub cfg: &'m ModelConfig,
    pub ids: &'m ParamIds,
    pub vars: Vec<Var>,
}

impl<'m> Net<'m> {
    pub fn bind<'p, T: Scalar>(
        model: &'p Model<T>,
        tape: &mut Tape<'p, T>,
        trainable: bool,
    ) -> Net<'p> {
        Net {
            cfg: &model.config,
            ids: &model.params.ids,
            vars: model.params.bind(tape, trainable),
        }
    }

    fn v(&self, id: usize) -> Var {
        self.vars[id]
    }

    /// `e = e_b + e_c + e_t` for every input position.
    pub fn embed<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        inputs: &[NodeInput],
    ) -> Result<Var, ModelError> {
        let rows: Vec<Rows> = inputs
            .iter()
            .map(|i| rows(i, self.cfg))
            .collect::<Result<_, _>>()?;
        let ids = self.ids;
        let ec = tape.gather_rows(
            self.v(ids.e_type),
            rows.iter().map(|r| Some(r.kind)).collect(),
        );
        let et = tape.gather_rows(
            self.v(ids.e_terminal),
            rows.iter().map(|r| Some(r.terminal)).collect(),
        );
        let tables = [ids.e_x, ids.e_y, ids.e_x2, ids.e_y2];
        let parts: Vec<Var> = tables
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                tape.gather_rows(
                    self.v(t),
                    rows.iter().map(|r| r.coords.map(|c| c[i])).collect(),
                )
            })
            .collect();
        let eb = tape.concat_cols(&parts);
        let sum = tape.add(ec, et);
        let e = tape.add(sum, eb);
        Ok(match ids.proj {
            Some(p) => tape.matmul(e, self.v(p)),
            None => e,
        })
    }

    fn linear<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, w: usize, b: usize) -> Var {
        let y = tape.matmul(x, self.v(w));
        tape.add_bias(y, self.v(b))
    }

    fn norm<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, n: NormIds) -> Var {
        tape.layer_norm(x, self.v(n.gamma), self.v(n.beta))
    }

    fn attend<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        q_in: Var,
        kv_in: Var,
        a: AttnIds,
        mask: &Mask,
    ) -> (Var, Var) {
        let q = self.linear(tape, q_in, a.wq, a.bq);
        let k = tape.matmul(kv_in, self.v(a.wk));
        let v = self.linear(tape, kv_in, a.wv, a.bv);
        let att = tape.attention(q, k, v, self.cfg.heads, mask);
        (self.linear(tape, att, a.wo, a.bo), att)
    }

    fn drop<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Var {
        match rng {
            Some(r) if self.cfg.dropout > 0.0 => tape.dropout(x, self.cfg.dropout, *r),
            _ => x,
        }
    }

    /// Pre-norm transformer stack: causal (or `self_mask`-shaped) self-attention,
    /// optional cross-attention over `memory`, and a feed-forward sublayer per layer.
    pub fn stack<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        self_mask: &Mask,
        memory: Option<(Var, &Mask)>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> StackVars {
        let mut x = x;
        let mut layers = Vec::with_capacity(self.ids.layers.len());
        let mut attention = Vec::with_capacity(self.ids.layers.len());
        for layer in &self.ids.layers {
            let a = self.norm(tape, x, layer.ln_self);
            let (o, att) = self.attend(tape, a, a, layer.attn, self_mask);
            attention.push(att);
            let o = self.drop(tape, o, &mut rng);
            x = tape.add(x, o);
            if let (Some((ln, attn)), Some((mem, mask))) = (layer.cross, memory) {
                let a = self.norm(tape, x, ln);
                let (o, _) = self.attend(tape, a, mem, attn, mask);
                let o = self.drop(tape, o, &mut rng);
                x = tape.add(x, o);
            }
            let a = self.norm(tape, x, layer.ln_ffn);
            let f = self.linear(tape, a, layer.w1, layer.b1);
            let f = tape.gelu(f);
            let f = self.linear(tape, f, layer.w2, layer.b2);
            let f = self.drop(tape, f, &mut rng);
            x = tape.add(x, f);
            layers.push(x);
        }
        let hidden = self.norm(tape, x, self.ids.final_ln);
        StackVars {
            hidden,
            layers,
            attention,
        }
    }

    fn head<T: Scalar>(&self, tape: &mut Tape<'_, T>, h: Var, ids: HeadIds) -> Var {
        let z = tape.matmul_t(h, self.v(ids.w));
        tape.add_bias(z, self.v(ids.b))
    }

    pub fn heads<T: Scalar>(&self, tape: &mut Tape<'_, T>, h: Var) -> HeadVars {
        let ids = self.ids;
        HeadVars {
            kind: self.head(tape, h, ids.h_type),
            terminal: self.head(tape, h, ids.h_terminal),
            x: self.head(tape, h, ids.h_x),
            y: self.head(tape, h, ids.h_y),
            x2: self.head(tape, h, ids.h_x2),
            y2: self.head(tape, h, ids.h_y2),
        }
    }

    /// Per-head log-probabilities at `row` of already computed head logits.
    pub fn distribution<T: Scalar>(
        tape: &Tape<'_, T>,
        heads: &HeadVars,
        row: usize,
    ) -> StepDistribution {
        let lp = |v: Var| log_softmax_rows(tape.value(v), row);
        StepDistribution {
            type_logp: lp(heads.kind),
            terminal_logp: lp(heads.terminal),
            x_logp: lp(heads.x),
            y_logp: lp(heads.y),
            x2_logp: lp(heads.x2),
            y2_logp: lp(heads.y2),
            parent_logp: None,
        }
    }
}

pub(crate) struct StackVars {
    pub hidden: Var,
    pub layers: Vec<Var>,
    pub attention: Vec<Var>,
}

/// Result of running the decoder stack on a plain causal sequence.
#[derive(Clone, Debug)]
pub struct StackOutput<T> {
    /// Final normalized hidden states `h^L`, one row per position.
    pub hidden: Tensor<T>,
    /// Residual stream after each layer.
    pub layers: Vec<Tensor<T>>,
    /// Self-attention probabilities per layer, laid out `[head][query][key]`.
    pub self_attention: Vec<Vec<T>>,
}

/// The embedding vector of a single input position.
pub fn embed_node<T: Scalar>(model: &Model<T>, input: NodeInput) -> Result<Vec<T>, ModelError> {
    let mut tape = Tape::new();
    let net = Net::bind(model, &mut tape, false);
    let e = net.embed(&mut tape, &[input])?;
    Ok(tape.value(e).data().to_vec())
}

impl<T: Scalar> Model<T> {
    /// Runs the causal stack over `inputs` without any cross-attention memory.
    pub fn decode_stack(&self, inputs: &[NodeInput]) -> Result<StackOutput<T>, ModelError> {
        let mut tape = Tape::new();
        let net = Net::bind(self, &mut tape, false);
        let x = net.embed(&mut tape, inputs)?;
        let out = net.stack(&mut tape, x, &Mask::causal(inputs.len()), None, None);
        if !tape.value(out.hidden).is_finite() {
            return Err(crate::tensor::TensorError::NonFinite { op: "decode_stack" }.into());
        }
        Ok(StackOutput {
            hidden: tape.value(out.hidden).clone(),
            layers: out.layers.iter().map(|v| tape.value(*v).clone()).collect(),
            self_attention: out
                .attention
                .iter()
                .map(|v| tape.attention_probs(*v).unwrap_or(&[]).to_vec())
                .collect(),
        })
    }
}
