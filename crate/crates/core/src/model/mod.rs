//! Transformer tree decoders: node embedding, the shared causal stack and
//! the vanilla (bracket sequence), pointer (parent index) and recursive
//! (top-down sibling lists) variants.

mod loss;
mod net;
mod params;
mod pointer;
mod recursive;
mod vanilla;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{LayoutNode, GRID_HEIGHT, GRID_WIDTH};
use crate::tensor::{Checkpoint, CheckpointError, Scalar, Tape, Tensor, TensorError};

pub use loss::{example_loss, teacher_forced_loss, Accuracy, Example, LossOptions, LossOutput};
pub use net::{embed_node, NodeInput, StackOutput};
pub use params::ParamSet;
pub use pointer::pointer_sequence;
pub use recursive::{ForestList, ListDistributions, RecursiveState};
pub use vanilla::vanilla_inputs;

/// Rows in the x/x̂ coordinate tables (grid lines 0..=72).
pub const X_VOCAB: usize = GRID_WIDTH as usize + 1;
/// Rows in the y/ŷ coordinate tables (grid lines 0..=128).
pub const Y_VOCAB: usize = GRID_HEIGHT as usize + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    Pointer,
    Recursive,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Vanilla, Variant::Pointer, Variant::Recursive];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Pointer => "pointer",
            Variant::Recursive => "recursive",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Vanilla => "Vanilla",
            Variant::Pointer => "Pointer",
            Variant::Recursive => "Recursive",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(Variant::Vanilla),
            "pointer" => Ok(Variant::Pointer),
            "recursive" => Ok(Variant::Recursive),
            other => Err(format!(
                "unknown variant `{other}` (expected vanilla, pointer or recursive)"
            )),
        }
    }
}

/// Architecture hyperparameters; serialized as TOML inside checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Number of component categories (the type manifest size).
    pub type_count: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Restrict pointer parents to earlier non-terminal nodes.
    pub parent_mask: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Pointer,
            embed_dim: 64,
            hidden_dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            type_count: 25,
            dropout: 0.0,
            seed: 0,
            parent_mask: true,
        }
    }
}

impl ModelConfig {
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(4) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of 4",
                self.embed_dim
            ));
        }
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "{} heads must divide hidden_dim {}",
                self.heads, self.hidden_dim
            ));
        }
        if self.layers == 0 || self.ffn_dim == 0 {
            return bad("layers and ffn_dim must be positive".into());
        }
        if self.type_count == 0 || self.type_count > u16::MAX as usize - 4 {
            return bad(format!("type_count {} out of range", self.type_count));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Classes of the type head: categories plus Open, Close and EOS.
    pub fn type_classes(&self) -> usize {
        self.type_count + 3
    }

    pub fn open_class(&self) -> usize {
        self.type_count
    }

    pub fn close_class(&self) -> usize {
        self.type_count + 1
    }

    pub fn eos_class(&self) -> usize {
        self.type_count + 2
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what} {value} is outside its vocabulary of {size}")]
    VocabOverflow {
        what: &'static str,
        value: usize,
        size: usize,
    },
    #[error("batch has no scored positions")]
    EmptyBatch,
    #[error("no parent candidates before the first node")]
    NoCandidates,
    #[error("ancestry state missing for node {0}")]
    MissingAncestry(usize),
    #[error("the vanilla decoder needs a depth-first prefix: {0}")]
    PrefixViolation(String),
    #[error("wrong variant: model is {found}, operation needs {expected}")]
    WrongVariant { expected: Variant, found: Variant },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Per-head log-probabilities for one decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution {
    /// Categories, then Open, Close and EOS.
    pub type_logp: Vec<f64>,
    /// Non-terminal, terminal.
    pub terminal_logp: Vec<f64>,
    pub x_logp: Vec<f64>,
    pub y_logp: Vec<f64>,
    pub x2_logp: Vec<f64>,
    pub y2_logp: Vec<f64>,
    /// Pointer only: one entry per earlier position; masked candidates are `-inf`.
    pub parent_logp: Option<Vec<f64>>,
}

impl StepDistribution {
    pub fn heads(&self) -> impl Iterator<Item = &[f64]> {
        [
            &self.type_logp,
            &self.terminal_logp,
            &self.x_logp,
            &self.y_logp,
            &self.x2_logp,
            &self.y2_logp,
        ]
        .into_iter()
        .map(Vec::as_slice)
        .chain(self.parent_logp.as_deref())
    }
}

/// A decoder's configuration with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

/// Metadata written at the top of a model checkpoint.
#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized parameters, deterministic in `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ParamSet::init(&config);
        Ok(Self { config, params })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = toml::to_string(&CheckpointMeta {
            model: self.config.clone(),
        })
        .expect("meta serializes");
        let tensors = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.cast::<f32>()))
            .collect();
        Checkpoint { meta, tensors }
    }

    /// Rebuilds a model, checking every tensor name and shape against the
    /// configuration stored in the checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let meta: CheckpointMeta =
            toml::from_str(&ckpt.meta).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        meta.model.validate()?;
        let params = ParamSet::from_tensors(&meta.model, &ckpt.tensors)?;
        Ok(Self {
            config: meta.model,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String, ModelError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    /// Loads a checkpoint, returning the model and the file's content hash.
    pub fn load(path: &Path) -> Result<(Self, String), ModelError> {
        let (ckpt, hash) = Checkpoint::load(path)?;
        Ok((Self::from_checkpoint(&ckpt)?, hash))
    }
}

impl<T: Scalar> Model<T> {
    pub fn tensors(&self) -> &[Tensor<T>] {
        self.params.tensors()
    }

    /// Vanilla: distribution of the token following `inputs`.
    pub fn vanilla_next(&self, inputs: &[NodeInput]) -> Result<StepDistribution, ModelError> {
        if self.config.variant != Variant::Vanilla {
            return Err(ModelError::WrongVariant {
                expected: Variant::Vanilla,
                found: self.config.variant,
            });
        }
        if inputs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut tape = Tape::new();
        let net = net::Net::bind(self, &mut tape, false);
        vanilla::next(&net, &mut tape, inputs)
    }

    /// Pointer: distribution of the node following `nodes` (in decoding
    /// order). `allowed_parent` can rule out further candidates, e.g. full parents.
    pub fn pointer_next(
        &self,
        nodes: &[LayoutNode],
        allowed_parent: &dyn Fn(usize) -> bool,
    ) -> Result<StepDistribution, ModelError> {
        if self.config.variant != Variant::Pointer {
            return Err(ModelError::WrongVariant {
                expected: Variant::Pointer,
                found: self.config.variant,
            });
        }
        let mut tape = Tape::new();
        let net = net::Net::bind(self, &mut tape, false);
        pointer::next(&net, &mut tape, nodes, allowed_parent)
    }
}

/// Log-softmax of row `row` of `logits`.
pub(crate) fn log_softmax_rows<T: Scalar>(logits: &Tensor<T>, row: usize) -> Vec<f64> {
    crate::tensor::log_softmax(logits.row(row))
}

/// Log-softmax over the permitted entries; the rest get `-inf`.
pub(crate) fn log_softmax_masked<T: Scalar>(scores: &[T], allowed: &[bool]) -> Vec<f64> {
    let kept: Vec<T> = scores
        .iter()
        .zip(allowed)
        .filter(|(_, a)| **a)
        .map(|(s, _)| *s)
        .collect();
    let lp = crate::tensor::log_softmax(&kept);
    let mut it = lp.into_iter();
    allowed
        .iter()
        .map(|a| {
            if *a {
                it.next().unwrap_or(f64::NEG_INFINITY)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}
