use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::layout::{prefix_len, reorder, LayoutTree, Order};
use crate::model::{
    teacher_forced_loss, Accuracy, Example, LossOptions, Model, ModelConfig, Variant,
};
use crate::parallel::Execution;
use crate::tensor::{adam_step, Adam, AdamState, Checkpoint, CheckpointError, LrSchedule, Tensor};

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_steps: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: Adam,
    /// Rescale gradients whose global norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Validation runs every this many steps.
    pub eval_every: u64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Prefix fractions sampled (uniformly) for each training example.
    pub fractions: Vec<f64>,
    /// Traversal orders sampled for each example; the vanilla decoder always uses depth-first.
    pub orders: Vec<Order>,
    /// Cap on validation trees used for early stopping.
    pub max_valid_trees: Option<usize>,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            batch_size: 16,
            schedule: LrSchedule::default(),
            adam: Adam::default(),
            clip_norm: Some(1.0),
            eval_every: 100,
            patience: 5,
            min_delta: 1e-3,
            fractions: vec![0.1, 0.5, 0.8],
            orders: vec![Order::Bfs, Order::Dfs],
            max_valid_trees: Some(512),
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive");
        }
        if self.fractions.is_empty() || self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return bad("fractions must be non-empty and each in (0, 1]");
        }
        if self.orders.is_empty() {
            return bad("orders must be non-empty");
        }
        Ok(())
    }
}

/// Orders a variant can be trained and evaluated on.
pub fn orders_for(variant: Variant, requested: &[Order]) -> Vec<Order> {
    match variant {
        Variant::Vanilla => vec![Order::Dfs],
        _ => requested.to_vec(),
    }
}

/// Every (tree, fraction, order) combination as a teacher-forcing example.
pub fn examples_for(trees: &[LayoutTree], fractions: &[f64], orders: &[Order]) -> Vec<Example> {
    let mut out = Vec::with_capacity(trees.len() * fractions.len() * orders.len());
    for t in trees {
        let t = &reorder(t, Order::Dfs);
        for &order in orders {
            for &f in fractions {
                out.push(Example {
                    tree: t.clone(),
                    k: prefix_len(f, t.len()),
                    order,
                });
            }
        }
    }
    out
}

/// Teacher-forced accuracy of `model` over every (tree, fraction, order) combination.
pub fn teacher_forced_accuracy(
    model: &Model<f32>,
    trees: &[LayoutTree],
    fractions: &[f64],
    orders: &[Order],
    execution: Execution,
) -> Result<Accuracy, HarnessError> {
    let examples = examples_for(trees, fractions, &orders_for(model.variant(), orders));
    let opts = LossOptions {
        grads: false,
        execution,
        ..LossOptions::default()
    };
    Ok(teacher_forced_loss(model, &examples, &opts)?.accuracy)
}

/// One point of the loss curve, recorded at every evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Lowest validation loss so far; never increases.
    pub best_valid: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model<f32>,
    pub best: Model<f32>,
    pub adam: AdamState<f32>,
    pub step: u64,
    pub best_valid: f64,
    pub evals_since_best: usize,
    pub curve: Vec<CurvePoint>,
    pub stopped: bool,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    model: ModelConfig,
    progress: Progress,
}

#[derive(Serialize, Deserialize)]
struct Progress {
    step: u64,
    best_valid: f64,
    evals_since_best: usize,
    stopped: bool,
    curve: Vec<CurvePoint>,
}

impl TrainState {
    pub fn new(model: Model<f32>) -> Self {
        let adam = AdamState::new(model.tensors());
        Self {
            best: model.clone(),
            model,
            adam,
            step: 0,
            best_valid: f64::INFINITY,
            evals_since_best: 0,
            curve: Vec::new(),
            stopped: false,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = StateMeta {
            model: self.model.config.clone(),
            progress: Progress {
                step: self.step,
                best_valid: if self.best_valid.is_finite() {
                    self.best_valid
                } else {
                    f64::MAX
                },
                evals_since_best: self.evals_since_best,
                stopped: self.stopped,
                curve: self.curve.clone(),
            },
        };
        let names = self.model.params.names();
        let mut tensors = Vec::with_capacity(names.len() * 4);
        for (prefix, list) in [
            ("param", self.model.tensors()),
            ("best", self.best.tensors()),
            ("adam_m", self.adam.m.as_slice()),
            ("adam_v", self.adam.v.as_slice()),
        ] {
            for (n, t) in names.iter().zip(list) {
                tensors.push((format!("{prefix}/{n}"), t.clone()));
            }
        }
        Checkpoint {
            meta: toml::to_string(&meta).expect("state meta serializes"),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, HarnessError> {
        let meta: StateMeta =
            toml::from_str(&ckpt.meta).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let part = |prefix: &str| -> Checkpoint {
            let tensors = ckpt
                .tensors
                .iter()
                .filter_map(|(n, t)| {
                    n.strip_prefix(prefix)
                        .map(|rest| (rest.to_string(), t.clone()))
                })
                .collect();
            let model_meta = format!("[model]\n{}", meta.model.to_toml());
            Checkpoint {
                meta: model_meta,
                tensors,
            }
        };
        let model = Model::from_checkpoint(&part("param/"))?;
        let best = Model::from_checkpoint(&part("best/"))?;
        let m = Model::<f32>::from_checkpoint(&part("adam_m/"))?
            .params
            .tensors()
            .to_vec();
        let v = Model::<f32>::from_checkpoint(&part("adam_v/"))?
            .params
            .tensors()
            .to_vec();
        let p = meta.progress;
        Ok(Self {
            model,
            best,
            adam: AdamState { step: p.step, m, v },
            step: p.step,
            best_valid: if p.best_valid == f64::MAX {
                f64::INFINITY
            } else {
                p.best_valid
            },
            evals_since_best: p.evals_since_best,
            curve: p.curve,
            stopped: p.stopped,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        self.to_checkpoint().save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let (ckpt, _) = Checkpoint::load(path)?;
        Self::from_checkpoint(&ckpt)
    }
}

/// Outcome of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub accuracy: Accuracy,
    pub evaluated: Option<CurvePoint>,
}

/// Drives training of one decoder on a fixed corpus.
pub struct Trainer {
    cfg: TrainConfig,
    train: Vec<LayoutTree>,
    valid: Vec<Example>,
    orders: Vec<Order>,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(
        state: TrainState,
        train: &[LayoutTree],
        valid: &[LayoutTree],
        cfg: TrainConfig,
    ) -> Result<Self, HarnessError> {
        cfg.validate()?;
        if train.is_empty() || valid.is_empty() {
            return Err(HarnessError::Config(
                "training and validation sets must be non-empty".into(),
            ));
        }
        let orders = orders_for(state.model.variant(), &cfg.orders);
        let train: Vec<LayoutTree> = train.iter().map(|t| reorder(t, Order::Dfs)).collect();
        let valid_trees: Vec<LayoutTree> = valid
            .iter()
            .take(cfg.max_valid_trees.unwrap_or(usize::MAX))
            .map(|t| reorder(t, Order::Dfs))
            .collect();
        let valid = examples_for(&valid_trees, &cfg.fractions, &orders);
        Ok(Self {
            cfg,
            train,
            valid,
            orders,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// The batch used at 1-based `step`; a pure function of the seed and step.
    pub fn batch_for(&self, step: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step);
        (0..self.cfg.batch_size)
            .map(|_| {
                let tree = &self.train[rng.gen_range(0..self.train.len())];
                let f = *self
                    .cfg
                    .fractions
                    .choose(&mut rng)
                    .expect("non-empty fractions");
                let order = *self.orders.choose(&mut rng).expect("non-empty orders");
                Example {
                    tree: tree.clone(),
                    k: prefix_len(f, tree.len()),
                    order,
                }
            })
            .collect()
    }

    pub fn validation_loss(&self, model: &Model<f32>) -> Result<f64, HarnessError> {
        let opts = LossOptions {
            grads: false,
            execution: self.cfg.execution,
            ..LossOptions::default()
        };
        Ok(teacher_forced_loss(model, &self.valid, &opts)?.loss)
    }

    pub fn step(&mut self) -> Result<StepReport, HarnessError> {
        let step = self.state.step + 1;
        let batch = self.batch_for(step);
        let opts = LossOptions {
            grads: true,
            execution: self.cfg.execution,
            ..LossOptions::default()
        };
        let dropout = self.state.model.config.dropout > 0.0;
        let opts = LossOptions {
            dropout_seed: dropout.then(|| self.cfg.seed ^ step.rotate_left(32)),
            ..opts
        };
        let out = teacher_forced_loss(&self.state.model, &batch, &opts).map_err(|e| match e {
            crate::model::ModelError::Tensor(crate::tensor::TensorError::NonFinite { .. }) => {
                HarnessError::Diverged { step }
            }
            other => other.into(),
        })?;
        if !out.loss.is_finite() {
            return Err(HarnessError::Diverged { step });
        }
        let mut grads = out.grads.expect("gradients requested");
        if let Some(max) = self.cfg.clip_norm {
            clip(&mut grads, max);
        }
        let lr = self.cfg.schedule.at(step);
        adam_step(
            self.state.model.params.tensors_mut(),
            &grads,
            &mut self.state.adam,
            lr,
            &self.cfg.adam,
        )
        .map_err(crate::model::ModelError::from)?;
        if self.state.model.tensors().iter().any(|t| !t.is_finite()) {
            return Err(HarnessError::Diverged { step });
        }
        self.state.step = step;
        let mut evaluated = None;
        if step.is_multiple_of(self.cfg.eval_every) {
            let valid_loss = self.validation_loss(&self.state.model)?;
            if valid_loss < self.state.best_valid - self.cfg.min_delta
                || !self.state.best_valid.is_finite()
            {
                self.state.best_valid = valid_loss;
                self.state.best = self.state.model.clone();
                self.state.evals_since_best = 0;
            } else {
                self.state.evals_since_best += 1;
                if valid_loss < self.state.best_valid {
                    // a small improvement still replaces the kept parameters
                    self.state.best_valid = valid_loss;
                    self.state.best = self.state.model.clone();
                }
            }
            if self.state.evals_since_best >= self.cfg.patience {
                self.state.stopped = true;
            }
            let point = CurvePoint {
                step,
                train_loss: out.loss,
                valid_loss,
                best_valid: self.state.best_valid,
            };
            self.state.curve.push(point.clone());
            evaluated = Some(point);
        }
        Ok(StepReport {
            step,
            loss: out.loss,
            lr,
            accuracy: out.accuracy,
            evaluated,
        })
    }

    /// Trains until `max_steps` or early stopping; `on_step` sees every report.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepReport)) -> Result<(), HarnessError> {
        while !self.state.stopped && self.state.step < self.cfg.max_steps {
            let report = self.step()?;
            on_step(&report);
        }
        Ok(())
    }
}

fn clip(grads: &mut [Tensor<f32>], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| (*v as f64) * (*v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Trains a fresh model and returns the final state (its `best` field holds
/// the parameters with the lowest validation loss).
pub fn train(
    config: ModelConfig,
    train: &[LayoutTree],
    valid: &[LayoutTree],
    cfg: &TrainConfig,
    on_step: impl FnMut(&StepReport),
) -> Result<TrainState, HarnessError> {
    let model = Model::init(config)?;
    let mut trainer = Trainer::new(TrainState::new(model), train, valid, cfg.clone())?;
    trainer.run(on_step)?;
    Ok(trainer.state)
}
