use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix::{run_matrix, MatrixReport, MatrixSpec};
use super::split::{split_corpus, Splits};
use super::train::{StepReport, TrainConfig, TrainState, Trainer};
use super::HarnessError;
use crate::decode::{DecodeConfig, LayoutCompleter};
use crate::layout::{generate_synthetic, read_corpus, LayoutTree, SynthParams};
use crate::metrics::CostTable;
use crate::model::{Model, ModelConfig, Variant};

/// Where the corpus comes from: a JSON-lines file, or synthetic layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: Option<PathBuf>,
    pub synthetic_count: usize,
    pub synthetic: SynthParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            synthetic_count: 200,
            synthetic: SynthParams::default(),
        }
    }
}

/// A full experiment: data, split, per-variant training and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds the split and training sampling.
    pub seed: u64,
    pub split: [f64; 3],
    pub output_dir: PathBuf,
    pub data: DataConfig,
    /// Shared decoder settings; `variant` is replaced per trained model.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub costs: CostTable,
    pub matrix: MatrixSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split: [0.8, 0.1, 0.1],
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            costs: CostTable::default(),
            matrix: MatrixSpec::default(),
        }
    }
}

/// The trained parameters of `variant` under `output_dir`.
pub fn checkpoint_path(output_dir: &Path, variant: Variant) -> PathBuf {
    output_dir.join(format!("{variant}.ckpt"))
}

/// Resumable training state of `variant` under `output_dir`.
pub fn state_path(output_dir: &Path, variant: Variant) -> PathBuf {
    output_dir.join(format!("{variant}.state"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.costs
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn model_config(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn load_corpus(&self) -> Result<Vec<LayoutTree>, HarnessError> {
        match &self.data.corpus {
            Some(path) => read_corpus(path).map_err(|e| HarnessError::Config(e.to_string())),
            None => Ok((0..self.data.synthetic_count as u64)
                .map(|s| generate_synthetic(s, &self.data.synthetic))
                .collect()),
        }
    }

    pub fn splits(&self) -> Result<Splits<LayoutTree>, HarnessError> {
        split_corpus(&self.load_corpus()?, self.split, self.seed)
    }

    /// Trains `variant`, resuming from its saved state when one exists, and
    /// writes the best parameters to its checkpoint path.
    pub fn train_variant(
        &self,
        variant: Variant,
        train: &[LayoutTree],
        valid: &[LayoutTree],
        on_step: impl FnMut(&StepReport),
    ) -> Result<TrainState, HarnessError> {
        let dir = &self.output_dir;
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.clone(),
            source,
        })?;
        let spath = state_path(dir, variant);
        let state = if spath.exists() {
            TrainState::load(&spath)?
        } else {
            TrainState::new(Model::init(self.model_config(variant))?)
        };
        let mut trainer = Trainer::new(state, train, valid, self.train_config())?;
        trainer.run(on_step)?;
        trainer.state.save(&spath)?;
        trainer.state.best.save(&checkpoint_path(dir, variant))?;
        Ok(trainer.state)
    }

    /// Loads every configured variant's checkpoint.
    pub fn load_models(&self) -> Result<Vec<(Variant, Model<f32>)>, HarnessError> {
        self.matrix
            .variants
            .iter()
            .map(|&v| {
                let path = checkpoint_path(&self.output_dir, v);
                if !path.exists() {
                    return Err(HarnessError::MissingCheckpoint(path));
                }
                let (model, _) = Model::load(&path)?;
                if model.variant() != v {
                    return Err(HarnessError::Config(format!(
                        "{} holds a {} model",
                        path.display(),
                        model.variant()
                    )));
                }
                Ok((v, model))
            })
            .collect()
    }

    /// Evaluates the saved checkpoints on the test split and writes
    /// `matrix.tsv` and `matrix.txt` to the output directory.
    pub fn run_matrix(&self) -> Result<MatrixReport, HarnessError> {
        let models = self.load_models()?;
        let (_, _, test) = self.splits()?;
        let completers: Vec<(Variant, &dyn LayoutCompleter)> = models
            .iter()
            .map(|(v, m)| (*v, m as &dyn LayoutCompleter))
            .collect();
        let report = run_matrix(
            &completers,
            &test,
            &self.matrix,
            &self.costs,
            &self.decode,
            self.train.execution,
        )?;
        for (name, body) in [
            ("matrix.tsv", report.to_tsv()),
            ("matrix.txt", report.to_table()),
        ] {
            let path = self.output_dir.join(name);
            std::fs::write(&path, body).map_err(|source| HarnessError::Io { path, source })?;
        }
        Ok(report)
    }
}
