use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{leal_outputs, score_outputs, solo_outputs, targets, Evaluation, LealConfig, LealRun, SoloRun};
use crate::data::{encode_with_blocks, ColumnBlock, DatasetBundle};
use crate::error::{LealError, Result};
use crate::model::AlignmentModel;
use crate::nn::{Mlp, Task};
use crate::par::Exec;
use crate::sampler::ClusterSampler;
use crate::tensor::{ParamId, ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "leal-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckpointModel {
    Leal {
        sampler: ClusterSampler,
        model: AlignmentModel,
    },
    Solo {
        mlp: Mlp,
    },
}

impl CheckpointModel {
    fn param_ids(&self) -> Vec<ParamId> {
        match self {
            CheckpointModel::Leal { sampler, model } => {
                let mut ids = sampler.param_ids();
                ids.extend(model.param_ids());
                ids
            }
            CheckpointModel::Solo { mlp } => mlp.param_ids(),
        }
    }
}

/// Everything needed to rebuild a trained model: layout, parameters and the
/// normalization applied to its inputs. Stored as JSON; every `f64` survives
/// a save/load cycle bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: LealConfig,
    pub task: Task,
    pub class_names: Vec<String>,
    pub best_epoch: usize,
    pub model: CheckpointModel,
    pub params: ParamStore,
    pub primary_blocks: Vec<ColumnBlock>,
    pub secondary_blocks: Vec<ColumnBlock>,
}

impl Checkpoint {
    fn build(bundle: &DatasetBundle, config: &LealConfig, best_epoch: usize, model: CheckpointModel, params: ParamStore) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            task: bundle.task(),
            class_names: bundle.labels.class_names.clone(),
            best_epoch,
            model,
            params,
            primary_blocks: bundle.primary.blocks.clone(),
            secondary_blocks: bundle.secondary.blocks.clone(),
        }
    }

    pub fn from_leal(run: &LealRun, bundle: &DatasetBundle) -> Self {
        let model = CheckpointModel::Leal {
            sampler: run.sampler.clone(),
            model: run.model.clone(),
        };
        Self::build(bundle, &run.report.config, run.report.best_epoch, model, run.store.clone())
    }

    pub fn from_solo(run: &SoloRun, bundle: &DatasetBundle) -> Self {
        let model = CheckpointModel::Solo { mlp: run.mlp.clone() };
        Self::build(bundle, &run.report.config, run.report.best_epoch, model, run.store.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(LealError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(LealError::Checkpoint(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        for (_, name, t) in self.params.iter() {
            Tensor::new(t.shape().to_vec(), t.data().to_vec())
                .map_err(|e| LealError::Checkpoint(format!("parameter {name}: {e}")))?;
        }
        if let Some(id) = self.model.param_ids().into_iter().find(|id| id.index() >= self.params.len()) {
            return Err(LealError::Checkpoint(format!(
                "model refers to parameter {} but only {} are stored",
                id.index(),
                self.params.len()
            )));
        }
        Ok(())
    }

    /// Scores the stored model on `rows` of `bundle`. Both raw tables are
    /// re-encoded with the stored layout, so the bundle's own normalization
    /// plays no part.
    pub fn evaluate(&self, bundle: &DatasetBundle, rows: &[usize]) -> Result<Evaluation> {
        if bundle.task() != self.task {
            return Err(LealError::Checkpoint(format!(
                "checkpoint task {:?} does not match bundle task {:?}",
                self.task,
                bundle.task()
            )));
        }
        if matches!(self.task, Task::Classification { .. }) && bundle.labels.class_names != self.class_names {
            return Err(LealError::Checkpoint("bundle class names differ from the checkpoint".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= bundle.n_primary()) {
            return Err(LealError::IndexOutOfRange {
                what: "primary row",
                index: bad,
                len: bundle.n_primary(),
            });
        }
        let primary = encode_with_blocks(&bundle.primary_table, &self.primary_blocks)?
            .values
            .select_rows(rows);
        let out = match &self.model {
            CheckpointModel::Leal { sampler, model } => {
                let secondary = encode_with_blocks(&bundle.secondary_table, &self.secondary_blocks)?;
                leal_outputs(
                    &self.params,
                    sampler,
                    model,
                    &primary,
                    &secondary.values,
                    self.config.k,
                    self.config.batch_size,
                    Exec::default(),
                )?
                .0
            }
            CheckpointModel::Solo { mlp } => solo_outputs(&self.params, mlp, &primary)?,
        };
        score_outputs(&out, &targets(bundle, rows), self.task)
    }
}
