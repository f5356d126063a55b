//! Builds the bundle a run trains on.

use std::path::PathBuf;

use leal_core::data::generators::{letter_style, linear_regression, separable_classes};
use leal_core::data::{load_csv, synthetic_feature_split, take_labels, DatasetBundle};
use leal_core::tensor::{RngStream, StreamLabel};

use crate::config::{DataConfig, Generator, TaskKind};
use crate::error::CliError;

/// The bundle for run seed `seed`. A saved bundle is used as is; tables read
/// or generated here are split by features with `split_seed`, or with the
/// run seed when none is set.
pub fn bundle_for(data: &DataConfig, seed: u64) -> Result<DatasetBundle, CliError> {
    let split_seed = data.split_seed.unwrap_or(seed);
    if let Some(dir) = &data.bundle {
        return Ok(DatasetBundle::load(dir)?);
    }
    let (table, labels) = if let Some(path) = &data.input {
        let table = load_csv(path, None)?;
        let classify = data.task.map(|t| t == TaskKind::Classification);
        take_labels(&table, &data.label, classify)?
    } else {
        match data.generator {
            Some(Generator::Letter) => letter_style(data.rows, data.noise, split_seed)?,
            Some(Generator::Linear) => linear_regression(data.rows, data.features, data.noise, split_seed)?,
            Some(Generator::Separable) => separable_classes(data.rows, data.features, data.margin, split_seed)?,
            None => {
                return Err(CliError::Config {
                    path: "data".into(),
                    msg: "no data source".into(),
                })
            }
        }
    };
    Ok(synthetic_feature_split(
        &table,
        labels,
        &RngStream::new(split_seed, StreamLabel::Synth),
        data.shuffle_secondary,
    )?)
}

/// Files read by [`bundle_for`].
pub fn input_paths(data: &DataConfig) -> Vec<PathBuf> {
    data.bundle.iter().chain(&data.input).cloned().collect()
}
