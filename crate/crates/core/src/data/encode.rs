use serde::{Deserialize, Serialize};

use super::{ColumnKind, Table};
use crate::error::{LealError, Result};
use crate::nn::Task;
use crate::tensor::Tensor;

/// Where one source column landed in the encoded matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnBlock {
    pub name: String,
    pub start: usize,
    pub width: usize,
    /// Present for one-hot blocks.
    pub categories: Option<Vec<String>>,
    /// Training-row mean and std used for numeric columns.
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    pub values: Tensor,
    pub blocks: Vec<ColumnBlock>,
}

impl EncodedMatrix {
    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// The category of one-hot column `block` in row `row` (largest entry).
    pub fn decode_category(&self, row: usize, block: usize) -> Option<&str> {
        let b = &self.blocks[block];
        let cats = b.categories.as_ref()?;
        let r = &self.values.row(row)[b.start..b.start + b.width];
        let best = (0..b.width).fold(0, |best, j| if r[j] > r[best] { j } else { best });
        Some(cats[best].as_str())
    }

    pub fn select_rows(&self, idx: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            values: self.values.select_rows(idx),
            blocks: self.blocks.clone(),
        }
    }
}

/// One-hot encodes categorical columns and z-scores numeric ones with
/// population statistics of `train_rows`; a constant column keeps std 1.
pub fn encode_and_normalize(table: &Table, train_rows: &[usize]) -> Result<EncodedMatrix> {
    if train_rows.is_empty() {
        return Err(LealError::Data("normalization needs at least one training row".into()));
    }
    if let Some(&bad) = train_rows.iter().find(|&&r| r >= table.n()) {
        return Err(LealError::IndexOutOfRange {
            what: "training row",
            index: bad,
            len: table.n(),
        });
    }
    let mut blocks = Vec::with_capacity(table.m());
    let mut start = 0;
    for col in &table.columns {
        let width = match &col.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical { categories } => categories.len(),
        };
        blocks.push(ColumnBlock {
            name: col.name.clone(),
            start,
            width,
            categories: match &col.kind {
                ColumnKind::Numeric => None,
                ColumnKind::Categorical { categories } => Some(categories.clone()),
            },
            mean: 0.0,
            std: 1.0,
        });
        start += width;
    }
    let width = start;
    let n = table.n();
    let mut data = vec![0.0; n * width];
    for (j, (col, block)) in table.columns.iter().zip(blocks.iter_mut()).enumerate() {
        match &col.kind {
            ColumnKind::Numeric => {
                let raw: Vec<f64> = table
                    .rows
                    .iter()
                    .map(|r| r[j].trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| LealError::Data(format!("column `{}` is not numeric", col.name)))?;
                let t = train_rows.len() as f64;
                let mean = train_rows.iter().map(|&i| raw[i]).sum::<f64>() / t;
                let var = train_rows.iter().map(|&i| (raw[i] - mean).powi(2)).sum::<f64>() / t;
                let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
                block.mean = mean;
                block.std = std;
                for (i, v) in raw.iter().enumerate() {
                    data[i * width + block.start] = (v - mean) / std;
                }
            }
            ColumnKind::Categorical { categories } => {
                for (i, row) in table.rows.iter().enumerate() {
                    let c = categories.iter().position(|c| *c == row[j]).ok_or_else(|| {
                        LealError::Data(format!(
                            "column `{}` value {:?} is not a declared category",
                            col.name, row[j]
                        ))
                    })?;
                    data[i * width + block.start + c] = 1.0;
                }
            }
        }
    }
    Ok(EncodedMatrix {
        values: Tensor::new(vec![n, width], data)?,
        blocks,
    })
}

/// Encodes `table` with a stored layout: the same columns in the same order,
/// the stored categories and the stored numeric statistics.
pub fn encode_with_blocks(table: &Table, blocks: &[ColumnBlock]) -> Result<EncodedMatrix> {
    if table.m() != blocks.len() || table.columns.iter().zip(blocks).any(|(c, b)| c.name != b.name) {
        return Err(LealError::Data(format!(
            "table `{}` columns do not match the stored layout ({} columns expected)",
            table.name,
            blocks.len()
        )));
    }
    let width = blocks.last().map_or(0, |b| b.start + b.width);
    let n = table.n();
    let mut data = vec![0.0; n * width];
    for (j, block) in blocks.iter().enumerate() {
        for (i, row) in table.rows.iter().enumerate() {
            let v = &row[j];
            match &block.categories {
                None => {
                    let x: f64 = v.trim().parse().map_err(|_| {
                        LealError::Data(format!("column `{}` value {v:?} is not numeric", block.name))
                    })?;
                    data[i * width + block.start] = (x - block.mean) / block.std;
                }
                Some(cats) => {
                    let c = cats.iter().position(|c| c == v).ok_or_else(|| {
                        LealError::Data(format!("column `{}` value {v:?} was not seen in training", block.name))
                    })?;
                    data[i * width + block.start + c] = 1.0;
                }
            }
        }
    }
    Ok(EncodedMatrix {
        values: Tensor::new(vec![n, width], data)?,
        blocks: blocks.to_vec(),
    })
}

/// Class indices in first-appearance order (classification) or parsed values
/// (regression). Returns the labels and, for classification, the class names.
pub fn encode_labels(raw: &[String], classify: bool) -> Result<(Vec<f64>, Task, Vec<String>)> {
    if classify {
        let mut names: Vec<String> = Vec::new();
        let mut y = Vec::with_capacity(raw.len());
        for v in raw {
            let idx = match names.iter().position(|n| n == v) {
                Some(i) => i,
                None => {
                    names.push(v.clone());
                    names.len() - 1
                }
            };
            y.push(idx as f64);
        }
        let task = Task::Classification {
            classes: names.len(),
        };
        Ok((y, task, names))
    } else {
        let y = raw
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| LealError::Data(format!("regression target {v:?} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((y, Task::Regression, Vec::new()))
    }
}
