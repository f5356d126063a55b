//! Table ingestion, encoding, splitting and the synthetic two-table generator.

mod bundle;
mod encode;
pub mod generators;

pub use bundle::{
    split_dataset, synthetic_feature_split, BundleManifest, DatasetBundle, Labels, Split,
};
pub use encode::{encode_and_normalize, encode_labels, encode_with_blocks, ColumnBlock, EncodedMatrix};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LealError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ColumnKind {
    Numeric,
    Categorical { categories: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn numeric(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical { categories },
        }
    }
}

/// Raw records as text, with a typed column schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Builds a table and checks every row against the schema.
    pub fn new(name: impl Into<String>, columns: Vec<Column>, rows: Vec<Vec<String>>) -> Result<Self> {
        let t = Table {
            name: name.into(),
            columns,
            rows,
        };
        t.validate()?;
        Ok(t)
    }

    /// An all-numeric table.
    pub fn from_numeric(name: impl Into<String>, names: &[String], rows: &[Vec<f64>]) -> Result<Self> {
        let columns = names.iter().map(Column::numeric).collect();
        let rows = rows
            .iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect())
            .collect();
        Table::new(name, columns, rows)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| LealError::Data(format!("table `{}` has no column `{name}`", self.name)))
    }

    pub fn column_values(&self, j: usize) -> Vec<&str> {
        self.rows.iter().map(|r| r[j].as_str()).collect()
    }

    /// Removes column `name`, returning the remaining table and that column's values.
    pub fn split_off_column(&self, name: &str) -> Result<(Table, Vec<String>)> {
        let j = self.column_index(name)?;
        let values = self.rows.iter().map(|r| r[j].clone()).collect();
        let keep: Vec<usize> = (0..self.m()).filter(|&c| c != j).collect();
        Ok((self.select_columns(&self.name, &keep), values))
    }

    pub fn select_columns(&self, name: &str, cols: &[usize]) -> Table {
        Table {
            name: name.to_string(),
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| cols.iter().map(|&c| r[c].clone()).collect())
                .collect(),
        }
    }

    /// Rows in the order given by `order` (row `i` of the result is `order[i]`).
    pub fn permute_rows(&self, order: &[usize]) -> Table {
        Table {
            name: self.name.clone(),
            columns: self.columns.clone(),
            rows: order.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.m() {
                return Err(LealError::Data(format!(
                    "table `{}` row {i} has {} values, expected {}",
                    self.name,
                    row.len(),
                    self.m()
                )));
            }
            for (value, col) in row.iter().zip(&self.columns) {
                check_value(value, col).map_err(|msg| {
                    LealError::Data(format!("table `{}` row {i}: {msg}", self.name))
                })?;
            }
        }
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let err = |line: usize, e: csv::Error| LealError::Csv {
            path: self.name.clone(),
            line,
            msg: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .map_err(|e| err(1, e))?;
        for (i, row) in self.rows.iter().enumerate() {
            w.write_record(row).map_err(|e| err(i + 2, e))?;
        }
        w.into_inner().map_err(|e| LealError::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_bytes()?)?;
        Ok(())
    }
}

fn check_value(value: &str, col: &Column) -> std::result::Result<(), String> {
    match &col.kind {
        ColumnKind::Numeric => match value.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(()),
            _ => Err(format!("column `{}` holds non-numeric value {value:?}", col.name)),
        },
        ColumnKind::Categorical { categories } => {
            if categories.iter().any(|c| c == value) {
                Ok(())
            } else {
                Err(format!(
                    "column `{}` value {value:?} is not a declared category",
                    col.name
                ))
            }
        }
    }
}

fn csv_err(path: &Path, line: usize, e: csv::Error) -> LealError {
    LealError::Csv {
        path: path.display().to_string(),
        line,
        msg: e.to_string(),
    }
}

/// Removes the target column `label` from `table`. Without an explicit
/// `classify`, a categorical target means classification and a numeric one
/// regression.
pub fn take_labels(table: &Table, label: &str, classify: Option<bool>) -> Result<(Table, Labels)> {
    let j = table.column_index(label)?;
    let classify = classify.unwrap_or(matches!(table.columns[j].kind, ColumnKind::Categorical { .. }));
    let (rest, raw) = table.split_off_column(label)?;
    let (values, task, class_names) = encode_labels(&raw, classify)?;
    Ok((
        rest,
        Labels {
            values,
            task,
            class_names,
        },
    ))
}

/// Reads a headed, comma-separated file. With a `schema` the header must
/// match it; otherwise a column is numeric when every value parses as a
/// number and categorical (first-appearance category order) when not.
pub fn load_csv(path: &Path, schema: Option<&[Column]>) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, 0, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, 1, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(LealError::Csv {
            path: path.display().to_string(),
            line: 1,
            msg: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            csv_err(path, line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(LealError::Csv {
                path: path.display().to_string(),
                line,
                msg: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        rows.push(record.iter().map(|v| v.trim().to_string()).collect::<Vec<_>>());
    }
    let stem = path
        .file_stem()
        .map_or_else(|| "table".to_string(), |s| s.to_string_lossy().into_owned());

    let columns = match schema {
        Some(schema) => {
            let names: Vec<&str> = schema.iter().map(|c| c.name.as_str()).collect();
            if names != header.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(LealError::Csv {
                    path: path.display().to_string(),
                    line: 1,
                    msg: format!("header {header:?} does not match schema {names:?}"),
                });
            }
            schema.to_vec()
        }
        None => infer_columns(&header, &rows),
    };
    for (i, row) in rows.iter().enumerate() {
        for (value, col) in row.iter().zip(&columns) {
            check_value(value, col).map_err(|msg| LealError::Csv {
                path: path.display().to_string(),
                line: i + 2,
                msg,
            })?;
        }
    }
    Ok(Table {
        name: stem,
        columns,
        rows,
    })
}

fn infer_columns(header: &[String], rows: &[Vec<String>]) -> Vec<Column> {
    header
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let numeric = !rows.is_empty()
                && rows
                    .iter()
                    .all(|r| r[j].parse::<f64>().is_ok_and(f64::is_finite));
            if numeric {
                Column::numeric(name.clone())
            } else {
                let mut categories: Vec<String> = Vec::new();
                for r in rows {
                    if !categories.contains(&r[j]) {
                        categories.push(r[j].clone());
                    }
                }
                Column::categorical(name.clone(), categories)
            }
        })
        .collect()
}
