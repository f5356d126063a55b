use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{encode_and_normalize, load_csv, Column, EncodedMatrix, Table};
use crate::error::{LealError, Result};
use crate::nn::Task;
use crate::tensor::RngStream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// A random 7:1:2 partition of `0..n` with sizes `⌊0.7n⌋`, `⌊0.1n⌋` and the rest.
pub fn split_dataset(n: usize, stream: &mut RngStream) -> Result<Split> {
    if n < 10 {
        return Err(LealError::Data(format!("cannot split {n} rows; at least 10 are needed")));
    }
    let perm = stream.permutation(n);
    let n_train = 7 * n / 10;
    let n_val = n / 10;
    Ok(Split {
        train: perm[..n_train].to_vec(),
        val: perm[n_train..n_train + n_val].to_vec(),
        test: perm[n_train + n_val..].to_vec(),
    })
}

/// Encoded targets together with the task they define.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub values: Vec<f64>,
    pub task: Task,
    /// Class names by index; empty for regression.
    pub class_names: Vec<String>,
}

/// A primary table with labels, an unkeyed secondary table, and the split.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub name: String,
    pub primary_table: Table,
    pub secondary_table: Table,
    pub primary: EncodedMatrix,
    pub secondary: EncodedMatrix,
    pub labels: Labels,
    pub split: Split,
    /// `ground_truth[i]` is the secondary row holding primary row `i`'s entity.
    pub ground_truth: Option<Vec<usize>>,
    pub secondary_shuffled: bool,
    pub seed: Option<u64>,
}

impl DatasetBundle {
    /// Encodes both tables: the primary with training-row statistics, the
    /// secondary (which carries no labels) with all of its rows.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        primary_table: Table,
        labels: Labels,
        secondary_table: Table,
        split: Split,
        ground_truth: Option<Vec<usize>>,
        secondary_shuffled: bool,
        seed: Option<u64>,
    ) -> Result<Self> {
        let n = primary_table.n();
        if labels.values.len() != n {
            return Err(LealError::Data(format!(
                "{} labels for {n} primary rows",
                labels.values.len()
            )));
        }
        check_split(&split, n)?;
        if let Some(shared) = primary_table
            .columns
            .iter()
            .find(|c| secondary_table.columns.iter().any(|s| s.name == c.name))
        {
            return Err(LealError::Data(format!(
                "column `{}` appears in both tables",
                shared.name
            )));
        }
        if secondary_table.n() == 0 {
            return Err(LealError::Data("secondary table is empty".into()));
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != n || gt.iter().any(|&j| j >= secondary_table.n()) {
                return Err(LealError::Data("ground-truth alignment does not fit the tables".into()));
            }
        }
        if let Task::Classification { classes } = labels.task {
            crate::nn::class_indices(&labels.values, classes)?;
        }
        let all: Vec<usize> = (0..secondary_table.n()).collect();
        let primary = encode_and_normalize(&primary_table, &split.train)?;
        let secondary = encode_and_normalize(&secondary_table, &all)?;
        Ok(DatasetBundle {
            name: name.into(),
            primary_table,
            secondary_table,
            primary,
            secondary,
            labels,
            split,
            ground_truth,
            secondary_shuffled,
            seed,
        })
    }

    pub fn task(&self) -> Task {
        self.labels.task
    }

    pub fn n_primary(&self) -> usize {
        self.primary_table.n()
    }

    pub fn n_secondary(&self) -> usize {
        self.secondary_table.n()
    }

    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            name: self.name.clone(),
            seed: self.seed,
            task: self.labels.task,
            class_names: self.labels.class_names.clone(),
            label_column: label_column(&self.primary_table),
            primary_rows: self.primary_table.n(),
            primary_columns: self.primary_table.columns.clone(),
            primary_encoded_width: self.primary.width(),
            secondary_rows: self.secondary_table.n(),
            secondary_columns: self.secondary_table.columns.clone(),
            secondary_encoded_width: self.secondary.width(),
            split_sizes: self.split.sizes(),
            split: self.split.clone(),
            secondary_shuffled: self.secondary_shuffled,
            ground_truth: self.ground_truth.clone(),
        }
    }

    /// Contents of `primary.csv` (features and label), `secondary.csv` and
    /// `bundle.json`, by file name.
    pub fn to_files(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let manifest = self.manifest();
        let mut with_label = self.primary_table.clone();
        with_label.columns.push(match self.labels.task {
            Task::Classification { .. } => {
                Column::categorical(manifest.label_column.clone(), manifest.class_names.clone())
            }
            Task::Regression => Column::numeric(manifest.label_column.clone()),
        });
        for (row, &y) in with_label.rows.iter_mut().zip(&self.labels.values) {
            row.push(match self.labels.task {
                Task::Classification { .. } => self.labels.class_names[y as usize].clone(),
                Task::Regression => y.to_string(),
            });
        }
        Ok(vec![
            ("primary.csv", with_label.to_csv_bytes()?),
            ("secondary.csv", self.secondary_table.to_csv_bytes()?),
            ("bundle.json", serde_json::to_vec_pretty(&manifest)?),
        ])
    }

    /// Writes the files of [`DatasetBundle::to_files`] into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in self.to_files()? {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    /// Reads a directory written by [`DatasetBundle::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("bundle.json"))?)?;
        let mut schema = manifest.primary_columns.clone();
        schema.push(match manifest.task {
            Task::Classification { .. } => {
                Column::categorical(manifest.label_column.clone(), manifest.class_names.clone())
            }
            Task::Regression => Column::numeric(manifest.label_column.clone()),
        });
        let full = load_csv(&dir.join("primary.csv"), Some(&schema))?;
        let (mut primary_table, raw) = full.split_off_column(&manifest.label_column)?;
        primary_table.name = "primary".into();
        let values = match manifest.task {
            Task::Classification { .. } => raw
                .iter()
                .map(|v| manifest.class_names.iter().position(|c| c == v).unwrap() as f64)
                .collect(),
            Task::Regression => raw.iter().map(|v| v.parse::<f64>().unwrap()).collect(),
        };
        let mut secondary_table =
            load_csv(&dir.join("secondary.csv"), Some(&manifest.secondary_columns))?;
        secondary_table.name = "secondary".into();
        DatasetBundle::new(
            manifest.name,
            primary_table,
            Labels {
                values,
                task: manifest.task,
                class_names: manifest.class_names,
            },
            secondary_table,
            manifest.split,
            manifest.ground_truth,
            manifest.secondary_shuffled,
            manifest.seed,
        )
    }
}

fn label_column(primary: &Table) -> String {
    let mut name = "label".to_string();
    while primary.columns.iter().any(|c| c.name == name) {
        name.push('_');
    }
    name
}

fn check_split(split: &Split, n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in split.train.iter().chain(&split.val).chain(&split.test) {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(LealError::Data(format!(
                "split indices are not a disjoint cover of 0..{n}"
            )));
        }
    }
    if seen.iter().any(|s| !s) || split.train.is_empty() {
        return Err(LealError::Data(format!(
            "split indices are not a disjoint cover of 0..{n} with a training part"
        )));
    }
    Ok(())
}

/// Reproducibility record of a bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub name: String,
    pub seed: Option<u64>,
    pub task: Task,
    pub class_names: Vec<String>,
    pub label_column: String,
    pub primary_rows: usize,
    pub primary_columns: Vec<Column>,
    pub primary_encoded_width: usize,
    pub secondary_rows: usize,
    pub secondary_columns: Vec<Column>,
    pub secondary_encoded_width: usize,
    pub split_sizes: [usize; 3],
    pub split: Split,
    pub secondary_shuffled: bool,
    pub ground_truth: Option<Vec<usize>>,
}

/// Splits the features of one table into a primary part (`⌈m/2⌉` columns,
/// keeps the labels) and a secondary part (`⌊m/2⌋` columns). With
/// `shuffle_secondary` the secondary rows are permuted and the true
/// correspondence is kept as ground truth.
pub fn synthetic_feature_split(
    table: &Table,
    labels: Labels,
    stream: &RngStream,
    shuffle_secondary: bool,
) -> Result<DatasetBundle> {
    let m = table.m();
    if m < 2 {
        return Err(LealError::Data(format!(
            "a feature split needs at least 2 features, table `{}` has {m}",
            table.name
        )));
    }
    let n = table.n();
    let cols = stream.substream(0).permutation(m);
    let n_primary = m.div_ceil(2);
    let mut primary_cols = cols[..n_primary].to_vec();
    let mut secondary_cols = cols[n_primary..].to_vec();
    primary_cols.sort_unstable();
    secondary_cols.sort_unstable();

    let order: Vec<usize> = if shuffle_secondary {
        stream.substream(1).permutation(n)
    } else {
        (0..n).collect()
    };
    let mut ground_truth = vec![0; n];
    for (pos, &orig) in order.iter().enumerate() {
        ground_truth[orig] = pos;
    }
    let primary = table.select_columns("primary", &primary_cols);
    let secondary = table
        .select_columns("secondary", &secondary_cols)
        .permute_rows(&order);
    let split = split_dataset(n, &mut stream.substream(2))?;
    DatasetBundle::new(
        table.name.clone(),
        primary,
        labels,
        secondary,
        split,
        Some(ground_truth),
        shuffle_secondary,
        Some(stream.seed()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::StreamLabel;

    fn stream(seed: u64) -> RngStream {
        RngStream::new(seed, StreamLabel::Shuffle)
    }

    fn table(n: usize, m: usize) -> (Table, Labels) {
        let names: Vec<String> = (0..m).map(|j| format!("f{j}")).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..m).map(|j| (i * m + j) as f64).collect())
            .collect();
        let labels = Labels {
            values: (0..n).map(|i| (i % 2) as f64).collect(),
            task: Task::Classification { classes: 2 },
            class_names: vec!["a".into(), "b".into()],
        };
        (Table::from_numeric("t", &names, &rows).unwrap(), labels)
    }

    #[test]
    fn split_sizes() {
        assert_eq!(split_dataset(100, &mut stream(0)).unwrap().sizes(), [70, 10, 20]);
        assert_eq!(split_dataset(10, &mut stream(0)).unwrap().sizes(), [7, 1, 2]);
        assert!(split_dataset(9, &mut stream(0)).is_err());
        assert_eq!(
            split_dataset(57, &mut stream(4)).unwrap(),
            split_dataset(57, &mut stream(4)).unwrap()
        );
    }

    #[test]
    fn feature_split_shapes() {
        let (t, y) = table(20, 10);
        let b = synthetic_feature_split(&t, y, &stream(1), true).unwrap();
        assert_eq!((b.primary_table.m(), b.secondary_table.m()), (5, 5));
        let (t, y) = table(20, 7);
        let b = synthetic_feature_split(&t, y, &stream(1), true).unwrap();
        assert_eq!((b.primary_table.m(), b.secondary_table.m()), (4, 3));
        let (t, y) = table(20, 1);
        assert!(synthetic_feature_split(&t, y, &stream(1), true).is_err());
    }

    #[test]
    fn unshuffled_secondary_keeps_positions() {
        let (t, y) = table(12, 4);
        let b = synthetic_feature_split(&t, y, &stream(2), false).unwrap();
        assert_eq!(b.ground_truth.unwrap(), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn save_and_load() {
        let (t, y) = table(15, 5);
        let b = synthetic_feature_split(&t, y, &stream(3), true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        let back = DatasetBundle::load(dir.path()).unwrap();
        assert_eq!(back.manifest(), b.manifest());
        assert_eq!(back.primary, b.primary);
        assert_eq!(back.secondary, b.secondary);
        assert_eq!(back.labels, b.labels);
    }

    #[test]
    fn shared_column_rejected() {
        let (t, y) = table(10, 2);
        let split = split_dataset(10, &mut stream(0)).unwrap();
        let r = DatasetBundle::new("x", t.clone(), y, t, split, None, false, None);
        assert!(r.is_err());
    }
}
