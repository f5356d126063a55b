//! Seeded table generators for experiments and tests.

use super::{Labels, Table};
use crate::error::Result;
use crate::nn::Task;
use crate::tensor::{RngStream, StreamLabel};

const LETTER_CLASSES: usize = 26;
const LETTER_FEATURES: usize = 16;

/// A stand-in for the letter-recognition table: 26 balanced classes and 16
/// integer features in `0..=15`, each a class prototype value plus rounded
/// Gaussian noise of standard deviation `noise`, clipped to the range.
pub fn letter_style(n: usize, noise: f64, seed: u64) -> Result<(Table, Labels)> {
    let base = RngStream::new(seed, StreamLabel::Synth);
    let mut proto_rng = base.substream(0);
    let prototypes: Vec<Vec<f64>> = (0..LETTER_CLASSES)
        .map(|_| (0..LETTER_FEATURES).map(|_| proto_rng.below(16) as f64).collect())
        .collect();
    let mut rng = base.substream(1);
    let mut classes: Vec<usize> = (0..n).map(|i| i % LETTER_CLASSES).collect();
    rng.shuffle(&mut classes);
    let rows: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            prototypes[c]
                .iter()
                .map(|&p| (p + noise * rng.normal()).round().clamp(0.0, 15.0))
                .collect()
        })
        .collect();
    let names: Vec<String> = (0..LETTER_FEATURES).map(|j| format!("x{j}")).collect();
    let class_names: Vec<String> = (0..LETTER_CLASSES)
        .map(|c| char::from(b'A' + c as u8).to_string())
        .collect();
    let labels = Labels {
        values: classes.iter().map(|&c| c as f64).collect(),
        task: Task::Classification {
            classes: LETTER_CLASSES,
        },
        class_names,
    };
    Ok((Table::from_numeric("letter", &names, &rows)?, labels))
}

/// Standard-normal features with a linear target `y = Σ_j w_j x_j + noise·ε`,
/// weights drawn from `uniform(−1, 1)`.
pub fn linear_regression(n: usize, m: usize, noise: f64, seed: u64) -> Result<(Table, Labels)> {
    let base = RngStream::new(seed, StreamLabel::Synth);
    let mut wrng = base.substream(0);
    let w: Vec<f64> = (0..m).map(|_| wrng.uniform_range(-1.0, 1.0)).collect();
    let mut rng = base.substream(1);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.normal()).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| r.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + noise * rng.normal())
        .collect();
    let names: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
    let labels = Labels {
        values: y,
        task: Task::Regression,
        class_names: Vec::new(),
    };
    Ok((Table::from_numeric("linear", &names, &rows)?, labels))
}

/// Two classes separated by the sign of a random linear score over
/// standard-normal features, with rows inside a margin of `margin` rejected.
pub fn separable_classes(n: usize, m: usize, margin: f64, seed: u64) -> Result<(Table, Labels)> {
    let base = RngStream::new(seed, StreamLabel::Synth);
    let mut wrng = base.substream(0);
    let w: Vec<f64> = (0..m).map(|_| wrng.normal()).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rng = base.substream(1);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    while rows.len() < n {
        let r: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let score = r.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / norm;
        if score.abs() >= margin {
            y.push(if score > 0.0 { 1.0 } else { 0.0 });
            rows.push(r);
        }
    }
    let names: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
    let labels = Labels {
        values: y,
        task: Task::Classification { classes: 2 },
        class_names: vec!["0".into(), "1".into()],
    };
    Ok((Table::from_numeric("separable", &names, &rows)?, labels))
}
