use serde::{Deserialize, Serialize};

use crate::error::{LealError, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

impl Task {
    /// Width of the prediction head.
    pub fn output_width(self) -> usize {
        match self {
            Task::Classification { classes } => classes,
            Task::Regression => 1,
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

/// Mean cross-entropy for classification (targets hold class indices),
/// mean squared error for regression.
pub fn compute_loss(tape: &mut Tape, task: Task, prediction: Var, target: &[f64]) -> Result<Var> {
    match task {
        Task::Classification { classes } => {
            let idx = class_indices(target, classes)?;
            tape.cross_entropy(prediction, &idx)
        }
        Task::Regression => {
            let shape = tape.shape(prediction).to_vec();
            if tape.value(prediction).numel() != target.len() {
                return Err(LealError::shape("compute_loss", &shape, &[target.len()]));
            }
            let t = tape.constant(Tensor::new(shape, target.to_vec())?);
            tape.mse(prediction, t)
        }
    }
}

pub(crate) fn class_indices(target: &[f64], classes: usize) -> Result<Vec<usize>> {
    target
        .iter()
        .map(|&y| {
            if y < 0.0 || y.fract() != 0.0 || y as usize >= classes {
                Err(LealError::IndexOutOfRange {
                    what: "class label",
                    index: y.max(0.0) as usize,
                    len: classes,
                })
            } else {
                Ok(y as usize)
            }
        })
        .collect()
}
