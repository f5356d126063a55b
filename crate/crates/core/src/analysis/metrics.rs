use crate::error::{LealError, Result};
use crate::nn::Task;

/// Accuracy for classification (predictions are class indices), RMSE for regression.
pub fn eval_metrics(predictions: &[f64], targets: &[f64], task: Task) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(LealError::shape("eval_metrics", &[predictions.len()], &[targets.len()]));
    }
    if predictions.is_empty() {
        return Err(LealError::Data("cannot score zero predictions".into()));
    }
    let n = predictions.len() as f64;
    Ok(match task {
        Task::Classification { .. } => {
            predictions.iter().zip(targets).filter(|(p, t)| p == t).count() as f64 / n
        }
        Task::Regression => {
            (predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n).sqrt()
        }
    })
}

/// Name of the metric [`eval_metrics`] reports for `task`.
pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification { .. } => "accuracy",
        Task::Regression => "rmse",
    }
}

/// Whether a larger value of the task's metric is better.
pub fn higher_is_better(task: Task) -> bool {
    task.is_classification()
}

#[cfg(test)]
mod tests {
    use super::*;

    const CLS: Task = Task::Classification { classes: 2 };

    #[test]
    fn examples() {
        assert_eq!(eval_metrics(&[1.0, 0.0], &[1.0, 0.0], CLS).unwrap(), 1.0);
        assert_eq!(eval_metrics(&[0.5, 2.0], &[0.5, 2.0], Task::Regression).unwrap(), 0.0);
        assert_eq!(eval_metrics(&[0.0, 0.0], &[0.0, 1.0], CLS).unwrap(), 0.5);
        assert_eq!(eval_metrics(&[3.0], &[0.0], Task::Regression).unwrap(), 3.0);
        assert!(eval_metrics(&[], &[], CLS).is_err());
    }
}
