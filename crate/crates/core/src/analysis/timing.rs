use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{LealError, Result};
use crate::training::{train_leal, LealConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub k: usize,
    /// Mean and sample std of epoch time over two runs, first epoch of each
    /// discarded.
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub epochs_measured: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub points: Vec<TimingPoint>,
    /// Least-squares slope of `ln(mean_seconds)` against `ln k`.
    pub slope: f64,
    pub strictly_increasing: bool,
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Trains for `epochs` epochs (early stopping off) at each candidate count
/// and fits the log-log growth of epoch time.
///
/// Runs go in ascending then descending order of `k`, and each point pools
/// the epochs of both runs, so a steady drift in machine speed lands on every
/// `k` equally.
pub fn timing_scaling(bundle: &DatasetBundle, k_list: &[usize], config: &LealConfig, epochs: usize) -> Result<TimingReport> {
    if k_list.len() < 3 {
        return Err(LealError::Config(format!("timing needs at least 3 values of k, got {}", k_list.len())));
    }
    if epochs < 3 {
        return Err(LealError::Config(format!("timing needs at least 3 epochs per k, got {epochs}")));
    }
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); k_list.len()];
    let order = (0..k_list.len()).chain((0..k_list.len()).rev());
    for i in order {
        let cfg = LealConfig {
            k: k_list[i],
            max_epochs: epochs,
            patience: epochs,
            ..config.clone()
        };
        let run = train_leal(bundle, &cfg)?;
        samples[i].extend(run.report.epochs.iter().skip(1).map(|e| e.seconds));
    }
    let points: Vec<TimingPoint> = k_list
        .iter()
        .zip(&samples)
        .map(|(&k, times)| {
            let m = times.len() as f64;
            let mean = times.iter().sum::<f64>() / m;
            let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            TimingPoint {
                k,
                mean_seconds: mean,
                std_seconds: var.sqrt(),
                epochs_measured: times.len(),
            }
        })
        .collect();
    let lx: Vec<f64> = points.iter().map(|p| (p.k as f64).ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.mean_seconds.ln()).collect();
    let mut by_k = points.clone();
    by_k.sort_by_key(|p| p.k);
    Ok(TimingReport {
        slope: fit_slope(&lx, &ly),
        strictly_increasing: by_k.windows(2).all(|w| w[1].mean_seconds > w[0].mean_seconds),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let x: Vec<f64> = [5.0f64, 10.0, 20.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [5.0f64, 10.0, 20.0].iter().map(|v| (3.0 * v * v).ln()).collect();
        assert!((fit_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
