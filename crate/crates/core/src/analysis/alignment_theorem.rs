use serde::{Deserialize, Serialize};

use super::ols::{ols_fit, Qr};
use crate::error::{LealError, Result};
use crate::tensor::{RngStream, StreamLabel};

/// How the feature columns of a linear instance are normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Column means removed.
    #[default]
    Centered,
    /// Centered, then divided by the population standard deviation.
    Standardized,
    /// Scaled to unit Euclidean norm, means kept.
    UnitNorm,
}

impl Normalization {
    pub fn apply(self, column: &mut [f64]) {
        let n = column.len() as f64;
        let mean = column.iter().sum::<f64>() / n;
        match self {
            Normalization::Centered => column.iter_mut().for_each(|v| *v -= mean),
            Normalization::Standardized => {
                column.iter_mut().for_each(|v| *v -= mean);
                let sd = (column.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
                if sd > 0.0 {
                    column.iter_mut().for_each(|v| *v /= sd);
                }
            }
            Normalization::UnitNorm => {
                let len = column.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len > 0.0 {
                    column.iter_mut().for_each(|v| *v /= len);
                }
            }
        }
    }
}

/// A linear regression task over two tables whose rows are related by a
/// hidden permutation. Columns are stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoremInstance {
    pub primary: Vec<Vec<f64>>,
    /// Secondary columns in stored (shuffled) row order.
    pub secondary: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Row `i` of the primary table belongs with stored secondary row `alignment[i]`.
    pub alignment: Vec<usize>,
    pub sigma: f64,
    pub normalization: Normalization,
}

impl TheoremInstance {
    /// Gaussian features and coefficients, `y = X^P α + R X^S β + σ ε`.
    pub fn random(n: usize, mp: usize, ms: usize, sigma: f64, normalization: Normalization, seed: u64) -> Result<Self> {
        if n <= mp + ms {
            return Err(LealError::Config(format!(
                "need more rows than features, got n={n} with {mp}+{ms} features"
            )));
        }
        let base = RngStream::new(seed, StreamLabel::Synth);
        let mut rng = base.substream(0);
        let column = |rng: &mut RngStream| {
            let mut c: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            normalization.apply(&mut c);
            c
        };
        let primary: Vec<Vec<f64>> = (0..mp).map(|_| column(&mut rng)).collect();
        let secondary: Vec<Vec<f64>> = (0..ms).map(|_| column(&mut rng)).collect();
        let mut coef = base.substream(1);
        let alpha: Vec<f64> = (0..mp).map(|_| coef.normal()).collect();
        let beta: Vec<f64> = (0..ms).map(|_| coef.normal()).collect();
        let alignment = base.substream(2).permutation(n);
        let mut noise = base.substream(3);
        let y = (0..n)
            .map(|i| {
                let p: f64 = primary.iter().zip(&alpha).map(|(c, a)| c[i] * a).sum();
                let s: f64 = secondary.iter().zip(&beta).map(|(c, b)| c[alignment[i]] * b).sum();
                p + s + sigma * noise.normal()
            })
            .collect();
        Ok(TheoremInstance {
            primary,
            secondary,
            y,
            alpha,
            beta,
            alignment,
            sigma,
            normalization,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Secondary columns with rows reordered by `order` (`out[i] = col[order[i]]`).
    pub fn secondary_rows(&self, order: &[usize]) -> Vec<Vec<f64>> {
        self.secondary
            .iter()
            .map(|c| order.iter().map(|&i| c[i]).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTheoremReport {
    pub mse_aligned: f64,
    /// Residual MSE of `y` on the primary columns alone.
    pub mse_misaligned_closed_form: f64,
    /// Mean over random alignments of the jointly fitted residual MSE.
    pub mse_misaligned_mc: f64,
    pub mc_standard_error: f64,
    pub n_perms: usize,
    pub holds: bool,
    /// `mse_misaligned_mc ≥ mse_aligned − 3·SE`.
    pub mc_consistent: bool,
    pub normalization: Normalization,
}

/// Compares the least-squares fit under the true alignment with fits under
/// wrong alignments.
///
/// The aligned and primary-only fits share one factorization: the aligned
/// residual is the primary-only residual with its component in the
/// secondary directions removed, so `holds` compares nested quantities.
pub fn verify_alignment_theorem(instance: &TheoremInstance, n_perms: usize, seed: u64) -> Result<AlignmentTheoremReport> {
    if n_perms == 0 {
        return Err(LealError::Config("n_perms must be at least 1".into()));
    }
    let n = instance.n();
    let mp = instance.primary.len();
    if n <= mp + instance.secondary.len() {
        return Err(LealError::Config(format!("n={n} must exceed the total feature count")));
    }
    let mut qr = Qr::new(n, false);
    for c in &instance.primary {
        qr.push(c)?;
    }
    let r_p = qr.residual(&instance.y);
    let rss_p: f64 = r_p.iter().map(|v| v * v).sum();
    for c in instance.secondary_rows(&instance.alignment) {
        qr.push(&c)?;
    }
    let rss_aligned = (rss_p - qr.projected_sq(&r_p, mp)).max(0.0);
    let mse_aligned = rss_aligned / n as f64;
    let mse_closed = rss_p / n as f64;

    let mut rng = RngStream::new(seed, StreamLabel::Shuffle);
    let mut samples = Vec::with_capacity(n_perms);
    for _ in 0..n_perms {
        let order = rng.permutation(n);
        let mut cols = instance.primary.clone();
        cols.extend(instance.secondary_rows(&order));
        samples.push(ols_fit(&cols, &instance.y, false)?.mse);
    }
    let mean = samples.iter().sum::<f64>() / n_perms as f64;
    let se = if n_perms > 1 {
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_perms - 1) as f64;
        (var / n_perms as f64).sqrt()
    } else {
        0.0
    };
    Ok(AlignmentTheoremReport {
        mse_aligned,
        mse_misaligned_closed_form: mse_closed,
        mse_misaligned_mc: mean,
        mc_standard_error: se,
        n_perms,
        holds: mse_aligned <= mse_closed,
        mc_consistent: mean >= mse_aligned - 3.0 * se,
        normalization: instance.normalization,
    })
}

/// One feature per table and a binary label, the label being the side of
/// a line through both features.
#[derive(Clone, Debug, PartialEq)]
pub struct MotivationTask {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y: Vec<f64>,
}

impl MotivationTask {
    pub fn generate(n: usize, seed: u64) -> Result<Self> {
        if n < 100 {
            return Err(LealError::Config(format!("the motivation task needs n ≥ 100, got {n}")));
        }
        let mut rng = RngStream::new(seed, StreamLabel::Synth);
        let x1: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y = x1.iter().zip(&x2).map(|(a, b)| if a + b > 0.0 { 1.0 } else { 0.0 }).collect();
        Ok(MotivationTask { x1, x2, y })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearBoundary {
    /// Intercept, `x1` and `x2` coefficients.
    pub coefficients: [f64; 3],
    pub converged_mse: f64,
}

impl LinearBoundary {
    /// `x2` where the fitted value crosses 1/2, if the `x2` coefficient is non-zero.
    pub fn x2_at(&self, x1: f64) -> Option<f64> {
        let [b0, b1, b2] = self.coefficients;
        (b2.abs() > 1e-12).then(|| (0.5 - b0 - b1 * x1) / b2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotivationReport {
    pub aligned: LinearBoundary,
    pub misaligned: LinearBoundary,
    /// Plot data with header `alignment,series,x1,x2,y`.
    pub csv: String,
}

/// Least-squares fits of the label on both features under the true row
/// pairing and under a random one. Least squares is solved exactly, so the
/// reported MSE is the converged training loss of gradient descent.
pub fn motivation_experiment(task: &MotivationTask, seed: u64) -> Result<MotivationReport> {
    let n = task.y.len();
    let order = RngStream::new(seed, StreamLabel::Shuffle).permutation(n);
    let x2_shuffled: Vec<f64> = order.iter().map(|&i| task.x2[i]).collect();
    let fit = |x2: &[f64]| -> Result<LinearBoundary> {
        let f = ols_fit(&[vec![1.0; n], task.x1.clone(), x2.to_vec()], &task.y, true)?;
        Ok(LinearBoundary {
            coefficients: [f.coefficients[0], f.coefficients[1], f.coefficients[2]],
            converged_mse: f.mse,
        })
    };
    let aligned = fit(&task.x2)?;
    let misaligned = fit(&x2_shuffled)?;

    let mut csv = String::from("alignment,series,x1,x2,y\n");
    let shown = n.min(500);
    for (name, x2, b) in [("aligned", &task.x2, &aligned), ("misaligned", &x2_shuffled, &misaligned)] {
        for i in 0..shown {
            csv.push_str(&format!("{name},point,{},{},{}\n", task.x1[i], x2[i], task.y[i]));
        }
        for g in 0..=40 {
            let x1 = -3.0 + 6.0 * g as f64 / 40.0;
            if let Some(x2) = b.x2_at(x1) {
                csv.push_str(&format!("{name},boundary,{x1},{x2},0.5\n"));
            }
        }
    }
    Ok(MotivationReport {
        aligned,
        misaligned,
        csv,
    })
}
