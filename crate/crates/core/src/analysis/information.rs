use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LealError, Result};

/// Plug-in estimate of how much of the label uncertainty left by the primary
/// features is resolved by the secondary features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfEstimate {
    /// `I(y; X^S | X^P) / H(y | X^P)`, clamped to `[0, 1]`.
    pub value: f64,
    /// Entropies in bits.
    pub h_y_given_primary: f64,
    pub h_y_given_both: f64,
    pub samples: usize,
    /// Distinct `(y, X^P, X^S)` configurations seen.
    pub joint_support: usize,
    /// Fewer than ten samples per observed joint configuration.
    pub support_warning: bool,
}

impl IfEstimate {
    /// Whether the estimate is within `delta` of a functional dependency.
    pub fn near_functional(&self, delta: f64) -> bool {
        (self.value - 1.0).abs() < delta
    }
}

/// Integer codes for a column: values are kept when there are at most
/// `bins` distinct ones, otherwise equal-width bins over the observed range.
pub fn discretize(column: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(LealError::Config("bins must be at least 1".into()));
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(LealError::NonFinite("discretize".into()));
    }
    let mut distinct: Vec<f64> = column.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= bins {
        return Ok(column
            .iter()
            .map(|v| distinct.partition_point(|d| d < v))
            .collect());
    }
    let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
    let width = (hi - lo) / bins as f64;
    Ok(column
        .iter()
        .map(|v| (((v - lo) / width) as usize).min(bins - 1))
        .collect())
}

fn conditional_entropy(y: &[usize], given: &[Vec<usize>]) -> f64 {
    let n = y.len() as f64;
    let mut joint: BTreeMap<(Vec<usize>, usize), usize> = BTreeMap::new();
    let mut marginal: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for (i, &yi) in y.iter().enumerate() {
        let key: Vec<usize> = given.iter().map(|c| c[i]).collect();
        *marginal.entry(key.clone()).or_default() += 1;
        *joint.entry((key, yi)).or_default() += 1;
    }
    // H(y | X) = −Σ p(x, y) log₂ (p(x, y) / p(x))
    joint
        .iter()
        .map(|((key, _), &c)| {
            let pxy = c as f64 / n;
            let px = marginal[key] as f64 / n;
            -pxy * (pxy / px).log2()
        })
        .sum()
}

/// Information fraction of discrete (already coded) columns.
pub fn information_fraction(y: &[usize], primary: &[Vec<usize>], secondary: &[Vec<usize>]) -> Result<IfEstimate> {
    let n = y.len();
    if n == 0 {
        return Err(LealError::Data("information fraction of zero samples".into()));
    }
    if let Some(c) = primary.iter().chain(secondary).find(|c| c.len() != n) {
        return Err(LealError::shape("information_fraction", &[c.len()], &[n]));
    }
    let h_p = conditional_entropy(y, primary);
    if h_p <= 1e-12 {
        return Err(LealError::Undefined(
            "H(y | X^P) is zero: the primary features already determine the label".into(),
        ));
    }
    let both: Vec<Vec<usize>> = primary.iter().chain(secondary).cloned().collect();
    let h_ps = conditional_entropy(y, &both);
    let mut support: BTreeMap<(Vec<usize>, usize), ()> = BTreeMap::new();
    for (i, &yi) in y.iter().enumerate() {
        support.insert((both.iter().map(|c| c[i]).collect(), yi), ());
    }
    Ok(IfEstimate {
        value: ((h_p - h_ps) / h_p).clamp(0.0, 1.0),
        h_y_given_primary: h_p,
        h_y_given_both: h_ps,
        samples: n,
        joint_support: support.len(),
        support_warning: n < 10 * support.len(),
    })
}

/// Discretizes numeric columns with [`discretize`] and labels by exact value,
/// then calls [`information_fraction`].
pub fn information_fraction_numeric(
    y: &[f64],
    primary: &[Vec<f64>],
    secondary: &[Vec<f64>],
    bins: usize,
) -> Result<IfEstimate> {
    let code = |cols: &[Vec<f64>]| cols.iter().map(|c| discretize(c, bins)).collect::<Result<Vec<_>>>();
    let mut labels: Vec<f64> = y.to_vec();
    labels.sort_by(f64::total_cmp);
    labels.dedup();
    let y_codes: Vec<usize> = y.iter().map(|v| labels.partition_point(|d| d < v)).collect();
    information_fraction(&y_codes, &code(primary)?, &code(secondary)?)
}
