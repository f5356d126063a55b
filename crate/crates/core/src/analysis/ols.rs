use crate::error::{LealError, Result};

/// Columns whose remainder after projection falls below this fraction of
/// their own norm count as linearly dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Incremental QR factorization by modified Gram-Schmidt with one round of
/// re-orthogonalization. Columns are appended in order, so the span of the
/// first columns is always a prefix of the basis.
#[derive(Clone, Debug)]
pub struct Qr {
    n: usize,
    q: Vec<Vec<f64>>,
    /// Upper-triangular factor, one row per basis vector, indexed by input column.
    r: Vec<Vec<f64>>,
    /// Input column index of each basis vector.
    kept: Vec<usize>,
    columns: usize,
    skip_dependent: bool,
}

impl Qr {
    /// With `skip_dependent`, dependent columns are dropped (their
    /// coefficient is 0); otherwise they are a [`LealError::RankDeficient`].
    pub fn new(n: usize, skip_dependent: bool) -> Self {
        Qr {
            n,
            q: Vec::new(),
            r: Vec::new(),
            kept: Vec::new(),
            columns: 0,
            skip_dependent,
        }
    }

    pub fn rank(&self) -> usize {
        self.q.len()
    }

    pub fn push(&mut self, column: &[f64]) -> Result<()> {
        if column.len() != self.n {
            return Err(LealError::shape("qr", &[column.len()], &[self.n]));
        }
        let j = self.columns;
        self.columns += 1;
        let mut v = column.to_vec();
        let original = norm(&v);
        let mut coef = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (k, q) in self.q.iter().enumerate() {
                let c = dot(q, &v);
                coef[k] += c;
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        let rest = norm(&v);
        if !(rest > DEPENDENCE_TOL * original) {
            if self.skip_dependent {
                return Ok(());
            }
            return Err(LealError::RankDeficient(format!(
                "column {j} is linearly dependent on the previous ones; regenerate the instance"
            )));
        }
        for (row, c) in self.r.iter_mut().zip(coef) {
            row.resize(j + 1, 0.0);
            row[j] = c;
        }
        let mut row = vec![0.0; j + 1];
        row[j] = rest;
        self.r.push(row);
        v.iter_mut().for_each(|x| *x /= rest);
        self.q.push(v);
        self.kept.push(j);
        Ok(())
    }

    /// `y` minus its projection onto the current column span.
    pub fn residual(&self, y: &[f64]) -> Vec<f64> {
        let mut r = y.to_vec();
        for _ in 0..2 {
            for q in &self.q {
                let c = dot(q, &r);
                r.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        r
    }

    /// Squared length of the projection of `v` onto basis vectors `from..`.
    pub fn projected_sq(&self, v: &[f64], from: usize) -> f64 {
        self.q[from.min(self.q.len())..].iter().map(|q| dot(q, v).powi(2)).sum()
    }

    /// Least-squares coefficients for every pushed column.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let qty: Vec<f64> = self.q.iter().map(|q| dot(q, y)).collect();
        let mut b = vec![0.0; self.columns];
        for k in (0..self.q.len()).rev() {
            let jk = self.kept[k];
            let mut s = qty[k];
            for l in k + 1..self.q.len() {
                let jl = self.kept[l];
                s -= self.r[k].get(jl).copied().unwrap_or(0.0) * b[jl];
            }
            b[jk] = s / self.r[k][jk];
        }
        b
    }
}

/// Least-squares fit of `y` on `columns` (no implicit intercept).
#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    /// Mean squared residual.
    pub mse: f64,
}

pub fn ols_fit(columns: &[Vec<f64>], y: &[f64], skip_dependent: bool) -> Result<OlsFit> {
    let mut qr = Qr::new(y.len(), skip_dependent);
    for c in columns {
        qr.push(c)?;
    }
    let r = qr.residual(y);
    Ok(OlsFit {
        coefficients: qr.solve(y),
        mse: dot(&r, &r) / y.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let fit = ols_fit(&[vec![1.0; 10], x], &y, false).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(fit.mse < 1e-24);
    }

    #[test]
    fn dependent_columns() {
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![2.0, 4.0, 6.0];
        assert!(matches!(
            ols_fit(&[a.clone(), b.clone()], &[1.0, 1.0, 1.0], false),
            Err(LealError::RankDeficient(_))
        ));
        let fit = ols_fit(&[a, b], &[1.0, 2.0, 3.0], true).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_only_residual_is_the_variance() {
        let y = [1.0, 2.0, 3.0, 6.0];
        let fit = ols_fit(&[vec![1.0; 4]], &y, false).unwrap();
        // mean 3, squared deviations 4 + 1 + 0 + 9
        assert!((fit.mse - 3.5).abs() < 1e-12);
    }
}
