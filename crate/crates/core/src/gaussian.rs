//! Moment pairs and correlation matrices shared by every analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and standard deviation of a (approximately) Gaussian delay, in ps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean: f64,
    pub std_dev: f64,
}

impl GaussianMoments {
    pub fn new(mean: f64, std_dev: f64) -> Result<Self> {
        if !mean.is_finite() || !std_dev.is_finite() {
            return Err(Error::invalid("moments", "mean and std_dev must be finite"));
        }
        if std_dev < 0.0 {
            return Err(Error::invalid("moments.std_dev", "must be >= 0"));
        }
        Ok(Self { mean, std_dev })
    }

    /// Variability σ/μ.
    pub fn variability(&self) -> f64 {
        self.std_dev / self.mean
    }

    pub fn variance(&self) -> f64 {
        self.std_dev * self.std_dev
    }
}

/// Symmetric matrix of correlation coefficients with a unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    n: usize,
    entries: Vec<f64>,
}

pub(crate) const SYMMETRY_TOL: f64 = 1e-12;

impl CorrelationMatrix {
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self { n, entries }
    }

    /// Every off-diagonal entry equal to `rho`.
    pub fn uniform(n: usize, rho: f64) -> Result<Self> {
        Self::from_fn(n, |_, _| rho)
    }

    /// Builds a matrix from a function of `(i, j)` evaluated for `i != j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] = if i == j { 1.0 } else { f(i, j) };
            }
        }
        Self::from_row_major(n, entries)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(
                    format!("correlation_matrix[{i}]"),
                    format!("expected {n} entries, found {}", row.len()),
                ));
            }
            entries.extend_from_slice(row);
        }
        Self::from_row_major(n, entries)
    }

    pub fn from_row_major(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::invalid(
                "correlation_matrix",
                format!("expected {} entries, found {}", n * n, entries.len()),
            ));
        }
        for i in 0..n {
            for j in 0..n {
                let v = entries[i * n + j];
                let field = || format!("correlation_matrix[{i}][{j}]");
                if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                    return Err(Error::invalid(field(), format!("{v} is outside [-1, 1]")));
                }
                if i == j && v != 1.0 {
                    return Err(Error::invalid(
                        field(),
                        "diagonal entries must be exactly 1",
                    ));
                }
                if (v - entries[j * n + i]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(field(), "matrix is not symmetric"));
                }
            }
        }
        Ok(Self { n, entries })
    }

    /// For matrices that are symmetric with a unit diagonal by construction.
    pub(crate) fn from_parts_unchecked(n: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), n * n);
        Self { n, entries }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .chunks(self.n.max(1))
            .map(|r| r.to_vec())
            .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    /// Principal submatrix over `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let m = indices.len();
        let mut entries = Vec::with_capacity(m * m);
        for &i in indices {
            for &j in indices {
                entries.push(self.get(i, j));
            }
        }
        Self { n: m, entries }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.entries);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_invariants() {
        assert!(GaussianMoments::new(1.0, -0.1).is_err());
        assert!(GaussianMoments::new(f64::NAN, 1.0).is_err());
        assert!(GaussianMoments::new(1.0, f64::INFINITY).is_err());
        assert!(GaussianMoments::new(-3.0, 0.0).is_ok());
    }

    #[test]
    fn correlation_invariants() {
        assert!(CorrelationMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).is_ok());
        // non-unit diagonal
        assert!(CorrelationMatrix::from_rows(&[vec![0.9, 0.5], vec![0.5, 1.0]]).is_err());
        // out of range
        assert!(CorrelationMatrix::from_rows(&[vec![1.0, 1.5], vec![1.5, 1.0]]).is_err());
        // asymmetric
        let err = CorrelationMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap_err();
        assert!(
            matches!(err, Error::Invalid { ref field, .. } if field == "correlation_matrix[0][1]")
        );
        // within the symmetry tolerance
        assert!(CorrelationMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5 + 1e-13, 1.0]]).is_ok());
        // ragged
        assert!(CorrelationMatrix::from_rows(&[vec![1.0], vec![0.5, 1.0]]).is_err());
    }

    #[test]
    fn select_reorders() {
        let c = CorrelationMatrix::from_fn(3, |i, j| if i + j == 1 { 0.2 } else { 0.7 }).unwrap();
        let s = c.select(&[2, 0]);
        assert_eq!(s.get(0, 1), 0.7);
        assert_eq!(s.get(1, 1), 1.0);
    }
}
