//! Kernel ridge regression on a precomputed kernel.

use nalgebra::{DMatrix, DVector};

use crate::error::{LantkError, Result};
use crate::linalg::spd_solve;

/// Ridge used when none is given: 1e-6 · trace(K)/n.
pub fn default_ridge(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows().max(1) as f64;
    1e-6 * k.trace() / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRegressor {
    pub ridge: f64,
    /// n×c coefficients; one column per regression target.
    pub alpha: DMatrix<f64>,
}

impl KernelRegressor {
    /// Solve (K + ridge·I) α = Y. `targets` is n×c (±1 column or one-hot).
    pub fn fit(k: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: Option<f64>) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n || targets.nrows() != n || n == 0 {
            return Err(LantkError::invalid(format!(
                "kernel is {}×{} but targets have {} rows",
                k.nrows(),
                k.ncols(),
                targets.nrows()
            )));
        }
        crate::error::ensure_finite(k.as_slice(), "kernel matrix")?;
        let ridge = ridge.unwrap_or_else(|| default_ridge(k));
        if !(ridge >= 0.0) {
            return Err(LantkError::invalid("ridge must be >= 0"));
        }
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += ridge;
        }
        let alpha = spd_solve(&a, targets)?;
        Ok(KernelRegressor { ridge, alpha })
    }

    pub fn fit_binary(k: &DMatrix<f64>, y: &DVector<f64>, ridge: Option<f64>) -> Result<Self> {
        Self::fit(k, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()), ridge)
    }

    /// `k_cross` is n_test×n_train; returns n_test×c scores.
    pub fn predict(&self, k_cross: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k_cross.ncols() != self.alpha.nrows() {
            return Err(LantkError::invalid(format!(
                "cross-kernel has {} columns, model was fit on {} points",
                k_cross.ncols(),
                self.alpha.nrows()
            )));
        }
        Ok(k_cross * &self.alpha)
    }
}

/// Sign with 0 mapped to +1.
pub fn sign_labels(scores: &DMatrix<f64>) -> Vec<f64> {
    scores
        .column(0)
        .iter()
        .map(|&s| if s >= 0.0 { 1.0 } else { -1.0 })
        .collect()
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_labels(scores: &DMatrix<f64>) -> Vec<usize> {
    scores
        .row_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(LantkError::invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(LantkError::invalid("accuracy of an empty prediction set"));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_recovers_targets() {
        let k = DMatrix::identity(3, 3);
        let y = DVector::from_row_slice(&[1.0, -1.0, 1.0]);
        let m = KernelRegressor::fit_binary(&k, &y, Some(0.0)).unwrap();
        let p = m.predict(&k).unwrap();
        assert_eq!(sign_labels(&p), vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn ties() {
        let s = DMatrix::from_row_slice(2, 3, &[0.5, 0.5, 0.1, 0.0, 0.2, 0.2]);
        assert_eq!(argmax_labels(&s), vec![0, 1]);
        assert_eq!(sign_labels(&DMatrix::from_row_slice(1, 1, &[0.0])), vec![1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let k = DMatrix::identity(3, 3);
        let y = DVector::from_row_slice(&[1.0, -1.0]);
        assert!(KernelRegressor::fit_binary(&k, &y, None).is_err());
        let m = KernelRegressor::fit_binary(&k, &DVector::from_element(3, 1.0), None).unwrap();
        assert!(m.predict(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 0, 4]).unwrap(), 0.75);
        assert_eq!(accuracy(&[1.0, -1.0], &[-1.0, 1.0]).unwrap(), 0.0);
        assert!(accuracy(&[1, 2], &[1]).is_err());
    }
}
