//! Dense helpers shared by the kernel modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{LantkError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Angle in [0, π]; the cosine is clamped before `acos`.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b) / (norm(a) * norm(b));
    c.clamp(-1.0, 1.0).acos()
}

pub fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(m: &DMatrix<f64>, tol: f64, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(LantkError::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > tol * scale {
        return Err(LantkError::invalid(format!(
            "{what} is not symmetric (max |K_ij - K_ji| = {asym:e})"
        )));
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and
/// everything below `floor_rel * λ_max` raised to that floor.
#[derive(Debug, Clone)]
pub struct EigenKernel {
    pub p: DMatrix<f64>,
    pub d: DVector<f64>,
    pub floor: f64,
    /// How many eigenvalues were raised to the floor.
    pub floored: usize,
}

impl EigenKernel {
    pub fn new(h: &DMatrix<f64>, floor_rel: f64) -> Result<Self> {
        check_symmetric(h, 1e-8, "kernel matrix")?;
        if h.nrows() == 0 {
            return Err(LantkError::invalid("empty kernel matrix"));
        }
        if !(floor_rel > 0.0) {
            return Err(LantkError::invalid("eigenvalue floor must be positive"));
        }
        let sym = (h + h.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let n = h.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lmax = eig.eigenvalues[order[0]];
        if !(lmax > 0.0) || !lmax.is_finite() {
            return Err(LantkError::numerical(format!(
                "kernel matrix has no positive eigenvalue (max {lmax:e})"
            )));
        }
        let floor = floor_rel * lmax;
        let mut p = DMatrix::zeros(n, n);
        let mut d = DVector::zeros(n);
        let mut floored = 0;
        for (k, &src) in order.iter().enumerate() {
            p.set_column(k, &eig.eigenvectors.column(src));
            let v = eig.eigenvalues[src];
            if v < floor {
                floored += 1;
                d[k] = floor;
            } else {
                d[k] = v;
            }
        }
        Ok(EigenKernel { p, d, floor, floored })
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.d[0]
    }

    /// P diag(g(D)) Pᵀ v
    pub fn apply_fn(&self, v: &DVector<f64>, g: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut c = self.p.tr_mul(v);
        for k in 0..c.len() {
            c[k] *= g(self.d[k]);
        }
        &self.p * c
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply_fn(v, |l| 1.0 / l)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.p * DMatrix::from_diagonal(&self.d) * self.p.transpose()
    }
}

/// Cholesky solve that refuses numerically singular systems instead of
/// returning garbage from a tiny positive pivot.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| LantkError::numerical("matrix is not positive definite; increase the ridge"))?;
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * max_diag) {
        return Err(LantkError::numerical(format!(
            "matrix is numerically singular (pivot ratio {:e}); increase the ridge",
            min_pivot / max_diag
        )));
    }
    Ok(chol.solve(b))
}

/// Median of a non-empty slice (average of the middle pair for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let e = EigenKernel::new(&h, 1e-12).unwrap();
        assert!(e.d[0] >= e.d[1] && e.d[1] >= e.d[2]);
        assert!((e.reconstruct() - &h).amax() < 1e-12);
        let pt_p = e.p.transpose() * &e.p;
        assert!((pt_p - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn floor_applies() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let e = EigenKernel::new(&h, 1e-8).unwrap();
        assert_eq!(e.floored, 1);
        assert!((e.d[1] - 2e-8).abs() < 1e-20);
    }

    #[test]
    fn asymmetric_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(EigenKernel::new(&h, 1e-8).is_err());
    }

    #[test]
    fn spd_solve_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_solve(&a, &DMatrix::identity(2, 1)).is_err());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
