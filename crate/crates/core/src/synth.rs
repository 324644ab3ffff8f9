//! Seeded synthetic datasets used by the CLI and the acceptance checks.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{LantkError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticSpec {
    /// Isotropic Gaussian blobs around random centers of norm `center_norm`.
    Clusters {
        classes: usize,
        per_class: usize,
        dim: usize,
        center_norm: f64,
        noise: f64,
    },
    /// Class c lives near the sphere of radius radii[c].
    Shells {
        per_class: usize,
        dim: usize,
        radii: Vec<f64>,
        noise: f64,
    },
}

impl SyntheticSpec {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match self {
            SyntheticSpec::Clusters {
                classes,
                per_class,
                dim,
                center_norm,
                noise,
            } => clusters(*classes, *per_class, *dim, *center_norm, *noise, seed),
            SyntheticSpec::Shells {
                per_class,
                dim,
                radii,
                noise,
            } => shells(*per_class, *dim, radii, *noise, seed),
        }
    }
}

fn gaussian_vec(r: &mut rng::Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_vec(r: &mut rng::Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(r, d);
        let n = crate::linalg::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn clusters(
    classes: usize,
    per_class: usize,
    dim: usize,
    center_norm: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(LantkError::invalid(
            "clusters need >= 2 classes, per_class >= 1, dim >= 1",
        ));
    }
    let mut r = rng::substream(seed, "synth-centers");
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| unit_vec(&mut r, dim).into_iter().map(|v| v * center_norm).collect())
        .collect();
    let mut r = rng::substream(seed, "synth-points");
    let n = classes * per_class;
    let mut f = DMatrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let g = gaussian_vec(&mut r, dim);
        for j in 0..dim {
            f[(i, j)] = centers[c][j] + noise * g[j];
        }
        labels.push(c);
    }
    Dataset::new(f, labels, classes)
}

pub fn shells(per_class: usize, dim: usize, radii: &[f64], noise: f64, seed: u64) -> Result<Dataset> {
    if radii.len() < 2 || per_class == 0 || dim == 0 {
        return Err(LantkError::invalid("shells need >= 2 radii, per_class >= 1, dim >= 1"));
    }
    let classes = radii.len();
    let mut r = rng::substream(seed, "synth-shells");
    let n = classes * per_class;
    let mut f = DMatrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let u = unit_vec(&mut r, dim);
        let rad = radii[c] + noise * r.sample::<f64, _>(StandardNormal);
        for j in 0..dim {
            f[(i, j)] = rad * u[j];
        }
        labels.push(c);
    }
    Dataset::new(f, labels, classes)
}

/// Two-dimensional data for the relabelling demo: four Gaussian blobs at
/// (±c, ±c). Returns points with two label systems: the half-plane labels
/// sign(⟨θ₁, x⟩) and the quadrant-parity labels sign(⟨θ₁, x⟩)·sign(⟨θ₂, x⟩),
/// θ₁ = e₁, θ₂ = e₂.
pub fn quadrant_blobs(n: usize, c: f64, noise: f64, seed: u64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let mut r = rng::substream(seed, "quadrant-blobs");
    let mut x = DMatrix::zeros(n, 2);
    let mut eta1 = Vec::with_capacity(n);
    let mut eta2 = Vec::with_capacity(n);
    for i in 0..n {
        let sx = if i % 2 == 0 { 1.0 } else { -1.0 };
        let sy = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let px = sx * c + noise * r.sample::<f64, _>(StandardNormal);
        let py = sy * c + noise * r.sample::<f64, _>(StandardNormal);
        x[(i, 0)] = px;
        x[(i, 1)] = py;
        let s1 = if px >= 0.0 { 1.0 } else { -1.0 };
        let s2 = if py >= 0.0 { 1.0 } else { -1.0 };
        eta1.push(s1);
        eta2.push(s1 * s2);
    }
    (x, eta1, eta2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clusters_shape_and_determinism() {
        let a = clusters(3, 4, 5, 2.0, 0.1, 9).unwrap();
        assert_eq!((a.n(), a.d()), (12, 5));
        assert_eq!(a.class_counts(), vec![4, 4, 4]);
        assert_eq!(a, clusters(3, 4, 5, 2.0, 0.1, 9).unwrap());
    }

    #[test]
    fn shells_have_requested_radii() {
        let s = shells(50, 6, &[1.0, 3.0], 0.0, 1).unwrap();
        for i in 0..s.n() {
            let r = s.features.row(i).norm();
            let want = if s.labels[i] == 0 { 1.0 } else { 3.0 };
            assert!((r - want).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrant_labels_consistent() {
        let (x, e1, e2) = quadrant_blobs(40, 2.0, 0.3, 0);
        for i in 0..40 {
            assert_eq!(e1[i], x[(i, 0)].signum());
            assert_eq!(e2[i], x[(i, 0)].signum() * x[(i, 1)].signum());
        }
    }
}
