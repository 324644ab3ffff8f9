//! Normalized kernel similarity and the intra/inter relative ratio.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{PairMode, PairSets};
use crate::error::{LantkError, Result};
use crate::kernel::{KernelMatrix, Provenance};

/// K(x, x′)/√(K(x, x) K(x′, x′)). The raw value is returned even when it
/// falls outside [−1, 1] (possible for label-aware kernels).
pub fn normalized_similarity(kxy: f64, kxx: f64, kyy: f64) -> Result<f64> {
    if !(kxx > 0.0) || !(kyy > 0.0) {
        return Err(LantkError::invalid(format!(
            "normalized similarity needs positive self-similarities, got {kxx} and {kyy}"
        )));
    }
    Ok(kxy / (kxx * kyy).sqrt())
}

/// Kernel values between a first point set (rows) and a second (columns)
/// plus the self-similarities of both sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrid {
    pub cross: DMatrix<f64>,
    pub diag_first: Vec<f64>,
    pub diag_second: Vec<f64>,
    pub provenance: Provenance,
}

impl SimilarityGrid {
    /// Train-train grid from a square kernel.
    pub fn square(k: &KernelMatrix) -> Result<Self> {
        if k.values.nrows() != k.values.ncols() {
            return Err(LantkError::invalid("train-train similarity needs a square kernel"));
        }
        let d: Vec<f64> = k.values.diagonal().iter().copied().collect();
        Ok(SimilarityGrid {
            cross: k.values.clone(),
            diag_first: d.clone(),
            diag_second: d,
            provenance: k.provenance.clone(),
        })
    }

    /// Test-train grid; each test point's self-value comes from the same source.
    pub fn test_train(
        cross: DMatrix<f64>,
        diag_test: Vec<f64>,
        diag_train: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if cross.nrows() != diag_test.len() || cross.ncols() != diag_train.len() {
            return Err(LantkError::invalid(
                "cross-kernel shape disagrees with the self-similarities",
            ));
        }
        Ok(SimilarityGrid {
            cross,
            diag_first: diag_test,
            diag_second: diag_train,
            provenance,
        })
    }

    pub fn similarity(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.cross.nrows() || j >= self.cross.ncols() {
            return Err(LantkError::invalid(format!("pair ({i}, {j}) outside the kernel grid")));
        }
        normalized_similarity(self.cross[(i, j)], self.diag_first[i], self.diag_second[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityReport {
    pub rr: f64,
    pub mean_intra: f64,
    pub mean_inter: f64,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
    pub mode: PairMode,
    pub provenance: Provenance,
    /// Set when either mean is negative; rr is then reported raw.
    pub negative_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub i: usize,
    pub j: usize,
    pub intra: bool,
    pub similarity: f64,
}

fn bucket(grid: &SimilarityGrid, pairs: &[(usize, usize)], intra: bool) -> Result<Vec<PairSimilarity>> {
    pairs
        .par_iter()
        .map(|&(i, j)| {
            Ok(PairSimilarity {
                i,
                j,
                intra,
                similarity: grid.similarity(i, j)?,
            })
        })
        .collect()
}

fn mean(v: &[PairSimilarity]) -> f64 {
    v.iter().map(|p| p.similarity).sum::<f64>() / v.len() as f64
}

/// mean_intra / (mean_intra + mean_inter), plus the per-pair similarities.
pub fn relative_ratio_detailed(
    grid: &SimilarityGrid,
    pairs: &PairSets,
) -> Result<(ElasticityReport, Vec<PairSimilarity>)> {
    if pairs.intra.is_empty() {
        return Err(LantkError::EmptyBucket("no intra-class pairs".into()));
    }
    if pairs.inter.is_empty() {
        return Err(LantkError::EmptyBucket("no inter-class pairs".into()));
    }
    let mut rows = bucket(grid, &pairs.intra, true)?;
    let inter = bucket(grid, &pairs.inter, false)?;
    let mean_intra = mean(&rows);
    let mean_inter = mean(&inter);
    let total = mean_intra + mean_inter;
    if total == 0.0 {
        return Err(LantkError::numerical("intra and inter means sum to zero"));
    }
    rows.extend(inter);
    Ok((
        ElasticityReport {
            rr: mean_intra / total,
            mean_intra,
            mean_inter,
            intra_pairs: pairs.intra.len(),
            inter_pairs: pairs.inter.len(),
            mode: pairs.mode,
            provenance: grid.provenance.clone(),
            negative_mean: mean_intra < 0.0 || mean_inter < 0.0,
        },
        rows,
    ))
}

pub fn relative_ratio(grid: &SimilarityGrid, pairs: &PairSets) -> Result<ElasticityReport> {
    relative_ratio_detailed(grid, pairs).map(|(r, _)| r)
}

pub fn write_pairs_csv(path: &Path, rows: &[PairSimilarity]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(k: DMatrix<f64>) -> SimilarityGrid {
        SimilarityGrid::square(&KernelMatrix::new(k, Provenance::new("t", serde_json::Value::Null))).unwrap()
    }

    fn pairs() -> PairSets {
        crate::dataset::enumerate_pairs(&[0, 0, 1, 1], usize::MAX, 0).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        assert_eq!(normalized_similarity(2.0, 2.0, 2.0).unwrap(), 1.0);
        assert!(normalized_similarity(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn equal_similarities_give_half() {
        let k = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.3 });
        assert!((relative_ratio(&grid(k), &pairs()).unwrap().rr - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_separation_gives_one() {
        let labels = [0, 0, 1, 1];
        let k = DMatrix::from_fn(4, 4, |i, j| f64::from(u8::from(labels[i] == labels[j])));
        let r = relative_ratio(&grid(k), &pairs()).unwrap();
        assert_eq!(r.rr, 1.0);
        assert!(!r.negative_mean);
    }

    #[test]
    fn scale_invariant() {
        let k = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, 0.5, 0.1, 0.3, 0.5, 1.0, 0.2, 0.0, 0.1, 0.2, 3.0, 0.9, 0.3, 0.0, 0.9, 1.5,
            ],
        );
        let a = relative_ratio(&grid(k.clone()), &pairs()).unwrap().rr;
        let b = relative_ratio(&grid(k * 7.5), &pairs()).unwrap().rr;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn csv_rows() {
        let k = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.3 });
        let (_, rows) = relative_ratio_detailed(&grid(k), &pairs()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        write_pairs_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), rows.len() + 1);
    }
}
