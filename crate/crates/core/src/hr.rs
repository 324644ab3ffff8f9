//! Label-aware kernel E K⁽²⁾ + λ·Z, where Z(x, x′) estimates the product
//! of the two labels (or the same-class indicator for several classes).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LantkError, Result};
use crate::kernel::{KernelMatrix, Provenance};
use crate::kernels_analytic::expected_k2_matrix;
use crate::linalg::{dot, median, norm, spd_solve, EigenKernel};
use crate::rng;

pub const LAMBDA_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];
pub const PAIR_CAP: usize = 1_000_000;
pub const PCA_COMPONENTS: usize = 5;

// ---------------------------------------------------------------------------
// Walsh–Hadamard and the sketch

/// In-place unnormalized Walsh–Hadamard transform.
pub fn fwht(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(LantkError::invalid(format!("fwht length {n} is not a power of two")));
    }
    let mut h = 1;
    while h < n {
        for block in v.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Sign flips, Walsh–Hadamard transform, uniform coordinate subsample,
/// scaled by 1/√k so squared norms are preserved in expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FjltSketch {
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
    pub signs: Vec<f64>,
    pub rows: Vec<usize>,
}

impl FjltSketch {
    pub fn new(dim: usize, k: usize, seed: u64) -> Result<Self> {
        if dim == 0 || k == 0 {
            return Err(LantkError::invalid("sketch dimensions must be positive"));
        }
        let input_dim = dim.next_power_of_two();
        if k > input_dim {
            return Err(LantkError::invalid(format!(
                "sketch output {k} exceeds padded input {input_dim}"
            )));
        }
        let mut r = rng::substream(seed, "fjlt");
        let signs = (0..input_dim)
            .map(|_| if r.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut rows = sample(&mut r, input_dim, k).into_vec();
        rows.sort_unstable();
        Ok(FjltSketch {
            input_dim,
            output_dim: k,
            seed,
            signs,
            rows,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() > self.input_dim {
            return Err(LantkError::invalid("vector longer than the sketch input"));
        }
        let mut buf = vec![0.0; self.input_dim];
        for (i, &x) in v.iter().enumerate() {
            buf[i] = x * self.signs[i];
        }
        fwht(&mut buf)?;
        let s = 1.0 / (self.output_dim as f64).sqrt();
        Ok(self.rows.iter().map(|&r| buf[r] * s).collect())
    }

    /// Sketch every column of an N×p matrix to k×p.
    pub fn apply_columns(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cols: Vec<Vec<f64>> = (0..a.ncols())
            .into_par_iter()
            .map(|j| self.apply(a.column(j).as_slice()))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.output_dim, a.ncols(), |i, j| cols[j][i]))
    }
}

// ---------------------------------------------------------------------------
// Pair features

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Component vectors, one per row.
    pub components: Vec<Vec<f64>>,
}

impl Pca {
    pub fn fit(x: &DMatrix<f64>, k: usize) -> Self {
        let n = x.nrows() as f64;
        let mean: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
        let mut c = x.clone();
        for j in 0..c.ncols() {
            let m = mean[j];
            c.column_mut(j).add_scalar_mut(-m);
        }
        let cov = c.tr_mul(&c) / n.max(1.0);
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let components = order
            .iter()
            .take(k.min(x.ncols()))
            .map(|&i| {
                let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                // fix the sign so the fit is reproducible across platforms
                let lead = v
                    .iter()
                    .copied()
                    .fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
                if lead < 0.0 {
                    v.iter_mut().for_each(|e| *e = -*e);
                }
                v
            })
            .collect();
        Pca { mean, components }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components.iter().map(|c| dot(c, &centered)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContext {
    pub variant: Variant,
    pub dim: usize,
    /// RBF(x, x′) = exp(−‖x − x′‖² / bandwidth²)
    pub rbf_bandwidth_sq: f64,
    pub pca: Option<Pca>,
    pub pca_rbf_bandwidth_sq: f64,
}

fn median_sq_dist(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    // cap the work for big training sets; the median is robust
    let step = (n / 400).max(1);
    for i in (0..n).step_by(step) {
        for j in ((i + 1)..n).step_by(step) {
            d.push(
                rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
        }
    }
    let m = if d.is_empty() { 1.0 } else { median(&d) };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

impl FeatureContext {
    pub fn fit(x_train: &DMatrix<f64>, variant: Variant) -> Self {
        let rows = crate::linalg::rows_of(x_train);
        let rbf = median_sq_dist(&rows);
        let (pca, prbf) = match variant {
            Variant::V1 => (None, 1.0),
            Variant::V2 => {
                let p = Pca::fit(x_train, PCA_COMPONENTS);
                let proj: Vec<Vec<f64>> = rows.iter().map(|r| p.project(r)).collect();
                let b = median_sq_dist(&proj);
                (Some(p), b)
            }
        };
        FeatureContext {
            variant,
            dim: x_train.ncols(),
            rbf_bandwidth_sq: rbf,
            pca,
            pca_rbf_bandwidth_sq: prbf,
        }
    }

    pub fn feature_count(&self) -> usize {
        match self.variant {
            Variant::V1 => 10,
            Variant::V2 => 20,
        }
    }

    pub fn features(&self, x: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim || x2.len() != self.dim {
            return Err(LantkError::invalid(format!(
                "feature schema expects dimension {}, got {} and {}",
                self.dim,
                x.len(),
                x2.len()
            )));
        }
        let mut f = base_features(x, x2, self.rbf_bandwidth_sq);
        if let Some(p) = &self.pca {
            f.extend(base_features(&p.project(x), &p.project(x2), self.pca_rbf_bandwidth_sq));
        }
        Ok(f)
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// [E K₂, cos∠, xᵀx′, ‖x‖‖x′‖, ‖x−x′‖², ‖x−x′‖₁, ∠, sin∠, RBF, pearson].
/// Zero vectors get cos = 0 and E K₂ = 0 (its limit).
pub fn base_features(x: &[f64], x2: &[f64], bw_sq: f64) -> Vec<f64> {
    let g = dot(x, x2);
    let nn = norm(x) * norm(x2);
    let (c, ek2) = if nn > 0.0 {
        let c = (g / nn).clamp(-1.0, 1.0);
        let delta = c.acos();
        let s = (1.0 - c * c).max(0.0).sqrt();
        let k = (g * (std::f64::consts::PI - delta) + nn * (s + (std::f64::consts::PI - delta) * c))
            / (2.0 * std::f64::consts::PI);
        (c, k)
    } else {
        (0.0, 0.0)
    };
    let ang = c.acos();
    let l2sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    let l1: f64 = x.iter().zip(x2).map(|(a, b)| (a - b).abs()).sum();
    vec![
        ek2,
        c,
        g,
        nn,
        l2sq,
        l1,
        ang,
        ang.sin(),
        (-l2sq / bw_sq).exp(),
        pearson(x, x2),
    ]
}

// ---------------------------------------------------------------------------
// Estimators

/// Pair targets: y_i y_j for ±1 labels, 1{y_i = y_j} for class indices.
#[derive(Debug, Clone, PartialEq)]
pub enum PairTarget {
    Binary(DVector<f64>),
    Multiclass(Vec<usize>),
}

impl PairTarget {
    pub fn n(&self) -> usize {
        match self {
            PairTarget::Binary(y) => y.len(),
            PairTarget::Multiclass(l) => l.len(),
        }
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        match self {
            PairTarget::Binary(y) => y[i] * y[j],
            PairTarget::Multiclass(l) => f64::from(u8::from(l[i] == l[j])),
        }
    }

    pub fn is_multiclass(&self) -> bool {
        matches!(self, PairTarget::Multiclass(_))
    }
}

/// Moments needed to evaluate the ψ-weighted estimator in O(1) per probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrModel {
    pub variant: Variant,
    pub n: usize,
    pub b: f64,
    /// Σ φ_st, Σ φ_st²
    pub s1: f64,
    pub s2: f64,
    /// Σ T_ij, Σ T_ij φ_ij, Σ T_ij φ_ij² with T the weighted target matrix
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
}

impl KrModel {
    /// `phi` is the n×n training matrix of E K₂ values.
    pub fn fit(phi: &DMatrix<f64>, target: &PairTarget, variant: Variant, floor_rel: f64) -> Result<Self> {
        let n = phi.nrows();
        if phi.ncols() != n || target.n() != n || n == 0 {
            return Err(LantkError::invalid("training kernel and labels disagree in size"));
        }
        let (mut lo, mut hi, mut s1, mut s2) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0);
        for v in phi.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
            s1 += v;
            s2 += v * v;
        }
        let b = (hi - lo) * (hi - lo);
        // Weighted target matrix T_ij.
        let t: DMatrix<f64> = match (variant, target) {
            (Variant::V1, _) => DMatrix::from_fn(n, n, |i, j| target.value(i, j)),
            (Variant::V2, PairTarget::Binary(y)) => {
                let c = EigenKernel::new(phi, floor_rel)?.solve(y);
                &c * c.transpose()
            }
            (Variant::V2, PairTarget::Multiclass(labels)) => {
                let eig = EigenKernel::new(phi, floor_rel)?;
                let classes = labels.iter().max().map_or(0, |m| m + 1);
                let mut t = DMatrix::zeros(n, n);
                for c in 0..classes {
                    let e = DVector::from_iterator(n, labels.iter().map(|&l| f64::from(u8::from(l == c))));
                    let w = eig.solve(&e);
                    t += &w * w.transpose();
                }
                t
            }
        };
        let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let (tv, p) = (t[(i, j)], phi[(i, j)]);
                w0 += tv;
                w1 += tv * p;
                w2 += tv * p * p;
            }
        }
        Ok(KrModel {
            variant,
            n,
            b,
            s1,
            s2,
            w0,
            w1,
            w2,
        })
    }

    /// Σ_ij T_ij ψ(φ_ab, φ_ij).
    pub fn score(&self, phi_ab: f64) -> Result<f64> {
        let n2 = (self.n * self.n) as f64;
        let spread = n2 * phi_ab * phi_ab - 2.0 * phi_ab * self.s1 + self.s2;
        let den = n2 * self.b - spread;
        let scale = n2 * self.b + spread.abs();
        if !(den.abs() > 1e-12 * scale) || scale == 0.0 {
            return Err(LantkError::numerical(
                "degenerate similarity weights: training kernel values are constant and equal the probe value",
            ));
        }
        let num = self.b * self.w0 - (phi_ab * phi_ab * self.w0 - 2.0 * phi_ab * self.w1 + self.w2);
        Ok(num / den)
    }
}

/// Explicit ψ weights (O(n²)); used to validate the moment form.
pub fn psi_weights(phi: &DMatrix<f64>, phi_ab: f64) -> Result<DMatrix<f64>> {
    let n = phi.nrows() as f64;
    let lo = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b = (hi - lo) * (hi - lo);
    let spread: f64 = phi.iter().map(|v| (phi_ab - v) * (phi_ab - v)).sum();
    let den = n * n * b - spread;
    if den == 0.0 {
        return Err(LantkError::numerical("degenerate similarity weights"));
    }
    Ok(phi.map(|v| (b - (phi_ab - v) * (phi_ab - v)) / den))
}

/// ψ-weighted estimate for a probe whose E K₂ value is `phi_ab`.
pub fn z_kr(y: &DVector<f64>, k2_train: &DMatrix<f64>, variant: Variant, phi_ab: f64) -> Result<f64> {
    KrModel::fit(
        k2_train,
        &PairTarget::Binary(y.clone()),
        variant,
        crate::nth::DEFAULT_FLOOR,
    )?
    .score(phi_ab)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FjltModel {
    pub context: FeatureContext,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub ridge: f64,
    pub pairs_used: usize,
    /// None when the pair count did not exceed the sketch size.
    pub sketch_dim: Option<usize>,
    pub sketch_seed: u64,
    pub multiclass: bool,
}

impl FjltModel {
    pub fn raw_score(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        let f = self.context.features(x, x2)?;
        let mut s = self.intercept;
        for k in 0..f.len() {
            s += self.weights[k] * (f[k] - self.feature_mean[k]) / self.feature_scale[k];
        }
        Ok(s)
    }
}

/// Ridge least squares of pair targets on pair features. The pair rows are
/// compressed with an FJLT sketch when they outnumber `sketch_dim`.
pub fn fit_z_fjlt(
    x: &DMatrix<f64>,
    target: &PairTarget,
    variant: Variant,
    sketch_dim: usize,
    ridge: f64,
    seed: u64,
) -> Result<FjltModel> {
    let n = x.nrows();
    if target.n() != n || n == 0 {
        return Err(LantkError::invalid("features and labels disagree in size"));
    }
    if ridge < 0.0 {
        return Err(LantkError::invalid("ridge must be >= 0"));
    }
    let ctx = FeatureContext::fit(x, variant);
    let p = ctx.feature_count();
    let total = n * n;
    let pairs: Vec<(usize, usize)> = if total > PAIR_CAP {
        let mut r = rng::substream(seed, "pair-subsample");
        let mut idx = sample(&mut r, total, PAIR_CAP).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| (k / n, k % n)).collect()
    } else {
        (0..total).map(|k| (k / n, k % n)).collect()
    };
    let rows = crate::linalg::rows_of(x);
    let feats: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| ctx.features(&rows[i], &rows[j]))
        .collect::<Result<_>>()?;
    let np = pairs.len();
    let mut mean = vec![0.0; p];
    for f in &feats {
        for k in 0..p {
            mean[k] += f[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= np as f64);
    let mut scale = vec![0.0; p];
    for f in &feats {
        for k in 0..p {
            scale[k] += (f[k] - mean[k]).powi(2);
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / np as f64).sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }
    // Design matrix [standardized features | 1] and targets as one block.
    let mut a = DMatrix::zeros(np, p + 2);
    for (r, f) in feats.iter().enumerate() {
        for k in 0..p {
            a[(r, k)] = (f[k] - mean[k]) / scale[k];
        }
        a[(r, p)] = 1.0;
        a[(r, p + 1)] = target.value(pairs[r].0, pairs[r].1);
    }
    let (a, used_sketch) = if np > sketch_dim {
        let sk = FjltSketch::new(np, sketch_dim, rng::derive_seed(seed, "pair-sketch"))?;
        (sk.apply_columns(&a)?, Some(sketch_dim))
    } else {
        (a, None)
    };
    let design = a.columns(0, p + 1).into_owned();
    let b = a.column(p + 1).into_owned();
    let mut gram = design.tr_mul(&design);
    for k in 0..p {
        gram[(k, k)] += ridge;
    }
    let rhs = design.tr_mul(&b);
    let sol = spd_solve(&gram, &DMatrix::from_column_slice(p + 1, 1, rhs.as_slice()))
        .map_err(|_| LantkError::numerical("singular normal equations for the pair regression; use ridge > 0"))?;
    Ok(FjltModel {
        context: ctx,
        feature_mean: mean,
        feature_scale: scale,
        weights: sol.column(0).rows(0, p).iter().copied().collect(),
        intercept: sol[(p, 0)],
        ridge,
        pairs_used: np,
        sketch_dim: used_sketch,
        sketch_seed: seed,
        multiclass: target.is_multiclass(),
    })
}

fn point_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Knows the true label of a fixed set of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleModel {
    pub multiclass: bool,
    /// (point, label): ±1 for binary, class index for multi-class.
    pub points: Vec<(Vec<f64>, f64)>,
    #[serde(skip)]
    index: HashMap<Vec<u64>, f64>,
}

impl OracleModel {
    pub fn new(multiclass: bool, points: Vec<(Vec<f64>, f64)>) -> Self {
        let index = points.iter().map(|(x, l)| (point_key(x), *l)).collect();
        OracleModel {
            multiclass,
            points,
            index,
        }
    }

    pub fn binary(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let rows = crate::linalg::rows_of(x);
        Self::new(false, rows.into_iter().zip(y.iter().copied()).collect())
    }

    pub fn multiclass(x: &DMatrix<f64>, labels: &[usize]) -> Self {
        let rows = crate::linalg::rows_of(x);
        Self::new(true, rows.into_iter().zip(labels.iter().map(|&l| l as f64)).collect())
    }

    /// Add more labelled points (e.g. the test set for an oracle benchmark).
    pub fn extend(&mut self, x: &DMatrix<f64>, labels: &[f64]) {
        for (r, &l) in crate::linalg::rows_of(x).into_iter().zip(labels) {
            self.index.insert(point_key(&r), l);
            self.points.push((r, l));
        }
    }

    fn label(&self, x: &[f64]) -> Result<f64> {
        if self.index.is_empty() && !self.points.is_empty() {
            // deserialized: rebuild lazily via a linear scan
            return self
                .points
                .iter()
                .find(|(p, _)| p.as_slice() == x)
                .map(|(_, l)| *l)
                .ok_or_else(|| LantkError::invalid("oracle has no label for this point"));
        }
        self.index
            .get(&point_key(x))
            .copied()
            .ok_or_else(|| LantkError::invalid("oracle has no label for this point"))
    }

    pub fn score(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        let (a, b) = (self.label(x)?, self.label(x2)?);
        Ok(if self.multiclass {
            f64::from(u8::from(a == b))
        } else {
            a * b
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum ZModel {
    Kr(KrModel),
    Fjlt(FjltModel),
    Oracle(OracleModel),
}

impl ZModel {
    pub fn kind(&self) -> String {
        match self {
            ZModel::Kr(m) => format!("kr_{}", variant_name(m.variant)),
            ZModel::Fjlt(m) => format!("fjlt_{}", variant_name(m.context.variant)),
            ZModel::Oracle(_) => "oracle".into(),
        }
    }

    /// Unclipped estimator output.
    pub fn raw(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        match self {
            ZModel::Kr(m) => m.score(crate::kernels_analytic::expected_k2(x, x2)?),
            ZModel::Fjlt(m) => m.raw_score(x, x2),
            ZModel::Oracle(m) => m.score(x, x2),
        }
    }

    /// Multi-class targets live in [0, 1]; binary ones in [−1, 1].
    pub fn clip_range(&self) -> (f64, f64) {
        let multi = match self {
            ZModel::Kr(_) => false,
            ZModel::Fjlt(m) => m.multiclass,
            ZModel::Oracle(m) => m.multiclass,
        };
        if multi {
            (0.0, 1.0)
        } else {
            (-1.0, 1.0)
        }
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::V1 => "v1",
        Variant::V2 => "v2",
    }
}

pub fn clip_z(raw: f64, range: (f64, f64)) -> f64 {
    raw.clamp(range.0, range.1)
}

/// Estimator output clipped to the target range.
pub fn z_predict(model: &ZModel, x: &[f64], x2: &[f64]) -> Result<f64> {
    Ok(clip_z(model.raw(x, x2)?, model.clip_range()))
}

/// Z on unordered training pairs, mirrored, so the result is symmetric.
pub fn z_matrix_train(model: &ZModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rows = crate::linalg::rows_of(x);
    let n = rows.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| z_predict(model, &rows[i], &rows[j]))
        .collect::<Result<_>>()?;
    let mut z = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        z[(i, j)] = v;
        z[(j, i)] = v;
    }
    Ok(z)
}

pub fn z_matrix_cross(model: &ZModel, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ra = crate::linalg::rows_of(a);
    let rb = crate::linalg::rows_of(b);
    let nb = rb.len();
    let vals: Vec<f64> = (0..ra.len() * nb)
        .into_par_iter()
        .map(|k| z_predict(model, &ra[k / nb], &rb[k % nb]))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_row_slice(ra.len(), nb, &vals))
}

/// E K₂ + λ Z, entrywise.
pub fn lantk_hr(k2: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> Result<KernelMatrix> {
    if k2.shape() != z.shape() {
        return Err(LantkError::invalid("kernel and Z shapes differ"));
    }
    if !(lambda >= 0.0) {
        return Err(LantkError::invalid("lambda must be >= 0"));
    }
    Ok(KernelMatrix::new(
        k2 + z * lambda,
        Provenance::new("lantk-hr", serde_json::json!({"lambda": lambda, "z_clipped": true})),
    ))
}

/// Training matrix of E K₂ for the ψ-weighted estimators.
pub fn fit_kr(x: &DMatrix<f64>, target: &PairTarget, variant: Variant, floor_rel: f64) -> Result<KrModel> {
    let phi = expected_k2_matrix(x)?.values;
    KrModel::fit(&phi, target, variant, floor_rel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZModelFile {
    pub model: ZModel,
    pub lambda: f64,
    pub clipped: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fwht_examples() {
        let mut v = vec![1.0, 0.0, 0.0, 0.0];
        fwht(&mut v).unwrap();
        assert_eq!(v, vec![1.0; 4]);
        let orig = vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0, -2.0, 0.25];
        let mut w = orig.clone();
        fwht(&mut w).unwrap();
        let n2: f64 = w.iter().map(|x| x * x).sum();
        let o2: f64 = orig.iter().map(|x| x * x).sum();
        assert!((n2 - 8.0 * o2).abs() < 1e-12);
        fwht(&mut w).unwrap();
        for (a, b) in w.iter().zip(&orig) {
            assert!((a - 8.0 * b).abs() < 1e-12);
        }
        assert!(fwht(&mut [1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn psi_sums_to_one() {
        let phi = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.4, 0.2, 2.0, 0.1, 0.4, 0.1, 1.5]);
        for &p in &[0.3, 1.0, 1.9] {
            let w = psi_weights(&phi, p).unwrap();
            assert!((w.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kr_moment_form_matches_explicit() {
        let phi = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.4, 0.2, 2.0, 0.1, 0.4, 0.1, 1.5]);
        let y = DVector::from_row_slice(&[1.0, -1.0, 1.0]);
        let m = KrModel::fit(&phi, &PairTarget::Binary(y.clone()), Variant::V1, 1e-8).unwrap();
        for &p in &[0.3, 0.9] {
            let w = psi_weights(&phi, p).unwrap();
            let direct: f64 = (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| y[i] * y[j] * w[(i, j)])
                .sum();
            assert!((m.score(p).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn kr_all_positive_is_one() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
        let y = DVector::from_element(2, 1.0);
        assert!((z_kr(&y, &phi, Variant::V1, 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kr_degenerate() {
        let phi = DMatrix::from_element(2, 2, 0.5);
        let y = DVector::from_element(2, 1.0);
        assert!(z_kr(&y, &phi, Variant::V1, 0.5).is_err());
    }

    #[test]
    fn clip_contract() {
        assert_eq!(clip_z(1.7, (-1.0, 1.0)), 1.0);
        assert_eq!(clip_z(-3.0, (-1.0, 1.0)), -1.0);
    }

    #[test]
    fn pearson_constant_is_zero() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[0.0, 2.0, 1.0]), 0.0);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_train_pairs() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_row_slice(&[1.0, -1.0, 1.0]);
        let m = ZModel::Oracle(OracleModel::binary(&x, &y));
        let z = z_matrix_train(&m, &x).unwrap();
        assert_eq!(z, &y * y.transpose());
        assert!(z_predict(&m, &[5.0, 5.0], &[1.0, 0.0]).is_err());
    }
}
