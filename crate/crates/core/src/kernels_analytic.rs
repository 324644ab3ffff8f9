//! Expected kernels of a two-layer ReLU network under N(0, 1) initialization.
//!
//! The fourth-order expectation is assembled from five families of
//! Gaussian integrals after rotating the four inputs into R⁴:
//!
//! | kind | activation pattern       | evaluation                     |
//! |------|--------------------------|--------------------------------|
//! | I    | σ′ σ′ σ′ σ′              | orthant probability, MC        |
//! | II   | σ′ σ′ σ σ                | MC (antithetic pairs)          |
//! | III  | σ″ σ σ′ σ′               | closed form (Stein + angles)   |
//! | IV   | σ″ σ″ σ′ σ′              | closed form                    |
//! | V    | σ‴ σ′ σ′ σ′              | closed form                    |
//!
//! Term values carry the moment of the second-layer weights they multiply
//! (E a² = 1, E a⁴ = 3) but none of the integer coefficients of the summand
//! they belong to. Every value is the width-independent coefficient: the
//! actual E K⁽⁴⁾₀ is the returned value divided by m.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix4};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{LantkError, Result};
use crate::kernel::{KernelMatrix, Provenance};
use crate::linalg::{dot, norm};
use crate::rng;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
pub const DIVISOR_EPS: f64 = 1e-8;
pub const MIN_MC_SAMPLES: usize = 10_000;
pub const JITTER_REL: f64 = 1e-6;

/// Only ReLU has the closed forms implemented here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticNtkParams {
    activation: Activation,
}

impl AnalyticNtkParams {
    pub fn new(activation: Activation) -> Result<Self> {
        if activation != Activation::Relu {
            return Err(LantkError::Unsupported(format!(
                "analytic kernels exist only for relu, got {}",
                activation.name()
            )));
        }
        Ok(AnalyticNtkParams { activation })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: 200_000,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        McConfig { seed, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

impl McEstimate {
    fn exact(value: f64) -> Self {
        McEstimate { value, stderr: 0.0 }
    }
}

// ---------------------------------------------------------------------------
// Second order

fn nonzero_norm(x: &[f64], arg: usize) -> Result<f64> {
    let n = norm(x);
    if !(n > 0.0) || !n.is_finite() {
        return Err(LantkError::invalid(format!(
            "argument {arg} is a zero or non-finite vector; its angle is undefined"
        )));
    }
    Ok(n)
}

fn k2_from_parts(g: f64, n1: f64, n2: f64) -> f64 {
    let c = (g / (n1 * n2)).clamp(-1.0, 1.0);
    let delta = c.acos();
    let s = (1.0 - c * c).max(0.0).sqrt();
    (g * (PI - delta) + n1 * n2 * (s + (PI - delta) * c)) / (2.0 * PI)
}

/// E K⁽²⁾₀(x, x′) = xᵀx′(π−Δ)/(2π) + ‖x‖‖x′‖(sin Δ + (π−Δ)cos Δ)/(2π).
pub fn expected_k2(x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(LantkError::invalid("dimension mismatch"));
    }
    let n1 = nonzero_norm(x, 0)?;
    let n2 = nonzero_norm(x2, 1)?;
    Ok(k2_from_parts(dot(x, x2), n1, n2))
}

fn row_norms(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..x.nrows())
        .map(|i| {
            let n = x.row(i).norm();
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(LantkError::invalid(format!("row {i} is a zero or non-finite vector")))
            }
        })
        .collect()
}

pub fn expected_k2_matrix(x: &DMatrix<f64>) -> Result<KernelMatrix> {
    let n = x.nrows();
    let norms = row_norms(x)?;
    let gram = x * x.transpose();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = norms[i] * norms[i];
        for j in (i + 1)..n {
            let v = k2_from_parts(gram[(i, j)], norms[i], norms[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(KernelMatrix::new(
        k,
        Provenance::new("expected-ntk-relu", serde_json::json!({"n": n})),
    ))
}

/// Rows of `a` against rows of `b`.
pub fn expected_k2_cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(LantkError::invalid("dimension mismatch"));
    }
    let na = row_norms(a)?;
    let nb = row_norms(b)?;
    let gram = a * b.transpose();
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        k2_from_parts(gram[(i, j)], na[i], nb[j])
    }))
}

// ---------------------------------------------------------------------------
// Four-dimensional reduction

/// Rows v_α, v_β, v_γ, v_ξ of a lower-triangular basis whose Gram matrix is
/// the cosine matrix of the four inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduced4D {
    pub v: Matrix4<f64>,
    pub norms: [f64; 4],
    pub cos: Matrix4<f64>,
    /// (αβ, αγ, αξ, βγ, βξ, γξ)
    pub angles: [f64; 6],
}

impl Reduced4D {
    pub fn row(&self, k: usize) -> [f64; 4] {
        [self.v[(k, 0)], self.v[(k, 1)], self.v[(k, 2)], self.v[(k, 3)]]
    }

    /// Build from a cosine matrix directly.
    pub fn from_cosines(cos: Matrix4<f64>, norms: [f64; 4]) -> Result<Self> {
        let c = |i: usize, j: usize| cos[(i, j)].clamp(-1.0, 1.0);
        let s01 = (1.0 - c(0, 1) * c(0, 1)).max(0.0).sqrt();
        if s01 < DIVISOR_EPS {
            return Err(LantkError::degenerate(1, format!("sin Δ_αβ = {s01:e} below 1e-8")));
        }
        let mut v = Matrix4::zeros();
        v[(0, 0)] = 1.0;
        v[(1, 0)] = c(0, 1);
        v[(1, 1)] = s01;

        v[(2, 0)] = c(0, 2);
        v[(2, 1)] = (c(1, 2) - c(0, 1) * c(0, 2)) / s01;
        let r3 = 1.0 - v[(2, 0)].powi(2) - v[(2, 1)].powi(2);
        if r3 < -1e-10 {
            return Err(LantkError::degenerate(2, format!("negative radicand {r3:e} for v_γ,3")));
        }
        v[(2, 2)] = r3.max(0.0).sqrt();

        v[(3, 0)] = c(0, 3);
        v[(3, 1)] = (c(1, 3) - c(0, 1) * c(0, 3)) / s01;
        if v[(2, 2)] > DIVISOR_EPS {
            v[(3, 2)] = (c(2, 3) - v[(2, 0)] * v[(3, 0)] - v[(2, 1)] * v[(3, 1)]) / v[(2, 2)];
            let r4 = 1.0 - v[(3, 0)].powi(2) - v[(3, 1)].powi(2) - v[(3, 2)].powi(2);
            if r4 < -1e-10 {
                return Err(LantkError::degenerate(3, format!("negative radicand {r4:e} for v_ξ,4")));
            }
            v[(3, 3)] = r4.max(0.0).sqrt();
        } else {
            // γ lies in span(α, β): put ξ's residual on the third axis.
            let r = 1.0 - v[(3, 0)].powi(2) - v[(3, 1)].powi(2);
            if r < -1e-10 {
                return Err(LantkError::degenerate(3, format!("negative radicand {r:e} for v_ξ,3")));
            }
            v[(3, 2)] = r.max(0.0).sqrt();
        }
        let angles = [
            c(0, 1).acos(),
            c(0, 2).acos(),
            c(0, 3).acos(),
            c(1, 2).acos(),
            c(1, 3).acos(),
            c(2, 3).acos(),
        ];
        Ok(Reduced4D { v, norms, cos, angles })
    }
}

pub fn reduce_to_4d(xs: [&[f64]; 4]) -> Result<Reduced4D> {
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(LantkError::invalid("dimension mismatch"));
    }
    let mut norms = [0.0; 4];
    for k in 0..4 {
        norms[k] = nonzero_norm(xs[k], k)?;
    }
    let mut cos = Matrix4::identity();
    for i in 0..4 {
        for j in (i + 1)..4 {
            let c = (dot(xs[i], xs[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            cos[(i, j)] = c;
            cos[(j, i)] = c;
        }
    }
    Reduced4D::from_cosines(cos, norms)
}

// ---------------------------------------------------------------------------
// Gaussian building blocks

fn sub(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - s * y).collect()
}

fn project_out(v: &[f64], w: &[f64]) -> Vec<f64> {
    let ww = dot(w, w);
    sub(v, w, dot(v, w) / ww)
}

/// P(pᵀY ≥ 0, qᵀY ≥ 0) for standard Gaussian Y. A vanishing direction is
/// a half-probability event by continuity.
pub fn halfspace_pair_prob(p: &[f64], q: &[f64]) -> f64 {
    let np = norm(p);
    let nq = norm(q);
    if np < 1e-12 || nq < 1e-12 {
        return 0.25;
    }
    let c = (dot(p, q) / (np * nq)).clamp(-1.0, 1.0);
    (PI - c.acos()) / (2.0 * PI)
}

/// E[δ(wᵀY) 1{pᵀY ≥ 0} 1{qᵀY ≥ 0}] for standard Gaussian Y of any dimension.
fn delta_two_halfspaces(w: &[f64], p: &[f64], q: &[f64], arg: usize) -> Result<f64> {
    let nw = norm(w);
    if nw < DIVISOR_EPS {
        return Err(LantkError::degenerate(
            arg,
            format!("delta direction has norm {nw:e}; input parallel to the pinned axis"),
        ));
    }
    let pp = project_out(p, w);
    let qp = project_out(q, w);
    Ok(halfspace_pair_prob(&pp, &qp) / (nw * SQRT_2PI))
}

// ---------------------------------------------------------------------------
// Monte Carlo

fn draw4(r: &mut rng::Rng) -> [f64; 4] {
    [
        r.sample(StandardNormal),
        r.sample(StandardNormal),
        r.sample(StandardNormal),
        r.sample(StandardNormal),
    ]
}

#[inline]
fn mat_row_dot(v: &Matrix4<f64>, k: usize, z: &[f64; 4]) -> f64 {
    v[(k, 0)] * z[0] + v[(k, 1)] * z[1] + v[(k, 2)] * z[2] + v[(k, 3)] * z[3]
}

fn mean_stderr(sum: f64, sumsq: f64, n: usize) -> McEstimate {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sumsq / nf) - mean * mean).max(0.0) * nf / (nf - 1.0);
    McEstimate {
        value: mean,
        stderr: (var / nf).sqrt(),
    }
}

/// P(VZ ⪰ 0) for Z ~ N(0, I₄).
pub fn orthant_prob_mc(v: &Matrix4<f64>, samples: usize, seed: u64) -> Result<McEstimate> {
    if samples < MIN_MC_SAMPLES {
        return Err(LantkError::invalid(format!(
            "orthant MC needs at least {MIN_MC_SAMPLES} samples, got {samples}"
        )));
    }
    let mut r = rng::substream(seed, "orthant");
    let mut hits = 0usize;
    for _ in 0..samples {
        let z = draw4(&mut r);
        if (0..4).all(|k| mat_row_dot(v, k, &z) >= 0.0) {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    Ok(McEstimate {
        value: p,
        stderr: (p * (1.0 - p) / samples as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    I,
    II,
    III,
    IV,
    V,
}

/// One representative Gaussian integral in the role order of `r`
/// (see the module table). Kinds III–V are exact (zero stderr).
pub fn expected_k4_term(kind: TermKind, r: &Reduced4D, mc: &McConfig) -> Result<McEstimate> {
    match kind {
        TermKind::I => orthant_prob_mc(&r.v, mc.samples, mc.seed),
        TermKind::II => kind2_mc(r, mc),
        TermKind::III => kind3(r).map(McEstimate::exact),
        TermKind::IV => kind4(r).map(McEstimate::exact),
        TermKind::V => kind5(r).map(McEstimate::exact),
    }
}

/// E[1{u_α ≥ 0} 1{u_β ≥ 0} relu(u_γ) relu(u_ξ)], antithetic pairs (Z, −Z).
fn kind2_mc(r: &Reduced4D, mc: &McConfig) -> Result<McEstimate> {
    if mc.samples < MIN_MC_SAMPLES {
        return Err(LantkError::invalid("MC sample budget too small"));
    }
    let scale = r.norms[2] * r.norms[3];
    let f = |z: &[f64; 4]| {
        let s: [f64; 4] = std::array::from_fn(|k| mat_row_dot(&r.v, k, z));
        if s[0] >= 0.0 && s[1] >= 0.0 && s[2] > 0.0 && s[3] > 0.0 {
            s[2] * s[3]
        } else {
            0.0
        }
    };
    let mut rg = rng::substream(mc.seed, "kind2");
    let pairs = mc.samples / 2;
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..pairs {
        let z = draw4(&mut rg);
        let zn = [-z[0], -z[1], -z[2], -z[3]];
        let val = 0.5 * (f(&z) + f(&zn));
        sum += val;
        sumsq += val * val;
    }
    let e = mean_stderr(sum, sumsq, pairs);
    Ok(McEstimate {
        value: e.value * scale,
        stderr: e.stderr * scale,
    })
}

fn tail3(row: [f64; 4]) -> [f64; 3] {
    [row[1], row[2], row[3]]
}

/// E[δ(u_α) relu(u_β) 1{u_γ ≥ 0} 1{u_ξ ≥ 0}].
///
/// Conditioning on the pinned axis leaves E[relu(qᵀY) 1{rᵀY≥0} 1{sᵀY≥0}]
/// in R³, which Stein's identity turns into three delta-halfspace terms.
fn kind3(r: &Reduced4D) -> Result<f64> {
    let q = tail3(r.row(1));
    let rr = tail3(r.row(2));
    let s = tail3(r.row(3));
    let inner = dot(&q, &q) * delta_two_halfspaces(&q, &rr, &s, 1)?
        + dot(&q, &rr) * delta_two_halfspaces(&rr, &q, &s, 2)?
        + dot(&q, &s) * delta_two_halfspaces(&s, &q, &rr, 3)?;
    Ok(r.norms[1] / r.norms[0] / SQRT_2PI * inner)
}

/// 3·E[δ(u_α) δ(u_β) 1{u_γ ≥ 0} 1{u_ξ ≥ 0}].
fn kind4(r: &Reduced4D) -> Result<f64> {
    let vb2 = r.v[(1, 1)].abs();
    if vb2 < DIVISOR_EPS {
        return Err(LantkError::degenerate(1, "|v_β,2| below 1e-8"));
    }
    let p = [r.v[(2, 2)], r.v[(2, 3)]];
    let q = [r.v[(3, 2)], r.v[(3, 3)]];
    Ok(3.0 * halfspace_pair_prob(&p, &q) / (2.0 * PI * r.norms[0] * r.norms[1] * vb2))
}

/// 3·E[δ′(u_α) 1{u_β ≥ 0} 1{u_γ ≥ 0} 1{u_ξ ≥ 0}].
///
/// Integration by parts on the pinned axis gives
/// −3/(‖x_α‖²√(2π)) Σ_k v_{k,1} E[δ(v_{k,−1}ᵀY) Π_{j≠k} 1{v_{j,−1}ᵀY ≥ 0}].
fn kind5(r: &Reduced4D) -> Result<f64> {
    let tails = [tail3(r.row(1)), tail3(r.row(2)), tail3(r.row(3))];
    let mut acc = 0.0;
    for k in 0..3 {
        let lead = r.v[(k + 1, 0)];
        if lead == 0.0 {
            continue;
        }
        let others: Vec<usize> = (0..3).filter(|&j| j != k).collect();
        let t = delta_two_halfspaces(&tails[k], &tails[others[0]], &tails[others[1]], k + 1)?;
        acc += lead * t;
    }
    Ok(-3.0 / (r.norms[0] * r.norms[0] * SQRT_2PI) * acc)
}

/// Plain MC of kind III in the conditioned R³ (validation aid).
pub fn kind3_mc(r: &Reduced4D, mc: &McConfig) -> McEstimate {
    let q = tail3(r.row(1));
    let rr = tail3(r.row(2));
    let s = tail3(r.row(3));
    let mut rg = rng::substream(mc.seed, "kind3-mc");
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..mc.samples {
        let y: [f64; 3] = [
            rg.sample(StandardNormal),
            rg.sample(StandardNormal),
            rg.sample(StandardNormal),
        ];
        let a = dot(&q, &y);
        let val = if a > 0.0 && dot(&rr, &y) >= 0.0 && dot(&s, &y) >= 0.0 {
            a
        } else {
            0.0
        };
        sum += val;
        sumsq += val * val;
    }
    let e = mean_stderr(sum, sumsq, mc.samples);
    let scale = r.norms[1] / r.norms[0] / SQRT_2PI;
    McEstimate {
        value: e.value * scale,
        stderr: e.stderr * scale,
    }
}

// ---------------------------------------------------------------------------
// Assembly

struct ClosedSummand {
    /// Index pairs whose inner products multiply the term.
    factors: &'static [&'static [(usize, usize)]],
    coef: f64,
    kind: TermKind,
    order: [usize; 4],
}

/// The delta-function summands of the fourth-order kernel. `factors` is a
/// sum of products of inner products xᵢᵀxⱼ.
const CLOSED: &[ClosedSummand] = &[
    ClosedSummand {
        factors: &[&[(0, 1), (0, 2), (0, 3)]],
        coef: 1.0,
        kind: TermKind::V,
        order: [0, 1, 2, 3],
    },
    ClosedSummand {
        factors: &[&[(1, 0), (1, 2), (1, 3)]],
        coef: 1.0,
        kind: TermKind::V,
        order: [1, 0, 2, 3],
    },
    ClosedSummand {
        factors: &[&[(0, 1), (0, 2), (1, 3)], &[(0, 1), (0, 3), (1, 2)]],
        coef: 1.0,
        kind: TermKind::IV,
        order: [0, 1, 2, 3],
    },
    ClosedSummand {
        factors: &[&[(0, 2), (0, 1), (2, 3)]],
        coef: 1.0,
        kind: TermKind::IV,
        order: [0, 2, 1, 3],
    },
    ClosedSummand {
        factors: &[&[(1, 2), (1, 0), (2, 3)]],
        coef: 1.0,
        kind: TermKind::IV,
        order: [1, 2, 0, 3],
    },
    ClosedSummand {
        factors: &[&[(0, 1), (0, 2)]],
        coef: 3.0,
        kind: TermKind::III,
        order: [0, 3, 1, 2],
    },
    ClosedSummand {
        factors: &[&[(1, 0), (1, 2)]],
        coef: 3.0,
        kind: TermKind::III,
        order: [1, 3, 0, 2],
    },
    ClosedSummand {
        factors: &[&[(0, 1), (0, 3)]],
        coef: 2.0,
        kind: TermKind::III,
        order: [0, 2, 1, 3],
    },
    ClosedSummand {
        factors: &[&[(1, 0), (1, 3)]],
        coef: 2.0,
        kind: TermKind::III,
        order: [1, 2, 0, 3],
    },
    ClosedSummand {
        factors: &[&[(0, 2), (0, 3)]],
        coef: 1.0,
        kind: TermKind::III,
        order: [0, 1, 2, 3],
    },
    ClosedSummand {
        factors: &[&[(2, 0), (2, 3)]],
        coef: 1.0,
        kind: TermKind::III,
        order: [2, 1, 0, 3],
    },
    ClosedSummand {
        factors: &[&[(1, 2), (1, 3)]],
        coef: 1.0,
        kind: TermKind::III,
        order: [1, 0, 2, 3],
    },
    ClosedSummand {
        factors: &[&[(2, 1), (2, 3)]],
        coef: 1.0,
        kind: TermKind::III,
        order: [2, 0, 1, 3],
    },
];

fn gram(xs: &[&[f64]; 4]) -> [[f64; 4]; 4] {
    let mut g = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            g[i][j] = dot(xs[i], xs[j]);
        }
    }
    g
}

fn remap_arg(e: LantkError, order: &[usize; 4]) -> LantkError {
    match e {
        LantkError::DegenerateGeometry { arg, detail } if arg < 4 => LantkError::DegenerateGeometry {
            arg: order[arg],
            detail,
        },
        other => other,
    }
}

/// Width-independent coefficient of E K⁽⁴⁾₀(x_α, x_β, x_γ, x_ξ) for ReLU;
/// divide by m for the finite-width expectation.
pub fn expected_k4(xs: [&[f64]; 4], mc: &McConfig) -> Result<McEstimate> {
    if mc.samples < MIN_MC_SAMPLES {
        return Err(LantkError::invalid(format!(
            "MC sample budget {} below {MIN_MC_SAMPLES}",
            mc.samples
        )));
    }
    let g = gram(&xs);
    let mut closed = 0.0;
    let mut cache: Vec<([usize; 4], Reduced4D)> = Vec::new();
    for s in CLOSED {
        let factor: f64 = s
            .factors
            .iter()
            .map(|prod| prod.iter().map(|&(i, j)| g[i][j]).product::<f64>())
            .sum();
        if factor == 0.0 {
            continue;
        }
        let red = match cache.iter().find(|(o, _)| *o == s.order) {
            Some((_, r)) => r.clone(),
            None => {
                let perm = [xs[s.order[0]], xs[s.order[1]], xs[s.order[2]], xs[s.order[3]]];
                let r = reduce_to_4d(perm).map_err(|e| remap_arg(e, &s.order))?;
                cache.push((s.order, r.clone()));
                r
            }
        };
        let term = match s.kind {
            TermKind::III => kind3(&red),
            TermKind::IV => kind4(&red),
            TermKind::V => kind5(&red),
            _ => unreachable!(),
        }
        .map_err(|e| remap_arg(e, &s.order))?;
        closed += s.coef * factor * term;
    }

    // Kinds I and II share one Monte-Carlo pass in the canonical order.
    let red = reduce_to_4d(xs)?;
    let n = red.norms;
    let orth_coef = 2.0 * g[0][1] * g[2][3] + g[0][2] * g[1][3] + g[0][3] * g[1][2];
    let c16 = 2.0 * g[0][1] * n[2] * n[3];
    let c17 = g[0][2] * n[1] * n[3];
    let c18 = g[1][2] * n[0] * n[3];
    let mut rg = rng::substream(mc.seed, "ek4-mc");
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..mc.samples {
        let z = draw4(&mut rg);
        let s: [f64; 4] = std::array::from_fn(|k| mat_row_dot(&red.v, k, &z));
        let p = s.map(|u| u >= 0.0);
        let relu = s.map(|u| u.max(0.0));
        let mut val = 0.0;
        if p[0] && p[1] && p[2] && p[3] {
            val += orth_coef;
        }
        if p[0] && p[1] {
            val += c16 * relu[2] * relu[3];
        }
        if p[0] && p[2] {
            val += c17 * relu[1] * relu[3];
        }
        if p[1] && p[2] {
            val += c18 * relu[0] * relu[3];
        }
        sum += val;
        sumsq += val * val;
    }
    let e = mean_stderr(sum, sumsq, mc.samples);
    Ok(McEstimate {
        value: closed + e.value,
        stderr: e.stderr,
    })
}

/// `expected_k4` that, on degenerate geometry, nudges the offending input by
/// seeded Gaussian noise of relative size 1e-6 and retries. The flag reports
/// whether any nudge happened.
pub fn expected_k4_jittered(xs: [&[f64]; 4], mc: &McConfig) -> Result<(McEstimate, bool)> {
    let mut owned: Vec<Vec<f64>> = xs.iter().map(|x| x.to_vec()).collect();
    let mut flagged = false;
    for attempt in 0..16u64 {
        let refs = [&owned[0][..], &owned[1][..], &owned[2][..], &owned[3][..]];
        match expected_k4(refs, mc) {
            Ok(v) => return Ok((v, flagged)),
            Err(LantkError::DegenerateGeometry { arg, .. }) => {
                flagged = true;
                let mut r = rng::substream_idx(mc.seed, "ek4-jitter", &[attempt, arg as u64]);
                let scale = JITTER_REL * norm(&owned[arg]) / (owned[arg].len() as f64).sqrt();
                for c in owned[arg].iter_mut() {
                    *c += scale * r.sample::<f64, _>(StandardNormal);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(LantkError::numerical(
        "jitter fallback did not resolve degenerate geometry",
    ))
}

/// E K⁽⁴⁾₀(x, x2, x_i, x_j) over all training pairs (i, j).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourthOrderBlock {
    pub probe: (Vec<f64>, Vec<f64>),
    #[serde(skip)]
    pub values: DMatrix<f64>,
    #[serde(skip)]
    pub stderr: DMatrix<f64>,
    pub mc_samples: usize,
    pub seed: u64,
    /// Entries that needed the jitter fallback.
    pub flagged: Vec<(usize, usize)>,
}

impl FourthOrderBlock {
    pub fn zeros(n: usize, probe: (Vec<f64>, Vec<f64>)) -> Self {
        FourthOrderBlock {
            probe,
            values: DMatrix::zeros(n, n),
            stderr: DMatrix::zeros(n, n),
            mc_samples: 0,
            seed: 0,
            flagged: Vec::new(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::matfile::write_matrix(path, &self.values)?;
        let mut err_path = path.as_os_str().to_owned();
        err_path.push(".stderr");
        crate::matfile::write_matrix(std::path::Path::new(&err_path), &self.stderr)?;
        crate::matfile::write_sidecar(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut b: FourthOrderBlock = crate::matfile::read_sidecar(path)?;
        b.values = crate::matfile::read_matrix(path)?;
        let mut err_path = path.as_os_str().to_owned();
        err_path.push(".stderr");
        b.stderr = crate::matfile::read_matrix(std::path::Path::new(&err_path))?;
        Ok(b)
    }
}

pub fn expected_k4_block(x: &[f64], x2: &[f64], train: &DMatrix<f64>, mc: &McConfig) -> Result<FourthOrderBlock> {
    let n = train.nrows();
    if n == 0 {
        return Err(LantkError::invalid("empty training matrix"));
    }
    if x.len() != train.ncols() || x2.len() != train.ncols() {
        return Err(LantkError::invalid("probe dimension does not match training data"));
    }
    let rows = crate::linalg::rows_of(train);
    let entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let results: Vec<Result<(McEstimate, bool)>> = entries
        .par_iter()
        .map(|&(i, j)| {
            let cfg = McConfig {
                samples: mc.samples,
                seed: rng::derive_seed_idx(mc.seed, "ek4-block", &[i as u64, j as u64]),
            };
            expected_k4_jittered([x, x2, &rows[i], &rows[j]], &cfg)
        })
        .collect();
    let mut block = FourthOrderBlock::zeros(n, (x.to_vec(), x2.to_vec()));
    block.mc_samples = mc.samples;
    block.seed = mc.seed;
    for (&(i, j), r) in entries.iter().zip(results) {
        let (est, flag) = r?;
        block.values[(i, j)] = est.value;
        block.stderr[(i, j)] = est.stderr;
        if flag {
            block.flagged.push((i, j));
        }
    }
    Ok(block)
}

// ---------------------------------------------------------------------------
// Odd orders

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddCheck {
    /// Largest |mean| over all entries.
    pub max_abs_mean: f64,
    /// Largest |mean| / stderr over all entries.
    pub max_z: f64,
    pub inits: usize,
    pub width: usize,
}

/// Average K⁽³⁾₀(x_a, x_b, x_c) over fresh Gaussian initializations for every
/// ordered triple of rows of `x`.
pub fn expected_odd_kernel_is_zero_check(
    order: usize,
    x: &DMatrix<f64>,
    activation: Activation,
    width: usize,
    inits: usize,
    seed: u64,
) -> Result<OddCheck> {
    if order != 3 {
        return Err(LantkError::Unsupported("only order 3 is implemented".into()));
    }
    if inits < 2 {
        return Err(LantkError::invalid("need at least 2 initializations"));
    }
    activation.require_smooth("third-order kernel")?;
    let n = x.nrows();
    let triples: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|a| (0..n).flat_map(move |b| (0..n).map(move |c| (a, b, c))))
        .collect();
    let samples: Vec<Vec<f64>> = (0..inits)
        .into_par_iter()
        .map(|k| {
            let net = crate::net2::TwoLayerNet::gaussian(
                x.ncols(),
                width,
                activation,
                rng::derive_seed_idx(seed, "odd-check", &[k as u64]),
            )?;
            let feats = net.features(x);
            Ok(triples
                .iter()
                .map(|&(a, b, c)| net.k3_from_features(&feats, x, a, b, c))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut max_abs_mean = 0.0f64;
    let mut max_z = 0.0f64;
    for t in 0..triples.len() {
        let (mut s, mut ss) = (0.0, 0.0);
        for row in &samples {
            s += row[t];
            ss += row[t] * row[t];
        }
        let e = mean_stderr(s, ss, inits);
        max_abs_mean = max_abs_mean.max(e.value.abs());
        if e.stderr > 0.0 {
            max_z = max_z.max(e.value.abs() / e.stderr);
        }
    }
    Ok(OddCheck {
        max_abs_mean,
        max_z,
        inits,
        width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(d: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        v
    }

    #[test]
    fn k2_reference_values() {
        assert!((expected_k2(&e(3, 0), &e(3, 0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((expected_k2(&e(3, 0), &e(3, 1)).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-12);
        let neg: Vec<f64> = e(3, 0).iter().map(|v| -v).collect();
        assert!(expected_k2(&e(3, 0), &neg).unwrap().abs() < 1e-12);
        assert!(expected_k2(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn k2_matrix_identity() {
        let k = expected_k2_matrix(&DMatrix::identity(2, 2)).unwrap().values;
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(expected_k2_matrix(&bad).unwrap_err().to_string().contains("row 1"));
    }

    #[test]
    fn non_relu_rejected() {
        assert!(AnalyticNtkParams::new(Activation::Tanh).is_err());
        assert!(AnalyticNtkParams::new(Activation::Relu).is_ok());
    }

    #[test]
    fn reduce_axis_aligned_is_identity() {
        let (a, b, c, d) = (e(4, 0), e(4, 1), e(4, 2), e(4, 3));
        let r = reduce_to_4d([&a, &b, &c, &d]).unwrap();
        assert!((r.v - Matrix4::identity()).amax() < 1e-15);
        assert!(reduce_to_4d([&a, &a, &c, &d]).is_err());
    }

    #[test]
    fn reduce_coplanar_gamma() {
        let a = vec![1.0, 0.0, 0.0];
        let b = vec![0.0, 1.0, 0.0];
        let c = vec![1.0, 1.0, 0.0];
        let d = vec![0.3, -0.2, 0.9];
        let r = reduce_to_4d([&a, &b, &c, &d]).unwrap();
        let g = r.v * r.v.transpose();
        assert!((g - r.cos).amax() < 1e-10);
    }

    #[test]
    fn kind4_orthogonal_example() {
        let (a, b, c, d) = (e(4, 0), e(4, 1), e(4, 2), e(4, 3));
        let r = reduce_to_4d([&a, &b, &c, &d]).unwrap();
        let v = expected_k4_term(TermKind::IV, &r, &McConfig::default()).unwrap();
        assert!((v.value - 3.0 / (8.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn small_budget_rejected() {
        assert!(orthant_prob_mc(&Matrix4::identity(), 100, 0).is_err());
    }
}
