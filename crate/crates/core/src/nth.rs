//! Kernels obtained by integrating the truncated tangent hierarchy along the
//! kernel gradient flow.
//!
//! Block convention: `k4[(i, j)] = K⁽⁴⁾(x, x′, x_i, x_j)`. The first block
//! index is contracted with the outer time integral, the second with the
//! inner one; the fourth-order kernel is not symmetric in its last two
//! arguments, so the order matters.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LantkError, Result};
use crate::kernel::{KernelMatrix, Provenance};
use crate::kernels_analytic::{self, FourthOrderBlock, McConfig};
use crate::linalg::{check_symmetric, EigenKernel};
use crate::net2::TwoLayerNet;
use crate::rng;

pub const DEFAULT_FLOOR: f64 = 1e-8;
pub const GRID_GUARDRAIL_N: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NthConfig {
    /// Training time; `f64::INFINITY` selects the limit kernel.
    pub t: f64,
    pub use_expected_kernels: bool,
    /// Relative eigenvalue floor for every inverse of the train kernel.
    pub ridge_floor: f64,
    pub mc: McConfig,
    /// The fourth-order coefficient is divided by this width before use.
    pub width: f64,
    pub cache_dir: Option<PathBuf>,
    pub override_guardrail: bool,
}

impl Default for NthConfig {
    fn default() -> Self {
        NthConfig {
            t: f64::INFINITY,
            use_expected_kernels: true,
            ridge_floor: DEFAULT_FLOOR,
            mc: McConfig::default(),
            width: 1.0,
            cache_dir: None,
            override_guardrail: false,
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(LantkError::invalid(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

/// h_t = y + e^{−tH/n}(h₀ − y), the exact solution of ḣ = −(1/n)H(h − y).
pub fn flow_solution(h: &DMatrix<f64>, y: &DVector<f64>, h0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    check_t(t)?;
    check_symmetric(h, 1e-8, "H")?;
    let n = h.nrows();
    if y.len() != n || h0.len() != n {
        return Err(LantkError::invalid("H, y and h0 sizes differ"));
    }
    if t == 0.0 {
        return Ok(h0.clone());
    }
    let eig = ((h + h.transpose()) * 0.5).symmetric_eigen();
    let r = h0 - y;
    let mut c = eig.eigenvectors.tr_mul(&r);
    let nf = n as f64;
    for k in 0..n {
        let l = eig.eigenvalues[k];
        c[k] *= if t.is_infinite() {
            if l > 0.0 {
                0.0
            } else {
                return Err(LantkError::numerical("t = ∞ needs a positive definite H"));
            }
        } else {
            (-t * l / nf).exp()
        };
    }
    Ok(y + &eig.eigenvectors * c)
}

/// Shared pieces of the closed-form kernels for one training set.
#[derive(Debug, Clone)]
pub struct FlowSystem {
    pub eig: EigenKernel,
    pub y: DVector<f64>,
    /// Pᵀy
    pub py: DVector<f64>,
    /// H⁻¹y (floored)
    pub hinv_y: DVector<f64>,
}

impl FlowSystem {
    pub fn new(h: &DMatrix<f64>, y: &DVector<f64>, floor_rel: f64) -> Result<Self> {
        if h.nrows() != y.len() {
            return Err(LantkError::invalid("H and y sizes differ"));
        }
        let eig = EigenKernel::new(h, floor_rel)?;
        let py = eig.p.tr_mul(y);
        let hinv_y = eig.solve(y);
        Ok(FlowSystem {
            eig,
            y: y.clone(),
            py,
            hinv_y,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Second and third terms at time t (t finite).
    fn finite_terms(&self, k3: &DVector<f64>, k4: &DMatrix<f64>, t: f64) -> f64 {
        let n = self.n() as f64;
        let d = &self.eig.d;
        // v = H⁻¹(I − e^{−tH/n})y
        let mut c = self.py.clone();
        for k in 0..c.len() {
            c[k] *= -(-t * d[k] / n).exp_m1() / d[k];
        }
        let v = &self.eig.p * c;
        let second = k3.dot(&v);
        let third = v.dot(&(k4 * &self.hinv_y));
        let m = self.rotated(k4);
        let mut q = 0.0;
        for i in 0..d.len() {
            for j in 0..d.len() {
                let s = d[i] + d[j];
                q += self.py[i] * self.py[j] * (-(-t * s / n).exp_m1()) * m[(i, j)] / s;
            }
        }
        second + third - q
    }

    /// PᵀK₄P D⁻¹
    fn rotated(&self, k4: &DMatrix<f64>) -> DMatrix<f64> {
        let mut m = self.eig.p.transpose() * k4 * &self.eig.p;
        for j in 0..m.ncols() {
            let dj = self.eig.d[j];
            m.column_mut(j).unscale_mut(dj);
        }
        m
    }

    /// t → ∞ label-aware part without the third-order term:
    /// yᵀH⁻¹K₄H⁻¹y − yᵀP Q̄ Pᵀy, Q̄_ij = (PᵀK₄PD⁻¹)_ij/(D_i + D_j).
    pub fn limit_label_aware(&self, k4: &DMatrix<f64>) -> f64 {
        let first = self.hinv_y.dot(&(k4 * &self.hinv_y));
        let m = self.rotated(k4);
        let d = &self.eig.d;
        let mut q = 0.0;
        for i in 0..d.len() {
            for j in 0..d.len() {
                q += self.py[i] * self.py[j] * m[(i, j)] / (d[i] + d[j]);
            }
        }
        first - q
    }
}

/// Finite-t kernel obtained by exactly integrating the truncated hierarchy
/// along the linear flow from f₀ = 0.
pub fn prop1_kernel(
    k2_0: f64,
    k3_vec: &DVector<f64>,
    k4_block: &DMatrix<f64>,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    t: f64,
    floor_rel: f64,
) -> Result<f64> {
    check_t(t)?;
    if t.is_infinite() {
        return Err(LantkError::invalid("t = ∞ is not accepted here; use lantk_nth"));
    }
    let n = y.len();
    if k3_vec.len() != n || k4_block.shape() != (n, n) {
        return Err(LantkError::invalid("K3 vector / K4 block sizes do not match y"));
    }
    let sys = FlowSystem::new(h, y, floor_rel)?;
    Ok(k2_0 + sys.finite_terms(k3_vec, k4_block, t))
}

/// Empirical inputs to `prop1_kernel` for one probe pair, taken from a
/// finite-width net at its current parameters.
#[derive(Debug, Clone)]
pub struct Prop1Inputs {
    pub k2: f64,
    pub k3: DVector<f64>,
    pub k4: DMatrix<f64>,
}

pub fn prop1_inputs_from_net(net: &TwoLayerNet, x_train: &DMatrix<f64>, xa: &[f64], xb: &[f64]) -> Result<Prop1Inputs> {
    net.activation.require_smooth("finite-t hierarchy kernel")?;
    let n = x_train.nrows();
    let mut all = DMatrix::zeros(n + 2, x_train.ncols());
    all.rows_mut(0, n).copy_from(x_train);
    all.row_mut(n).copy_from_slice(xa);
    all.row_mut(n + 1).copy_from_slice(xb);
    let f = net.features(&all);
    let (a, b) = (n, n + 1);
    let k2 = net
        .empirical_k2(&DMatrix::from_fn(2, all.ncols(), |i, j| all[(n + i, j)]))?
        .values[(0, 1)];
    let k3 = DVector::from_iterator(n, (0..n).map(|i| net.k3_from_features(&f, &all, a, b, i)));
    let cells: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| net.k4_from_features(&f, &all, a, b, idx / n, idx % n))
        .collect();
    let k4 = DMatrix::from_row_slice(n, n, &cells);
    Ok(Prop1Inputs { k2, k3, k4 })
}

// ---------------------------------------------------------------------------
// LANTK-NTH

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NthValue {
    pub agnostic: f64,
    pub label_aware: f64,
    pub value: f64,
    pub flagged_entries: usize,
    pub cache_key: String,
}

#[derive(Debug, Clone)]
pub struct NthModel {
    pub x_train: DMatrix<f64>,
    pub sys: FlowSystem,
    pub cfg: NthConfig,
    data_hash: u64,
}

impl NthModel {
    pub fn fit(x_train: &DMatrix<f64>, y: &DVector<f64>, cfg: &NthConfig) -> Result<Self> {
        if !cfg.t.is_infinite() || cfg.t < 0.0 {
            return Err(LantkError::invalid(
                "the limit kernel needs t = ∞; use prop1_kernel for finite t",
            ));
        }
        if !cfg.use_expected_kernels {
            return Err(LantkError::Unsupported(
                "the limit kernel is defined with expected kernels only".into(),
            ));
        }
        if !(cfg.width > 0.0) {
            return Err(LantkError::invalid("width must be positive"));
        }
        let ek2 = kernels_analytic::expected_k2_matrix(x_train)?;
        let sys = FlowSystem::new(&ek2.values, y, cfg.ridge_floor)?;
        let mut bits: Vec<f64> = x_train.transpose().as_slice().to_vec();
        bits.extend(y.iter());
        Ok(NthModel {
            x_train: x_train.clone(),
            sys,
            cfg: cfg.clone(),
            data_hash: rng::hash_f64s(&bits),
        })
    }

    pub fn floored_eigenvalues(&self) -> usize {
        self.sys.eig.floored
    }

    pub fn label_aware_from_block(&self, block: &DMatrix<f64>) -> f64 {
        self.sys.limit_label_aware(block) / self.cfg.width
    }

    fn probe_key(&self, x: &[f64], x2: &[f64]) -> (u64, String) {
        let mut bits = x.to_vec();
        bits.extend_from_slice(x2);
        let probe = rng::hash_f64s(&bits);
        let key = rng::fnv1a(
            format!(
                "{probe:016x}-{:016x}-{}-{}",
                self.data_hash, self.cfg.mc.samples, self.cfg.mc.seed
            )
            .as_bytes(),
        );
        (probe, format!("{key:016x}"))
    }

    pub fn block(&self, x: &[f64], x2: &[f64]) -> Result<(FourthOrderBlock, String)> {
        let (probe, key) = self.probe_key(x, x2);
        let path = self
            .cfg
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("ek4-{key}.lantkmat")));
        if let Some(p) = &path {
            if p.exists() {
                if let Ok(b) = FourthOrderBlock::load(p) {
                    if b.probe.0 == x && b.probe.1 == x2 {
                        return Ok((b, key));
                    }
                }
            }
        }
        let mc = McConfig {
            samples: self.cfg.mc.samples,
            seed: rng::derive_seed_idx(self.cfg.mc.seed, "nth-probe", &[probe]),
        };
        let b = kernels_analytic::expected_k4_block(x, x2, &self.x_train, &mc)?;
        if let Some(p) = &path {
            std::fs::create_dir_all(p.parent().unwrap())?;
            b.save(p)?;
        }
        Ok((b, key))
    }

    pub fn evaluate(&self, x: &[f64], x2: &[f64]) -> Result<NthValue> {
        let agnostic = kernels_analytic::expected_k2(x, x2)?;
        let (b, key) = self.block(x, x2)?;
        let label_aware = self.label_aware_from_block(&b.values);
        Ok(NthValue {
            agnostic,
            label_aware,
            value: agnostic + label_aware,
            flagged_entries: b.flagged.len(),
            cache_key: key,
        })
    }
}

pub enum Probes {
    /// Every pair of training points.
    Grid,
    Pairs(Vec<(Vec<f64>, Vec<f64>)>),
}

#[derive(Debug, Clone)]
pub struct NthOutput {
    /// n×n for the grid, k×1 for explicit pairs.
    pub kernel: KernelMatrix,
    pub values: Vec<NthValue>,
}

pub fn lantk_nth(x_train: &DMatrix<f64>, y: &DVector<f64>, probes: &Probes, cfg: &NthConfig) -> Result<NthOutput> {
    let n = x_train.nrows();
    if matches!(probes, Probes::Grid) && n > GRID_GUARDRAIL_N && !cfg.override_guardrail {
        return Err(LantkError::Guardrail(format!(
            "full-grid label-aware hierarchy kernel with n = {n} > {GRID_GUARDRAIL_N} costs at least O(n^4) \
             Monte-Carlo integrals; pass --override-n-guardrail to proceed"
        )));
    }
    let model = NthModel::fit(x_train, y, cfg)?;
    let prov = |shape: &str| {
        Provenance::new(
            "lantk-nth",
            serde_json::json!({
                "t": "inf",
                "ridge_floor": cfg.ridge_floor,
                "floored_eigenvalues": model.floored_eigenvalues(),
                "mc": cfg.mc,
                "width": cfg.width,
                "probes": shape,
            }),
        )
    };
    match probes {
        Probes::Grid => {
            let rows = crate::linalg::rows_of(x_train);
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
            let vals: Vec<NthValue> = pairs
                .iter()
                .map(|&(i, j)| model.evaluate(&rows[i], &rows[j]))
                .collect::<Result<_>>()?;
            let mut k = DMatrix::zeros(n, n);
            for (&(i, j), v) in pairs.iter().zip(&vals) {
                k[(i, j)] = v.value;
                k[(j, i)] = v.value;
            }
            Ok(NthOutput {
                kernel: KernelMatrix::new(k, prov("grid")),
                values: vals,
            })
        }
        Probes::Pairs(list) => {
            let vals: Vec<NthValue> = list.iter().map(|(a, b)| model.evaluate(a, b)).collect::<Result<_>>()?;
            let k = DMatrix::from_iterator(vals.len(), 1, vals.iter().map(|v| v.value));
            Ok(NthOutput {
                kernel: KernelMatrix::new(k, prov("pairs")),
                values: vals,
            })
        }
    }
}

/// Label-aware part of the limit kernel for one probe pair.
pub fn label_aware_component(
    x_train: &DMatrix<f64>,
    y: &DVector<f64>,
    x: &[f64],
    x2: &[f64],
    cfg: &NthConfig,
) -> Result<f64> {
    let model = NthModel::fit(x_train, y, cfg)?;
    Ok(model.evaluate(x, x2)?.label_aware)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::Rng;
        let mut r = rng::substream(seed, "spd");
        let a = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn flow_scalar_and_limits() {
        let h = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 1.0);
        let z = DVector::zeros(1);
        let v = flow_solution(&h, &y, &z, 1.0).unwrap();
        assert!((v[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let h0 = DVector::from_element(1, 0.3);
        assert_eq!(flow_solution(&h, &y, &h0, 0.0).unwrap(), h0);
        let h = spd(4, 1);
        let y = DVector::from_row_slice(&[1.0, -1.0, 0.5, 2.0]);
        let v = flow_solution(&h, &y, &DVector::zeros(4), f64::INFINITY).unwrap();
        assert!((v - &y).amax() < 1e-10);
        assert!(flow_solution(&h, &y, &DVector::zeros(4), -1.0).is_err());
    }

    #[test]
    fn flow_satisfies_ode() {
        let h = spd(5, 2);
        let y = DVector::from_row_slice(&[1.0, -1.0, 0.5, 2.0, -0.3]);
        let h0 = DVector::from_row_slice(&[0.2, 0.1, -0.4, 0.0, 1.0]);
        let eps = 1e-4;
        for &t in &[0.3, 2.0, 7.5] {
            let a = flow_solution(&h, &y, &h0, t + eps).unwrap();
            let b = flow_solution(&h, &y, &h0, t - eps).unwrap();
            let deriv = (a - b) / (2.0 * eps);
            let ht = flow_solution(&h, &y, &h0, t).unwrap();
            let rhs = -(&h * (ht - &y)) / 5.0;
            assert!((deriv - rhs).norm() < 1e-6 * y.norm());
        }
    }

    #[test]
    fn prop1_at_zero_and_rejects_infinity() {
        let h = spd(3, 4);
        let y = DVector::from_row_slice(&[1.0, -1.0, 1.0]);
        let k3 = DVector::from_row_slice(&[0.3, 0.1, -0.2]);
        let k4 = spd(3, 5);
        assert_eq!(prop1_kernel(0.7, &k3, &k4, &h, &y, 0.0, 1e-12).unwrap(), 0.7);
        assert!(prop1_kernel(0.7, &k3, &k4, &h, &y, f64::INFINITY, 1e-12).is_err());
    }

    #[test]
    fn prop1_converges_to_limit() {
        let h = spd(4, 6);
        let y = DVector::from_row_slice(&[1.0, -1.0, 1.0, -1.0]);
        let k3 = DVector::zeros(4);
        let k4 = spd(4, 7);
        let sys = FlowSystem::new(&h, &y, 1e-12).unwrap();
        let limit = sys.limit_label_aware(&k4);
        let lmin = sys.eig.d[3];
        let t_big = 1e6 * 4.0 / lmin;
        let v = prop1_kernel(0.0, &k3, &k4, &h, &y, t_big, 1e-12).unwrap();
        assert!((v - limit).abs() < 1e-8 * limit.abs().max(1.0));
        let mut prev = f64::INFINITY;
        for t in [1.0, 10.0, 100.0, 1000.0] {
            let gap = (prop1_kernel(0.0, &k3, &k4, &h, &y, t, 1e-12).unwrap() - limit).abs();
            assert!(gap <= prev + 1e-12);
            prev = gap;
        }
    }
}
