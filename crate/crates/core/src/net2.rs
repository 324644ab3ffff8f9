//! Two-layer network f(x) = m^{-1/2} aᵀσ(Wx), its training, and the exact
//! finite-width kernels K⁽²⁾, K⁽³⁾, K⁽⁴⁾ at the current parameters.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dataset::BinaryView;
use crate::error::{LantkError, Result};
use crate::kernel::{KernelMatrix, Provenance};
use crate::{matfile, rng};

pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// m×d
    pub w: DMatrix<f64>,
    pub a: DVector<f64>,
    pub activation: Activation,
    pub seed: u64,
    pub symmetrized: bool,
}

/// σ⁽ᵏ⁾(Wx_i) for k = 0..3, indexed `[k][i][r]`.
#[derive(Debug, Clone)]
pub struct NetFeatures {
    pub s: [Vec<Vec<f64>>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub net: TwoLayerNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub snapshots: Vec<Snapshot>,
    /// Loss before each step, plus the final loss (steps + 1 entries).
    pub losses: Vec<f64>,
    pub step_size: f64,
    pub steps: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    activation: Activation,
    seed: u64,
    m: usize,
    d: usize,
    symmetrized: bool,
}

fn gaussian_matrix(r: &mut rng::Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Fill row by row so the draw order does not depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = r.sample(StandardNormal);
        }
    }
    m
}

impl TwoLayerNet {
    /// All entries i.i.d. N(0, 1).
    pub fn gaussian(d: usize, m: usize, activation: Activation, seed: u64) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(LantkError::invalid("net needs d >= 1 and m >= 1"));
        }
        activation.validate()?;
        let mut r = rng::substream(seed, "net-init");
        let w = gaussian_matrix(&mut r, m, d);
        let a = DVector::from_iterator(m, (0..m).map(|_| r.sample::<f64, _>(StandardNormal)));
        Ok(TwoLayerNet {
            w,
            a,
            activation,
            seed,
            symmetrized: false,
        })
    }

    /// Gaussian first half, duplicated with negated output weights, so the
    /// initial function is identically zero. `m` must be even.
    pub fn symmetrized(d: usize, m: usize, activation: Activation, seed: u64) -> Result<Self> {
        if m % 2 != 0 {
            return Err(LantkError::invalid("symmetrized init needs an even width"));
        }
        let half = Self::gaussian(d, m / 2, activation, seed)?;
        let mut w = DMatrix::zeros(m, d);
        w.rows_mut(0, m / 2).copy_from(&half.w);
        w.rows_mut(m / 2, m / 2).copy_from(&half.w);
        let mut a = DVector::zeros(m);
        a.rows_mut(0, m / 2).copy_from(&half.a);
        a.rows_mut(m / 2, m / 2).copy_from(&(-&half.a));
        Ok(TwoLayerNet {
            w,
            a,
            activation,
            seed,
            symmetrized: true,
        })
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    fn check_dim(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(LantkError::invalid(format!(
                "input dimension {} does not match net dimension {}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let u = x * self.w.transpose();
        let scale = 1.0 / (self.width() as f64).sqrt();
        let act = self.activation;
        let s = u.map(|v| act.value(v));
        Ok(s * &self.a * scale)
    }

    /// Per-point activation derivatives at the current weights.
    pub fn features(&self, x: &DMatrix<f64>) -> NetFeatures {
        let act = self.activation;
        let per_point: Vec<[Vec<f64>; 4]> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let xi = x.row(i).transpose();
                let u = &self.w * xi;
                let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(u.len()));
                for &v in u.iter() {
                    let e = act.eval4(v);
                    for k in 0..4 {
                        out[k].push(e[k]);
                    }
                }
                out
            })
            .collect();
        let mut s: [Vec<Vec<f64>>; 4] = std::array::from_fn(|_| Vec::new());
        for p in per_point {
            for (k, v) in p.into_iter().enumerate() {
                s[k].push(v);
            }
        }
        NetFeatures { s }
    }

    fn k2_entry(&self, f: &NetFeatures, g: f64, i: usize, j: usize) -> f64 {
        let (s0, s1) = (&f.s[0], &f.s[1]);
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        for r in 0..self.width() {
            let a = self.a[r];
            t1 += a * a * s1[i][r] * s1[j][r];
            t2 += s0[i][r] * s0[j][r];
        }
        (g * t1 + t2) / self.width() as f64
    }

    /// K⁽²⁾ = (1/m) xᵀx′ ⟨σ′(Wx)⊙a, σ′(Wx′)⊙a⟩ + (1/m)⟨σ(Wx), σ(Wx′)⟩.
    pub fn empirical_k2(&self, x: &DMatrix<f64>) -> Result<KernelMatrix> {
        self.check_dim(x)?;
        let n = x.nrows();
        let f = self.features(x);
        let gram = x * x.transpose();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let vals: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| self.k2_entry(&f, gram[(i, j)], i, j))
            .collect();
        let mut k = DMatrix::zeros(n, n);
        for (&(i, j), v) in pairs.iter().zip(vals) {
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        Ok(KernelMatrix::new(
            k,
            Provenance::new(
                "empirical-ntk",
                serde_json::json!({"m": self.width(), "activation": self.activation, "seed": self.seed}),
            ),
        ))
    }

    /// Rows of `a` against rows of `b`.
    pub fn empirical_k2_cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        let na = a.nrows();
        let mut both = DMatrix::zeros(na + b.nrows(), a.ncols());
        both.rows_mut(0, na).copy_from(a);
        both.rows_mut(na, b.nrows()).copy_from(b);
        let f = self.features(&both);
        let gram = a * b.transpose();
        let vals: Vec<f64> = (0..na * b.nrows())
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / b.nrows(), idx % b.nrows());
                self.k2_entry(&f, gram[(i, j)], i, na + j)
            })
            .collect();
        Ok(DMatrix::from_fn(na, b.nrows(), |i, j| vals[i * b.nrows() + j]))
    }

    /// Third-order kernel from precomputed features; rows a, b, c of `x`.
    /// The activation must be smooth (checked by the public wrappers).
    pub fn k3_from_features(&self, f: &NetFeatures, x: &DMatrix<f64>, a: usize, b: usize, c: usize) -> f64 {
        let g = |i: usize, j: usize| x.row(i).dot(&x.row(j));
        let (gac, gab, gbc) = (g(a, c), g(a, b), g(b, c));
        let (s0, s1, s2) = (&f.s[0], &f.s[1], &f.s[2]);
        let mut t = [0.0f64; 5];
        for r in 0..self.width() {
            let w = self.a[r];
            let w3 = w * w * w;
            t[0] += w3 * s2[a][r] * s1[b][r] * s1[c][r];
            t[1] += w3 * s1[a][r] * s2[b][r] * s1[c][r];
            t[2] += w * s1[a][r] * s1[b][r] * s0[c][r];
            t[3] += w * s1[a][r] * s0[b][r] * s1[c][r];
            t[4] += w * s0[a][r] * s1[b][r] * s1[c][r];
        }
        let m = self.width() as f64;
        (gac * gab * t[0] + gbc * gab * t[1] + 2.0 * gab * t[2] + gac * t[3] + gbc * t[4]) / (m * m.sqrt())
    }

    /// Fourth-order kernel from precomputed features; rows a, b, c, d of `x`.
    pub fn k4_from_features(
        &self,
        f: &NetFeatures,
        x: &DMatrix<f64>,
        ia: usize,
        ib: usize,
        ic: usize,
        id: usize,
    ) -> f64 {
        let idx = [ia, ib, ic, id];
        let mut g = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                g[i][j] = x.row(idx[i]).dot(&x.row(idx[j]));
            }
        }
        let s = |k: usize, p: usize| &f.s[k][idx[p]];
        let (a0, a1, a2, a3) = (s(0, 0), s(0, 1), s(0, 2), s(0, 3));
        let (b0, b1, b2, b3) = (s(1, 0), s(1, 1), s(1, 2), s(1, 3));
        let (c0, c1, c2) = (s(2, 0), s(2, 1), s(2, 2));
        let (d0, d1) = (s(3, 0), s(3, 1));
        let mut t = [0.0f64; 18];
        for r in 0..self.width() {
            let w2 = self.a[r] * self.a[r];
            let w4 = w2 * w2;
            let pb = b0[r] * b1[r] * b2[r] * b3[r];
            t[0] += w4 * d0[r] * b1[r] * b2[r] * b3[r];
            t[1] += w4 * b0[r] * d1[r] * b2[r] * b3[r];
            t[2] += w4 * c0[r] * c1[r] * b2[r] * b3[r];
            t[3] += w4 * c0[r] * b1[r] * c2[r] * b3[r];
            t[4] += w4 * b0[r] * c1[r] * c2[r] * b3[r];
            t[5] += w2 * c0[r] * b1[r] * b2[r] * a3[r];
            t[6] += w2 * b0[r] * c1[r] * b2[r] * a3[r];
            t[7] += w2 * c0[r] * b1[r] * a2[r] * b3[r];
            t[8] += w2 * b0[r] * c1[r] * a2[r] * b3[r];
            t[9] += w2 * pb;
            t[10] += w2 * c0[r] * a1[r] * b2[r] * b3[r];
            t[11] += w2 * b0[r] * a1[r] * c2[r] * b3[r];
            t[12] += w2 * a0[r] * c1[r] * b2[r] * b3[r];
            t[13] += w2 * a0[r] * b1[r] * c2[r] * b3[r];
            // t[14] shares the σ′⁴ inner product with t[9]
            t[15] += b0[r] * b1[r] * a2[r] * a3[r];
            t[16] += b0[r] * a1[r] * b2[r] * a3[r];
            t[17] += a0[r] * b1[r] * b2[r] * a3[r];
        }
        let sum = g[0][1] * g[0][2] * g[0][3] * t[0]
            + g[1][0] * g[1][2] * g[1][3] * t[1]
            + g[0][1] * (g[0][2] * g[1][3] + g[0][3] * g[1][2]) * t[2]
            + g[0][2] * g[0][1] * g[2][3] * t[3]
            + g[1][2] * g[1][0] * g[2][3] * t[4]
            + 3.0 * g[0][1] * g[0][2] * t[5]
            + 3.0 * g[1][0] * g[1][2] * t[6]
            + 2.0 * g[0][1] * g[0][3] * t[7]
            + 2.0 * g[1][0] * g[1][3] * t[8]
            + 2.0 * g[0][1] * g[2][3] * t[9]
            + g[0][2] * g[0][3] * t[10]
            + g[2][0] * g[2][3] * t[11]
            + g[1][2] * g[1][3] * t[12]
            + g[2][1] * g[2][3] * t[13]
            + (g[0][2] * g[1][3] + g[0][3] * g[1][2]) * t[9]
            + 2.0 * g[0][1] * t[15]
            + g[0][2] * t[16]
            + g[1][2] * t[17];
        let m = self.width() as f64;
        sum / (m * m)
    }

    pub fn empirical_k3(&self, xa: &[f64], xb: &[f64], xc: &[f64]) -> Result<f64> {
        self.activation.require_smooth("third-order kernel")?;
        let x = self.stack(&[xa, xb, xc])?;
        let f = self.features(&x);
        Ok(self.k3_from_features(&f, &x, 0, 1, 2))
    }

    pub fn empirical_k4(&self, xa: &[f64], xb: &[f64], xc: &[f64], xd: &[f64]) -> Result<f64> {
        self.activation.require_smooth("fourth-order kernel")?;
        let x = self.stack(&[xa, xb, xc, xd])?;
        let f = self.features(&x);
        Ok(self.k4_from_features(&f, &x, 0, 1, 2, 3))
    }

    fn stack(&self, rows: &[&[f64]]) -> Result<DMatrix<f64>> {
        if rows.iter().any(|r| r.len() != self.dim()) {
            return Err(LantkError::invalid("input dimension does not match net"));
        }
        Ok(DMatrix::from_fn(rows.len(), self.dim(), |i, j| rows[i][j]))
    }

    /// L = (1/2n) Σ (f_i − y_i)².
    pub fn loss(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        let f = self.forward(x)?;
        Ok((f - y).norm_squared() / (2.0 * y.len() as f64))
    }

    /// (∂L/∂W, ∂L/∂a).
    pub fn gradient(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.check_dim(x)?;
        if x.nrows() != y.len() {
            return Err(LantkError::invalid("features/targets length mismatch"));
        }
        let act = self.activation;
        let u = x * self.w.transpose();
        let s0 = u.map(|v| act.value(v));
        let s1 = u.map(|v| act.deriv(v));
        let scale = 1.0 / (self.width() as f64).sqrt();
        let err = &s0 * &self.a * scale - y;
        let n = y.len() as f64;
        let ga = s0.tr_mul(&err) * (scale / n);
        // dW_r = (1/(n√m)) a_r Σ_i e_i σ′(u_ri) x_i
        let mut weighted = s1;
        for i in 0..weighted.nrows() {
            let e = err[i];
            weighted.row_mut(i).scale_mut(e);
        }
        let mut gw = weighted.tr_mul(x);
        for r in 0..gw.nrows() {
            let ar = self.a[r];
            gw.row_mut(r).scale_mut(ar * scale / n);
        }
        Ok((gw, ga))
    }

    fn axpy(&mut self, step: f64, g: &(DMatrix<f64>, DVector<f64>)) {
        self.w += &g.0 * step;
        self.a.axpy(step, &g.1, 1.0);
    }

    /// Full-batch gradient descent on the squared loss. Snapshots are kept
    /// every `snapshot_every` steps (and always at step 0 and the end);
    /// 0 keeps only those two.
    pub fn train_gd(
        &mut self,
        data: &BinaryView,
        step_size: f64,
        steps: usize,
        snapshot_every: usize,
    ) -> Result<TrainTrace> {
        self.train_targets(&data.x, &data.y, step_size, steps, snapshot_every, false)
    }

    /// Gradient flow integrated with classical RK4 at fixed step.
    pub fn train_flow_rk4(
        &mut self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        dt: f64,
        steps: usize,
        snapshot_every: usize,
    ) -> Result<TrainTrace> {
        self.train_targets(x, y, dt, steps, snapshot_every, true)
    }

    /// Gradient descent (or RK4 flow) on arbitrary real targets.
    pub fn train_targets(
        &mut self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        step_size: f64,
        steps: usize,
        snapshot_every: usize,
        rk4: bool,
    ) -> Result<TrainTrace> {
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(LantkError::invalid("step_size must be positive"));
        }
        let mut trace = TrainTrace {
            snapshots: vec![Snapshot {
                step: 0,
                t: 0.0,
                net: self.clone(),
            }],
            losses: Vec::with_capacity(steps + 1),
            step_size,
            steps,
        };
        for step in 0..steps {
            let l = self.loss(x, y)?;
            if !l.is_finite() || l > DIVERGENCE_LOSS {
                return Err(LantkError::numerical(format!(
                    "training diverged at step {step}: loss {l:e}; reduce the step size"
                )));
            }
            trace.losses.push(l);
            if rk4 {
                let k1 = self.gradient(x, y)?;
                let mut tmp = self.clone();
                tmp.axpy(-0.5 * step_size, &k1);
                let k2 = tmp.gradient(x, y)?;
                let mut tmp = self.clone();
                tmp.axpy(-0.5 * step_size, &k2);
                let k3 = tmp.gradient(x, y)?;
                let mut tmp = self.clone();
                tmp.axpy(-step_size, &k3);
                let k4 = tmp.gradient(x, y)?;
                self.axpy(-step_size / 6.0, &k1);
                self.axpy(-step_size / 3.0, &k2);
                self.axpy(-step_size / 3.0, &k3);
                self.axpy(-step_size / 6.0, &k4);
            } else {
                let g = self.gradient(x, y)?;
                self.axpy(-step_size, &g);
            }
            let done = step + 1;
            if (snapshot_every > 0 && done % snapshot_every == 0) || done == steps {
                trace.snapshots.push(Snapshot {
                    step: done,
                    t: done as f64 * step_size,
                    net: self.clone(),
                });
            }
        }
        let l = self.loss(x, y)?;
        if !l.is_finite() || l > DIVERGENCE_LOSS {
            return Err(LantkError::numerical(format!("training diverged: final loss {l:e}")));
        }
        trace.losses.push(l);
        Ok(trace)
    }

    /// Writes `<stem>.W.lantkmat`, `<stem>.a.lantkmat` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        matfile::write_matrix(&dir.join(format!("{stem}.W.lantkmat")), &self.w)?;
        let a = DMatrix::from_column_slice(self.width(), 1, self.a.as_slice());
        matfile::write_matrix(&dir.join(format!("{stem}.a.lantkmat")), &a)?;
        matfile::write_json(
            &dir.join(format!("{stem}.json")),
            &CheckpointMeta {
                activation: self.activation,
                seed: self.seed,
                m: self.width(),
                d: self.dim(),
                symmetrized: self.symmetrized,
            },
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta: CheckpointMeta = matfile::read_json(&dir.join(format!("{stem}.json")))?;
        let w = matfile::read_matrix(&dir.join(format!("{stem}.W.lantkmat")))?;
        let a = matfile::read_matrix(&dir.join(format!("{stem}.a.lantkmat")))?;
        if w.shape() != (meta.m, meta.d) || a.shape() != (meta.m, 1) {
            return Err(LantkError::invalid("checkpoint shapes disagree with metadata"));
        }
        Ok(TwoLayerNet {
            w,
            a: a.column(0).into_owned(),
            activation: meta.activation,
            seed: meta.seed,
            symmetrized: meta.symmetrized,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_x() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 0.8, 0.6, -1.1])
    }

    #[test]
    fn hand_forward() {
        let net = TwoLayerNet {
            w: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            a: DVector::from_element(1, 1.0),
            activation: Activation::Relu,
            seed: 0,
            symmetrized: false,
        };
        let f = net.forward(&DMatrix::from_row_slice(1, 2, &[2.0, -3.0])).unwrap();
        assert_eq!(f[0], 2.0);
    }

    #[test]
    fn symmetrized_starts_at_zero() {
        let net = TwoLayerNet::symmetrized(2, 64, Activation::Tanh, 3).unwrap();
        // twins cancel up to summation order
        assert!(net.forward(&toy_x()).unwrap().iter().all(|&v| v.abs() < 1e-13));
        assert!(TwoLayerNet::symmetrized(2, 7, Activation::Tanh, 3).is_err());
    }

    #[test]
    fn zero_output_weights() {
        let mut net = TwoLayerNet::gaussian(2, 32, Activation::Tanh, 1).unwrap();
        net.a.fill(0.0);
        let x = toy_x();
        assert!(net.forward(&x).unwrap().iter().all(|&v| v == 0.0));
        let f = net.features(&x);
        let k = net.empirical_k2(&x).unwrap().values;
        let direct: f64 = (0..32).map(|r| f.s[0][0][r] * f.s[0][1][r]).sum::<f64>() / 32.0;
        assert!((k[(0, 1)] - direct).abs() < 1e-14);
        let r = |i: usize| x.row(i).iter().copied().collect::<Vec<_>>();
        assert_eq!(net.empirical_k3(&r(0), &r(1), &r(2)).unwrap(), 0.0);
        // Only the σ′σ′σσ-type terms survive in K⁽⁴⁾.
        let k4 = net.empirical_k4(&r(0), &r(1), &r(2), &r(0)).unwrap();
        let g = |i: usize, j: usize| x.row(i).dot(&x.row(j));
        let mut want = 0.0;
        for q in 0..32 {
            let (s0, s1) = (&f.s[0], &f.s[1]);
            want += 2.0 * g(0, 1) * s1[0][q] * s1[1][q] * s0[2][q] * s0[0][q]
                + g(0, 2) * s1[0][q] * s0[1][q] * s1[2][q] * s0[0][q]
                + g(1, 2) * s0[0][q] * s1[1][q] * s1[2][q] * s0[0][q];
        }
        assert!((k4 - want / (32.0 * 32.0)).abs() < 1e-14);
    }

    #[test]
    fn relu_rejected_for_higher_orders() {
        let net = TwoLayerNet::gaussian(2, 8, Activation::Relu, 0).unwrap();
        assert!(net.empirical_k3(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(net
            .empirical_k4(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[1.0, 2.0])
            .is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = TwoLayerNet::gaussian(2, 16, Activation::Tanh, 5).unwrap();
        let x = toy_x();
        let y = DVector::from_row_slice(&[1.0, -1.0, 1.0]);
        let (gw, ga) = net.gradient(&x, &y).unwrap();
        let h = 1e-6;
        for r in [0, 7, 15] {
            let mut p = net.clone();
            p.a[r] += h;
            let mut q = net.clone();
            q.a[r] -= h;
            let fd = (p.loss(&x, &y).unwrap() - q.loss(&x, &y).unwrap()) / (2.0 * h);
            assert!((fd - ga[r]).abs() <= 1e-5 * ga[r].abs().max(1e-3), "a[{r}]");
            for c in 0..2 {
                let mut p = net.clone();
                p.w[(r, c)] += h;
                let mut q = net.clone();
                q.w[(r, c)] -= h;
                let fd = (p.loss(&x, &y).unwrap() - q.loss(&x, &y).unwrap()) / (2.0 * h);
                assert!(
                    (fd - gw[(r, c)]).abs() <= 1e-5 * gw[(r, c)].abs().max(1e-3),
                    "w[{r},{c}]"
                );
            }
        }
    }

    #[test]
    fn zero_steps_and_determinism() {
        let x = toy_x();
        let y = DVector::from_row_slice(&[1.0, -1.0, 1.0]);
        let view = BinaryView::from_parts(x, y).unwrap();
        let mut a = TwoLayerNet::gaussian(2, 16, Activation::Tanh, 2).unwrap();
        let t0 = a.train_gd(&view, 0.1, 0, 0).unwrap();
        assert_eq!(t0.snapshots.len(), 1);
        assert_eq!(t0.losses.len(), 1);
        let mut b = TwoLayerNet::gaussian(2, 16, Activation::Tanh, 2).unwrap();
        let mut c = b.clone();
        let tb = b.train_gd(&view, 0.1, 20, 5).unwrap();
        let tc = c.train_gd(&view, 0.1, 20, 5).unwrap();
        assert_eq!(tb, tc);
        assert_eq!(tb.snapshots.len(), 5);
    }

    #[test]
    fn divergence_detected() {
        let x = DMatrix::from_row_slice(1, 1, &[50.0]);
        let y = DVector::from_element(1, 1.0);
        // saturated tanh: the output weights see curvature 1, so step 10 overshoots
        let mut net = TwoLayerNet::gaussian(1, 4, Activation::Tanh, 0).unwrap();
        net.w.fill(1.0);
        net.a.fill(1.0);
        let err = net.train_targets(&x, &y, 10.0, 50, 0, false).unwrap_err();
        assert!(err.to_string().contains("diverged"));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let net = TwoLayerNet::symmetrized(3, 8, Activation::Softplus { beta: 2.0 }, 4).unwrap();
        net.save(dir.path(), "net").unwrap();
        assert_eq!(TwoLayerNet::load(dir.path(), "net").unwrap(), net);
    }
}
