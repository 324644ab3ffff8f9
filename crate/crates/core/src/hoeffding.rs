//! Brute-force Hoeffding decomposition of functions of n binary labels.
//!
//! A label vector y ∈ {±1}ⁿ is stored as a bitmask k with y_i = +1 iff bit i
//! of k is set. Function tables have 2ⁿ entries indexed by that mask.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LantkError, Result};

pub const MAX_N: usize = 12;
pub const MAX_JOINT_N: usize = 8;

pub fn label(k: usize, i: usize) -> f64 {
    if k >> i & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// "+-+" style key, position i holding the sign of y_i.
pub fn sign_pattern(k: usize, n: usize) -> String {
    (0..n).map(|i| if k >> i & 1 == 1 { '+' } else { '-' }).collect()
}

pub fn parse_sign_pattern(s: &str) -> Result<usize> {
    let mut k = 0;
    for (i, c) in s.chars().enumerate() {
        match c {
            '+' => k |= 1 << i,
            '-' => {}
            _ => return Err(LantkError::invalid(format!("bad sign pattern {s:?}"))),
        }
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LabelLaw {
    /// Independent labels with P(y_i = +1) = p_plus[i].
    Product { p_plus: Vec<f64> },
    /// Arbitrary joint table over the 2ⁿ masks.
    Table { n: usize, probs: Vec<f64> },
}

impl LabelLaw {
    pub fn uniform(n: usize) -> Result<Self> {
        Self::product(vec![0.5; n])
    }

    pub fn product(p_plus: Vec<f64>) -> Result<Self> {
        if p_plus.is_empty() || p_plus.len() > MAX_N {
            return Err(LantkError::invalid(format!("label count must be in 1..={MAX_N}")));
        }
        if p_plus.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(LantkError::invalid("probabilities must lie in [0, 1]"));
        }
        Ok(LabelLaw::Product { p_plus })
    }

    pub fn table(n: usize, probs: Vec<f64>) -> Result<Self> {
        if n == 0 || n > MAX_JOINT_N {
            return Err(LantkError::invalid(format!(
                "joint tables need 1 <= n <= {MAX_JOINT_N}"
            )));
        }
        if probs.len() != 1 << n {
            return Err(LantkError::invalid(format!(
                "joint table needs {} entries, got {}",
                1 << n,
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(LantkError::invalid("probabilities must be >= 0"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(LantkError::invalid(format!("probabilities sum to {s}, not 1")));
        }
        Ok(LabelLaw::Table { n, probs })
    }

    pub fn n(&self) -> usize {
        match self {
            LabelLaw::Product { p_plus } => p_plus.len(),
            LabelLaw::Table { n, .. } => *n,
        }
    }

    pub fn prob(&self, k: usize) -> f64 {
        match self {
            LabelLaw::Product { p_plus } => p_plus
                .iter()
                .enumerate()
                .map(|(i, p)| if k >> i & 1 == 1 { *p } else { 1.0 - p })
                .product(),
            LabelLaw::Table { probs, .. } => probs[k],
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..1 << self.n()).map(|k| self.prob(k)).collect()
    }

    /// E[f | y_B] as a full table. Conditioning events of probability zero
    /// get the value 0.
    pub fn cond_exp(&self, f: &[f64], b: usize) -> Vec<f64> {
        let n = self.n();
        let size = 1 << n;
        match self {
            LabelLaw::Product { p_plus } => {
                // integrate out each coordinate outside B in turn
                let mut g = f.to_vec();
                for i in 0..n {
                    if b >> i & 1 == 1 {
                        continue;
                    }
                    let bit = 1 << i;
                    for k in 0..size {
                        if k & bit == 0 {
                            let v = (1.0 - p_plus[i]) * g[k] + p_plus[i] * g[k | bit];
                            g[k] = v;
                            g[k | bit] = v;
                        }
                    }
                }
                g
            }
            LabelLaw::Table { probs, .. } => {
                let mut num = vec![0.0; size];
                let mut den = vec![0.0; size];
                for k in 0..size {
                    num[k & b] += probs[k] * f[k];
                    den[k & b] += probs[k];
                }
                (0..size)
                    .map(|k| {
                        let d = den[k & b];
                        if d > 0.0 {
                            num[k & b] / d
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn expect(&self, f: &[f64]) -> f64 {
        (0..f.len()).map(|k| self.prob(k) * f[k]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub n: usize,
    /// components[A] is proj_A f as a full 2ⁿ table.
    pub components: Vec<Vec<f64>>,
}

/// proj_A f = Σ_{B⊆A} (−1)^{|A∖B|} E[f | y_B].
pub fn decompose(f: &[f64], law: &LabelLaw) -> Result<Decomposition> {
    let n = law.n();
    let size = 1 << n;
    if f.len() != size {
        return Err(LantkError::invalid(format!(
            "table has {} entries, law needs {size}",
            f.len()
        )));
    }
    crate::error::ensure_finite(f, "function table")?;
    let conds: Vec<Vec<f64>> = (0..size).map(|b| law.cond_exp(f, b)).collect();
    let components = (0..size)
        .map(|a| {
            let mut g = vec![0.0; size];
            // iterate over subsets B of A
            let mut b = a;
            loop {
                let sign = if (a & !b).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                for (gk, ck) in g.iter_mut().zip(&conds[b]) {
                    *gk += sign * ck;
                }
                if b == 0 {
                    break;
                }
                b = (b - 1) & a;
            }
            g
        })
        .collect();
    Ok(Decomposition { n, components })
}

impl Decomposition {
    /// Σ_{|A| ≤ r} proj_A f.
    pub fn truncate(&self, max_order: usize) -> Vec<f64> {
        let size = 1 << self.n;
        let mut out = vec![0.0; size];
        for (a, g) in self.components.iter().enumerate() {
            if a.count_ones() as usize <= max_order {
                for (o, v) in out.iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        self.truncate(self.n)
    }

    /// Largest |proj_A f| over all A with |A| > r.
    pub fn max_above_order(&self, r: usize) -> f64 {
        self.components
            .iter()
            .enumerate()
            .filter(|(a, _)| a.count_ones() as usize > r)
            .flat_map(|(_, g)| g.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }

    /// proj_A f as a table over the |A| labels in A, keyed by sign pattern.
    pub fn component_table(&self, a: usize) -> BTreeMap<String, f64> {
        let idx: Vec<usize> = (0..self.n).filter(|i| a >> i & 1 == 1).collect();
        (0..1usize << idx.len())
            .map(|s| {
                let mut k = 0;
                for (j, &i) in idx.iter().enumerate() {
                    if s >> j & 1 == 1 {
                        k |= 1 << i;
                    }
                }
                (sign_pattern(s, idx.len()), self.components[a][k])
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let comps: BTreeMap<String, BTreeMap<String, f64>> = (0..self.components.len())
            .map(|a| (subset_name(a, self.n), self.component_table(a)))
            .collect();
        serde_json::json!({"n": self.n, "components": comps})
    }
}

pub fn subset_name(a: usize, n: usize) -> String {
    let items: Vec<String> = (0..n).filter(|i| a >> i & 1 == 1).map(|i| i.to_string()).collect();
    format!("{{{}}}", items.join(","))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingReport {
    pub n: usize,
    pub reconstruction_error: f64,
    pub max_cross_moment: f64,
    pub max_membership_residual: f64,
}

impl HoeffdingReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.reconstruction_error <= tol && self.max_cross_moment <= tol && self.max_membership_residual <= tol
    }
}

/// Reconstruction, pairwise orthogonality, and E[g_A | y_B] = 0 for |B| < |A|.
/// Cost grows like 8ⁿ; meant for n ≤ 6.
pub fn verify(f: &[f64], law: &LabelLaw, dec: &Decomposition) -> HoeffdingReport {
    let size = 1 << dec.n;
    let rec = dec.reconstruct();
    let reconstruction_error = rec.iter().zip(f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let p = law.probs();
    let mut max_cross_moment: f64 = 0.0;
    for a in 0..size {
        for b in (a + 1)..size {
            let m: f64 = (0..size)
                .map(|k| p[k] * dec.components[a][k] * dec.components[b][k])
                .sum();
            max_cross_moment = max_cross_moment.max(m.abs());
        }
    }
    let mut max_membership_residual: f64 = 0.0;
    for a in 1..size {
        let order = a.count_ones();
        for b in 0..size {
            if b.count_ones() < order {
                let c = law.cond_exp(&dec.components[a], b);
                // only label vectors with positive mass matter
                for k in 0..size {
                    if p[k] > 0.0 {
                        max_membership_residual = max_membership_residual.max(c[k].abs());
                    }
                }
            }
        }
    }
    HoeffdingReport {
        n: dec.n,
        reconstruction_error,
        max_cross_moment,
        max_membership_residual,
    }
}

/// Table of c + Σ_ij w_ij y_i y_j, the shape of a label-aware kernel entry
/// whose Z is linear in the pair products.
pub fn quadratic_form_table(constant: f64, w: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = w.nrows();
    if w.ncols() != n || n == 0 || n > MAX_N {
        return Err(LantkError::invalid("weight matrix must be square with 1..=12 rows"));
    }
    Ok((0..1usize << n)
        .map(|k| {
            let mut s = constant;
            for i in 0..n {
                for j in 0..n {
                    s += w[(i, j)] * label(k, i) * label(k, j);
                }
            }
            s
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionTable {
    pub n: usize,
    pub values: BTreeMap<String, f64>,
}

impl FunctionTable {
    pub fn from_vec(n: usize, f: &[f64]) -> Self {
        FunctionTable {
            n,
            values: f.iter().enumerate().map(|(k, v)| (sign_pattern(k, n), *v)).collect(),
        }
    }

    pub fn to_vec(&self) -> Result<Vec<f64>> {
        if self.n == 0 || self.n > MAX_N {
            return Err(LantkError::invalid(format!("label count must be in 1..={MAX_N}")));
        }
        let size = 1 << self.n;
        if self.values.len() != size {
            return Err(LantkError::invalid(format!(
                "table needs {size} sign patterns, got {}",
                self.values.len()
            )));
        }
        let mut out = vec![f64::NAN; size];
        for (key, v) in &self.values {
            if key.len() != self.n {
                return Err(LantkError::invalid(format!("sign pattern {key:?} has wrong length")));
            }
            out[parse_sign_pattern(key)?] = *v;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_order_function() {
        let law = LabelLaw::uniform(3).unwrap();
        let f: Vec<f64> = (0..8).map(|k| label(k, 0)).collect();
        let d = decompose(&f, &law).unwrap();
        for a in 0..8 {
            let expect: Vec<f64> = if a == 1 { f.clone() } else { vec![0.0; 8] };
            for (x, y) in d.components[a].iter().zip(&expect) {
                assert!((x - y).abs() < 1e-14, "A={a}");
            }
        }
    }

    #[test]
    fn pure_second_order() {
        let law = LabelLaw::uniform(2).unwrap();
        let f: Vec<f64> = (0..4).map(|k| label(k, 0) * label(k, 1)).collect();
        let d = decompose(&f, &law).unwrap();
        assert!(d.max_above_order(1) > 0.5);
        assert!(d.truncate(1).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn truncation_ends() {
        let law = LabelLaw::product(vec![0.3, 0.8, 0.5]).unwrap();
        let f = vec![0.1, -2.0, 0.5, 3.0, 1.0, 0.0, -1.0, 0.25];
        let d = decompose(&f, &law).unwrap();
        let full = d.truncate(3);
        for (a, b) in full.iter().zip(&f) {
            assert!((a - b).abs() < 1e-12);
        }
        let mean = law.expect(&f);
        assert!(d.truncate(0).iter().all(|v| (v - mean).abs() < 1e-12));
        let r = verify(&f, &law, &d);
        assert!(r.passes(1e-10), "{r:?}");
    }

    #[test]
    fn joint_table_matches_product() {
        let prod = LabelLaw::product(vec![0.3, 0.6]).unwrap();
        let tab = LabelLaw::table(2, prod.probs()).unwrap();
        let f = vec![1.0, 2.0, -0.5, 4.0];
        let a = decompose(&f, &prod).unwrap();
        let b = decompose(&f, &tab).unwrap();
        for (x, y) in a.components.iter().flatten().zip(b.components.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn size_mismatch() {
        let law = LabelLaw::uniform(2).unwrap();
        assert!(decompose(&[1.0; 3], &law).is_err());
        assert!(LabelLaw::table(2, vec![0.5, 0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn sign_pattern_json() {
        let t = FunctionTable::from_vec(2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.values["+-"], 2.0);
        assert_eq!(t.to_vec().unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let d = decompose(&[1.0, 2.0, 3.0, 4.0], &LabelLaw::uniform(2).unwrap()).unwrap();
        let j = d.to_json();
        assert!(j["components"]["{0,1}"]["++"].is_number());
    }
}
