use serde::{Deserialize, Serialize};

use crate::error::{LantkError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Erf,
    /// log(1 + e^{βx}) / β; tends to ReLU as β grows.
    Softplus {
        beta: f64,
    },
}

impl Activation {
    pub fn name(&self) -> String {
        match self {
            Activation::Relu => "relu".into(),
            Activation::Tanh => "tanh".into(),
            Activation::Erf => "erf".into(),
            Activation::Softplus { beta } => format!("softplus(beta={beta})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Activation::Softplus { beta } = self {
            if !(*beta > 0.0 && beta.is_finite()) {
                return Err(LantkError::invalid("softplus beta must be positive and finite"));
            }
        }
        Ok(())
    }

    /// ReLU has no pointwise second or third derivative.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Activation::Relu)
    }

    pub fn require_smooth(&self, what: &str) -> Result<()> {
        if self.is_smooth() {
            Ok(())
        } else {
            Err(LantkError::Unsupported(format!(
                "{what} needs a smooth activation (tanh, erf, softplus); relu derivatives are distributions"
            )))
        }
    }

    /// σ, σ′, σ″, σ‴ at u. For ReLU the last two are reported as 0 and
    /// σ′(0) = 0.
    #[inline]
    pub fn eval4(&self, u: f64) -> [f64; 4] {
        match *self {
            Activation::Relu => {
                if u > 0.0 {
                    [u, 1.0, 0.0, 0.0]
                } else {
                    [0.0, 0.0, 0.0, 0.0]
                }
            }
            Activation::Tanh => {
                let t = u.tanh();
                let s = 1.0 - t * t;
                [t, s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t)]
            }
            Activation::Erf => {
                let g = std::f64::consts::FRAC_2_SQRT_PI * (-u * u).exp();
                [libm::erf(u), g, -2.0 * u * g, (4.0 * u * u - 2.0) * g]
            }
            Activation::Softplus { beta } => {
                let z = beta * u;
                let val = (z.max(0.0) + (-z.abs()).exp().ln_1p()) / beta;
                let s = if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                };
                let q = s * (1.0 - s);
                [val, s, beta * q, beta * beta * q * (1.0 - 2.0 * s)]
            }
        }
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Activation::Relu => u.max(0.0),
            Activation::Tanh => u.tanh(),
            _ => self.eval4(u)[0],
        }
    }

    #[inline]
    pub fn deriv(&self, u: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            _ => self.eval4(u)[1],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(act: Activation) {
        let h = 1e-5;
        for &u in &[-1.7, -0.3, 0.0, 0.4, 2.2] {
            let d = act.eval4(u);
            for k in 0..3 {
                let fd = (act.eval4(u + h)[k] - act.eval4(u - h)[k]) / (2.0 * h);
                assert!((fd - d[k + 1]).abs() < 1e-6, "{} order {} at {u}", act.name(), k + 1);
            }
        }
    }

    #[test]
    fn smooth_derivatives_match_finite_differences() {
        fd_check(Activation::Tanh);
        fd_check(Activation::Erf);
        fd_check(Activation::Softplus { beta: 1.0 });
        fd_check(Activation::Softplus { beta: 4.0 });
    }

    #[test]
    fn relu_conventions() {
        assert_eq!(Activation::Relu.eval4(0.0), [0.0; 4]);
        assert_eq!(Activation::Relu.eval4(2.0)[..2], [2.0, 1.0]);
        assert!(Activation::Relu.require_smooth("x").is_err());
    }

    #[test]
    fn softplus_stable_at_extremes() {
        let a = Activation::Softplus { beta: 20.0 };
        assert!((a.value(100.0) - 100.0).abs() < 1e-12);
        assert!(a.value(-100.0) >= 0.0 && a.value(-100.0) < 1e-12);
    }

    #[test]
    fn serde_shape() {
        let s = serde_json::to_string(&Activation::Softplus { beta: 2.0 }).unwrap();
        assert_eq!(s, r#"{"kind":"softplus","beta":2.0}"#);
        let a: Activation = serde_json::from_str(r#"{"kind":"tanh"}"#).unwrap();
        assert_eq!(a, Activation::Tanh);
    }
}
