//! Per-neuron activation functions and numeric differentiability probes.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Threshold below which a numerically estimated derivative counts as zero.
pub const DERIV_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActivationKind {
    Identity,
    Relu,
    Softplus,
    Sigmoid,
    ShiftedTanh,
    Exponential,
    /// Coefficients in ascending degree; leading coefficient nonzero.
    Polynomial { coeffs: Vec<f64> },
}

impl ActivationKind {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => x,
            ActivationKind::Relu => x.max(0.0),
            // Stable softplus: max(x,0) + ln(1 + e^{-|x|}).
            ActivationKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::ShiftedTanh => x.tanh() + 1.0,
            ActivationKind::Exponential => x.exp(),
            ActivationKind::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * x + c;
                }
                acc
            }
        }
    }

    pub fn is_smooth_named(&self) -> bool {
        matches!(
            self,
            ActivationKind::Softplus
                | ActivationKind::Sigmoid
                | ActivationKind::ShiftedTanh
                | ActivationKind::Exponential
        )
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self, ActivationKind::Polynomial { .. })
    }

    /// A polynomial of degree >= 2 (or any non-polynomial nonlinearity) is non-affine.
    pub fn is_affine(&self) -> bool {
        match self {
            ActivationKind::Identity => true,
            ActivationKind::Polynomial { coeffs } => coeffs.len() <= 2,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    #[serde(flatten)]
    pub kind: ActivationKind,
    /// Anchor point of differentiability used by identity/square gadgets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<f64>,
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind) -> Self {
        ActivationSpec { kind, anchor: None }
    }

    pub fn with_anchor(kind: ActivationKind, anchor: f64) -> Self {
        ActivationSpec {
            kind,
            anchor: Some(anchor),
        }
    }

    pub fn identity() -> Self {
        Self::new(ActivationKind::Identity)
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu)
    }

    pub fn softplus() -> Self {
        Self::with_anchor(ActivationKind::Softplus, 0.0)
    }

    /// sigma(t) = t^2, the canonical non-affine polynomial.
    pub fn square() -> Self {
        Self::with_anchor(
            ActivationKind::Polynomial {
                coeffs: vec![0.0, 0.0, 1.0],
            },
            0.0,
        )
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.kind.eval(x)
    }

    pub fn validate(&self) -> Result<()> {
        if let ActivationKind::Polynomial { coeffs } = &self.kind {
            if coeffs.is_empty() {
                return Err(Error::InvalidActivation(
                    "polynomial coefficient list is empty".into(),
                ));
            }
            if *coeffs.last().unwrap() == 0.0 {
                return Err(Error::InvalidActivation(
                    "polynomial leading coefficient is zero".into(),
                ));
            }
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidActivation(
                    "polynomial has nonfinite coefficient".into(),
                ));
            }
        }
        if let Some(a) = self.anchor {
            if !a.is_finite() {
                return Err(Error::InvalidActivation("anchor is nonfinite".into()));
            }
        }
        Ok(())
    }

    pub fn anchor_or_err(&self) -> Result<f64> {
        self.anchor
            .ok_or_else(|| Error::AnchorCondition("activation has no anchor point".into()))
    }

    /// First derivative at `x`, central difference with one Richardson refinement.
    pub fn d1(&self, x: f64) -> f64 {
        match &self.kind {
            ActivationKind::Identity => 1.0,
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (i, &c) in coeffs.iter().enumerate().skip(1).rev() {
                    acc = acc * x + c * i as f64;
                }
                acc
            }
            _ => {
                let h = 1e-5;
                let d = |h: f64| (self.eval(x + h) - self.eval(x - h)) / (2.0 * h);
                (4.0 * d(h / 2.0) - d(h)) / 3.0
            }
        }
    }

    /// Second derivative at `x`, central second difference with Richardson refinement.
    pub fn d2(&self, x: f64) -> f64 {
        match &self.kind {
            ActivationKind::Identity => 0.0,
            ActivationKind::Relu => 0.0,
            ActivationKind::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (i, &c) in coeffs.iter().enumerate().skip(2).rev() {
                    acc = acc * x + c * (i * (i - 1)) as f64;
                }
                acc
            }
            _ => {
                let h = 1e-4;
                let d = |h: f64| {
                    (self.eval(x + h) - 2.0 * self.eval(x) + self.eval(x - h)) / (h * h)
                };
                (4.0 * d(h / 2.0) - d(h)) / 3.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_values() {
        let s = ActivationSpec::softplus();
        assert!((s.eval(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((s.eval(100.0) - 100.0).abs() < 1e-12);
        assert!(s.eval(-100.0) > 0.0);
        assert!((s.d1(0.0) - 0.5).abs() < 1e-9);
        assert!((s.d2(0.0) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn polynomial_horner_and_derivatives() {
        // 1 + 2t + 3t^2
        let p = ActivationSpec::new(ActivationKind::Polynomial {
            coeffs: vec![1.0, 2.0, 3.0],
        });
        assert_eq!(p.eval(2.0), 17.0);
        assert_eq!(p.d1(2.0), 14.0);
        assert_eq!(p.d2(2.0), 6.0);
    }

    #[test]
    fn polynomial_invariants() {
        let bad = ActivationSpec::new(ActivationKind::Polynomial { coeffs: vec![] });
        assert!(bad.validate().is_err());
        let bad = ActivationSpec::new(ActivationKind::Polynomial {
            coeffs: vec![1.0, 0.0],
        });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn relu_derivative_flags() {
        let r = ActivationSpec::relu();
        assert_eq!(r.d1(1.0), 1.0);
        assert_eq!(r.d1(-1.0), 0.0);
    }

    #[test]
    fn square_is_non_affine() {
        let s = ActivationSpec::square();
        assert!(!s.kind.is_affine());
        assert!((s.d1(0.0)).abs() < DERIV_ZERO_TOL);
        assert!((s.d2(0.0) - 2.0).abs() < 1e-9);
    }
}
