//! Per-observation loss, gradient and Hessian.
//!
//! Both families are single-index models: the loss depends on `beta` only
//! through the linear predictor `eta = x'beta`, so everything reduces to the
//! loss and its first two derivatives in `eta`. The linear loss is the plain
//! squared error `(y - eta)^2` with no one-half factor, so its Hessian is
//! `2 x x'`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Logistic,
}

/// One row `z = (y, x)`.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub y: f64,
    pub x: &'a [f64],
}

impl<'a> Observation<'a> {
    pub fn new(y: f64, x: &'a [f64]) -> Self {
        Self { y, x }
    }
}

/// Loss and its derivatives with respect to the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PointTerms {
    pub loss: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Standard logistic function without overflow for large `|t|`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Family {
    pub fn tag(self) -> u8 {
        match self {
            Family::Linear => 0,
            Family::Logistic => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Family::Linear),
            1 => Some(Family::Logistic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Logistic => "logistic",
        }
    }

    /// Checks that `y` is admissible for this family.
    pub fn check_response(self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::NonFinite("response"));
        }
        if self == Family::Logistic && y != 0.0 && y != 1.0 {
            return Err(Error::data(format!(
                "logistic response must be 0 or 1, got {y}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn terms(self, y: f64, eta: f64) -> PointTerms {
        match self {
            Family::Linear => {
                let r = y - eta;
                PointTerms {
                    loss: r * r,
                    d1: -2.0 * r,
                    d2: 2.0,
                }
            }
            Family::Logistic => {
                // log(1 + e^eta) - y*eta, written so neither exp overflows.
                let loss = (-eta.abs()).exp().ln_1p() + eta.max(0.0) - y * eta;
                let mu = sigmoid(eta);
                PointTerms {
                    loss,
                    d1: mu - y,
                    d2: mu * (1.0 - mu),
                }
            }
        }
    }

    /// Loss of one observation at `beta`.
    pub fn loss(self, beta: &[f64], z: &Observation<'_>) -> Result<f64> {
        let eta = checked_eta(self, beta, z)?;
        Ok(self.terms(z.y, eta).loss)
    }

    /// Gradient of [`Family::loss`] with respect to `beta`.
    pub fn gradient(self, beta: &[f64], z: &Observation<'_>) -> Result<DVector<f64>> {
        let eta = checked_eta(self, beta, z)?;
        let d1 = self.terms(z.y, eta).d1;
        Ok(DVector::from_iterator(
            z.x.len(),
            z.x.iter().map(|xj| d1 * xj),
        ))
    }

    /// Hessian of [`Family::loss`]; symmetric by construction.
    pub fn hessian(self, beta: &[f64], z: &Observation<'_>) -> Result<DMatrix<f64>> {
        let eta = checked_eta(self, beta, z)?;
        let d2 = self.terms(z.y, eta).d2;
        let p = z.x.len();
        let mut h = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = d2 * z.x[i] * z.x[j];
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn checked_eta(family: Family, beta: &[f64], z: &Observation<'_>) -> Result<f64> {
    if beta.len() != z.x.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            got: z.x.len(),
        });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("beta"));
    }
    if z.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates"));
    }
    family.check_response(z.y)?;
    Ok(dot(beta, z.x))
}
