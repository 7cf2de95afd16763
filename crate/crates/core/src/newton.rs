//! Damped Newton minimization of an average loss over a set of rows.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, RowSource};
use crate::error::{Error, Result};
use crate::family::{dot, Family};

/// Smallest admissible ratio of a Cholesky pivot to the largest Hessian
/// diagonal entry before the Hessian is declared singular.
const PIVOT_RATIO: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stop when the sup-norm of the average gradient is at most this.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonFit {
    pub beta: DVector<f64>,
    /// Average Hessian at `beta`.
    pub hessian: DMatrix<f64>,
    /// Average loss at `beta`.
    pub loss: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Running sums of loss, gradient and Hessian over rows visited in order.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    p: usize,
    n: usize,
    derivs: bool,
    loss: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
    max_residual: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loss: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub max_residual: f64,
}

impl Moments {
    pub fn new(p: usize, derivs: bool) -> Self {
        Self {
            p,
            n: 0,
            derivs,
            loss: 0.0,
            grad: vec![0.0; if derivs { p } else { 0 }],
            hess: vec![0.0; if derivs { p * p } else { 0 }],
            max_residual: 0.0,
        }
    }

    pub fn add_block(&mut self, family: Family, block: &Dataset, beta: &[f64]) {
        let p = self.p;
        for z in block.observations() {
            let t = family.terms(z.y, dot(beta, z.x));
            self.loss += t.loss;
            if self.derivs {
                for (g, &xj) in self.grad.iter_mut().zip(z.x) {
                    *g += t.d1 * xj;
                }
                for i in 0..p {
                    let wi = t.d2 * z.x[i];
                    let row = &mut self.hess[i * p..(i + 1) * p];
                    for (h, &xj) in row[i..].iter_mut().zip(&z.x[i..]) {
                        *h += wi * xj;
                    }
                }
                let resid = match family {
                    Family::Linear => 0.5 * t.d1.abs(),
                    Family::Logistic => t.d1.abs(),
                };
                self.max_residual = self.max_residual.max(resid);
            }
        }
        self.n += block.len();
    }

    pub fn finish(self) -> Evaluation {
        let p = self.p;
        let inv = 1.0 / self.n as f64;
        let (gradient, hessian) = if self.derivs {
            let gradient = DVector::from_iterator(p, self.grad.iter().map(|g| g * inv));
            let mut hessian = DMatrix::zeros(p, p);
            for i in 0..p {
                for j in i..p {
                    let v = self.hess[i * p + j] * inv;
                    hessian[(i, j)] = v;
                    hessian[(j, i)] = v;
                }
            }
            (gradient, hessian)
        } else {
            (DVector::zeros(0), DMatrix::zeros(0, 0))
        };
        Evaluation {
            loss: self.loss * inv,
            gradient,
            hessian,
            max_residual: self.max_residual,
        }
    }
}

pub(crate) fn evaluate(
    source: &dyn RowSource,
    family: Family,
    beta: &[f64],
    derivs: bool,
) -> Result<Evaluation> {
    let mut acc = Moments::new(source.n_covariates(), derivs);
    source.for_each_block(&mut |block| {
        acc.add_block(family, block, beta);
        Ok(())
    })?;
    if acc.n == 0 {
        return Err(Error::data("no rows to fit"));
    }
    Ok(acc.finish())
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Cholesky factor of a Hessian, or a non-identifiability error when the
/// matrix is singular or numerically so.
pub(crate) fn factor(hessian: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let max_diag = hessian.diagonal().iter().fold(0.0_f64, |m, &d| m.max(d));
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return Err(Error::NonIdentifiable(
            "Hessian has no positive curvature".into(),
        ));
    }
    let chol = hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonIdentifiable("Hessian is not positive definite".into()))?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, &d| m.min(d * d));
    if min_pivot < PIVOT_RATIO * max_diag {
        return Err(Error::NonIdentifiable(format!(
            "Hessian is numerically singular (pivot ratio {:e})",
            min_pivot / max_diag
        )));
    }
    Ok(chol)
}

/// Minimizes the average loss of `family` over all rows of `source`.
///
/// Each iteration takes the Newton direction and halves the step until the
/// average loss does not increase. Iteration stops once the gradient sup-norm
/// is at most `opts.tol`; the returned Hessian is evaluated at the final point.
pub fn minimize(
    source: &dyn RowSource,
    family: Family,
    init: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonFit> {
    let p = source.n_covariates();
    if init.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: init.len(),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::config("Newton tolerance must be positive"));
    }
    let mut beta = DVector::from_column_slice(init);
    let mut iter = 0;
    loop {
        let ev = evaluate(source, family, beta.as_slice(), true)?;
        if !ev.loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let gnorm = sup_norm(&ev.gradient);
        if gnorm <= opts.tol {
            factor(&ev.hessian)?;
            if family == Family::Logistic && ev.max_residual < 1e-6 {
                return Err(Error::NonIdentifiable(
                    "responses are completely separated".into(),
                ));
            }
            return Ok(NewtonFit {
                beta,
                hessian: ev.hessian,
                loss: ev.loss,
                gradient_norm: gnorm,
                iterations: iter,
            });
        }
        if iter == opts.max_iter {
            return Err(Error::NewtonNotConverged {
                iterations: iter,
                gradient_norm: gnorm,
            });
        }
        let direction = factor(&ev.hessian)?.solve(&ev.gradient);
        let slack = 1e-14 * ev.loss.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let candidate = &beta - &direction * step;
            let loss = evaluate(source, family, candidate.as_slice(), false)?.loss;
            if loss <= ev.loss + slack {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some(next) => beta = next,
            None => {
                return Err(Error::NewtonNotConverged {
                    iterations: iter,
                    gradient_norm: gnorm,
                })
            }
        }
        iter += 1;
    }
}
