//! Full-sample comparison estimator.
//!
//! The full-sample adaptive LASSO reuses the subbagging machinery: one Newton
//! fit on all rows becomes a single summary with `k = n`, and its path is
//! scored with `n * L + log(n) * df`. Standard errors come from the sandwich
//! `V^-1 Sigma V^-1` evaluated at the penalized estimate.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::aggregate::{adaptive_weights, exempt_from_penalty, AggregatedQuadratic};
use crate::data::RowSource;
use crate::error::{Error, Result};
use crate::family::{dot, Family};
use crate::lasso::{default_lambda_grid, fit_path, LambdaPath, SolverOptions};
use crate::newton::{self, NewtonOptions};
use crate::subsample::SubsampleSummary;

#[derive(Debug, Clone, PartialEq)]
pub struct FullFit {
    pub beta_tilde: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub loss: f64,
    pub n: usize,
    pub iterations: usize,
}

impl FullFit {
    /// The full-sample fit viewed as a single summary of size `n`.
    pub fn as_summary(&self) -> SubsampleSummary {
        SubsampleSummary {
            k: self.n,
            beta_tilde: self.beta_tilde.clone(),
            hessian: self.hessian.clone(),
            loss_at_opt: self.loss,
            subsample_id: 0,
            seed: 0,
        }
    }
}

/// Newton fit over every row, streaming the data once per evaluation.
pub fn fit_full(data: &dyn RowSource, family: Family, opts: &NewtonOptions) -> Result<FullFit> {
    let p = data.n_covariates();
    data.for_each_block(&mut |block| block.check_family(family))?;
    let fit = newton::minimize(data, family, &vec![0.0; p], opts)?;
    Ok(FullFit {
        beta_tilde: fit.beta,
        hessian: fit.hessian,
        loss: fit.loss,
        n: data.n_rows(),
        iterations: fit.iterations,
    })
}

#[derive(Debug, Clone)]
pub struct PathOptions {
    pub gamma: f64,
    pub n_grid: usize,
    pub solver: SolverOptions,
    /// Coefficients left out of the penalty (e.g. an intercept).
    pub unpenalized: Vec<usize>,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            n_grid: 100,
            solver: SolverOptions::default(),
            unpenalized: Vec::new(),
        }
    }
}

/// Adaptive weights and lambda path for an aggregate. `scale` multiplies the
/// loss in the criterion: `k` for subbagging, `n` for the full sample.
pub fn regularization_path(
    agg: &AggregatedQuadratic,
    scale: usize,
    n: usize,
    opts: &PathOptions,
) -> Result<(DVector<f64>, LambdaPath)> {
    let mut weights = adaptive_weights(&agg.beta_bar, opts.gamma)?;
    exempt_from_penalty(&mut weights, &opts.unpenalized)?;
    let grid = default_lambda_grid(agg, &weights, opts.n_grid)?;
    let path = fit_path(agg, &weights, &grid, scale, n, &opts.solver)?;
    Ok((weights, path))
}

#[derive(Debug, Clone)]
pub struct FullSamplePath {
    pub fit: FullFit,
    pub aggregate: AggregatedQuadratic,
    pub weights: DVector<f64>,
    pub path: LambdaPath,
}

/// Full-sample adaptive LASSO via the quadratic approximation at the
/// full-sample minimizer, tuned by `n * L + log(n) * df`.
pub fn adaptive_lasso_full(
    data: &dyn RowSource,
    family: Family,
    newton_opts: &NewtonOptions,
    opts: &PathOptions,
) -> Result<FullSamplePath> {
    let fit = fit_full(data, family, newton_opts)?;
    let aggregate = AggregatedQuadratic::merge(&[fit.as_summary()])?;
    let (weights, path) = regularization_path(&aggregate, fit.n, fit.n, opts)?;
    Ok(FullSamplePath {
        fit,
        aggregate,
        weights,
        path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichVariance {
    #[serde(skip)]
    pub sigma_hat: DMatrix<f64>,
    #[serde(skip)]
    pub v_hat: DMatrix<f64>,
    #[serde(skip)]
    pub psi_n: DMatrix<f64>,
    pub restrict: Vec<usize>,
    /// `sqrt(psi_n_jj / n)` for each restricted coordinate.
    pub se: Vec<f64>,
}

/// Sandwich variance at `beta_hat` in a single pass over the data.
///
/// `Sigma = n^-1 sum (g_i - g_bar)(g_i - g_bar)'` with `g_i` the per-row
/// gradient, `V = n^-1 sum H_i`, and `psi_n` the `restrict` block of
/// `V^-1 Sigma V^-1`.
pub fn sandwich_variance(
    data: &dyn RowSource,
    family: Family,
    beta_hat: &DVector<f64>,
    restrict: &[usize],
) -> Result<SandwichVariance> {
    let p = data.n_covariates();
    if beta_hat.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: beta_hat.len(),
        });
    }
    if beta_hat.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("beta_hat"));
    }
    if let Some(&j) = restrict.iter().find(|&&j| j >= p) {
        return Err(Error::config(format!(
            "restricted index {j} out of range for p = {p}"
        )));
    }
    let beta = beta_hat.as_slice();
    let mut n = 0usize;
    let mut g_sum = vec![0.0; p];
    let mut gg_sum = vec![0.0; p * p];
    let mut h_sum = vec![0.0; p * p];
    let mut g = vec![0.0; p];
    data.for_each_block(&mut |block| {
        for z in block.observations() {
            let t = family.terms(z.y, dot(beta, z.x));
            for (gj, &xj) in g.iter_mut().zip(z.x) {
                *gj = t.d1 * xj;
            }
            for i in 0..p {
                g_sum[i] += g[i];
                let wi = t.d2 * z.x[i];
                for j in i..p {
                    gg_sum[i * p + j] += g[i] * g[j];
                    h_sum[i * p + j] += wi * z.x[j];
                }
            }
        }
        n += block.len();
        Ok(())
    })?;
    if n == 0 {
        return Err(Error::data("no rows"));
    }
    let inv = 1.0 / n as f64;
    let mut sigma_hat = DMatrix::zeros(p, p);
    let mut v_hat = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let s = gg_sum[i * p + j] * inv - (g_sum[i] * inv) * (g_sum[j] * inv);
            let v = h_sum[i * p + j] * inv;
            sigma_hat[(i, j)] = s;
            sigma_hat[(j, i)] = s;
            v_hat[(i, j)] = v;
            v_hat[(j, i)] = v;
        }
    }
    let chol = newton::factor(&v_hat).map_err(|e| Error::Singular(format!("V_hat: {e}")))?;
    let v_inv = chol.inverse();
    let full = &v_inv * &sigma_hat * &v_inv;
    let psi_n = full.select_rows(restrict).select_columns(restrict);
    let se = psi_n
        .diagonal()
        .iter()
        .map(|d| (d.max(0.0) * inv).sqrt())
        .collect();
    Ok(SandwichVariance {
        sigma_hat,
        v_hat,
        psi_n,
        restrict: restrict.to_vec(),
        se,
    })
}
