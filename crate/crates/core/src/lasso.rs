//! Adaptive-LASSO minimization of the subbagging loss and SBIC tuning.
//!
//! The objective is `f(b) = b' H b - 2 v' b + c + lambda * sum_j w_j |b_j|`.
//! Because the smooth part is an exact quadratic, each coordinate update is
//! closed-form:
//!
//! ```text
//! b_j <- S(v_j - sum_{l != j} H_jl b_l, lambda * w_j / 2) / H_jj
//! ```
//!
//! with `S` the soft-threshold operator. Every returned fit carries a KKT
//! certificate checked after the last sweep.

use nalgebra::DVector;
use serde::Serialize;

use crate::aggregate::AggregatedQuadratic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

/// One point on the regularization path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizedFit {
    pub lambda: f64,
    #[serde(serialize_with = "serialize_vector")]
    pub beta_hat: DVector<f64>,
    /// Indices of the nonzero coefficients, ascending.
    pub active_set: Vec<usize>,
    pub df: usize,
    /// Information criterion; set once the fit is scored on a path.
    pub sbic: Option<f64>,
    /// Penalized objective at `beta_hat`.
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    pub n_sweeps: usize,
    /// Coordinates with finite weight but no curvature, held at zero.
    pub frozen: Vec<usize>,
}

fn serialize_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaPath {
    /// Descending; may end with a single `0.0`.
    pub grid: Vec<f64>,
    pub fits: Vec<RegularizedFit>,
    /// Index of the selected fit.
    pub selected: usize,
}

impl LambdaPath {
    pub fn selected_fit(&self) -> &RegularizedFit {
        &self.fits[self.selected]
    }
}

/// `sign(z) * max(|z| - t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn validate_inputs(
    agg: &AggregatedQuadratic,
    lambda: f64,
    weights: &DVector<f64>,
    start: &DVector<f64>,
) -> Result<()> {
    let p = agg.p();
    for len in [weights.len(), start.len()] {
        if len != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: len,
            });
        }
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if agg.h_bar.iter().chain(agg.b.iter()).any(|v| !v.is_finite()) || !agg.c.is_finite() {
        return Err(Error::NonFinite("aggregated quadratic"));
    }
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
        return Err(Error::config("weights must be nonnegative"));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("warm start"));
    }
    Ok(())
}

/// Penalized objective; coordinates with infinite weight must be zero.
pub fn penalized_objective(
    agg: &AggregatedQuadratic,
    lambda: f64,
    weights: &DVector<f64>,
    beta: &DVector<f64>,
) -> f64 {
    let penalty: f64 = beta
        .iter()
        .zip(weights.iter())
        .filter(|(b, _)| **b != 0.0)
        .map(|(b, w)| w * b.abs())
        .sum();
    agg.loss_unchecked(beta) + lambda * penalty
}

/// Largest violation of the optimality conditions at `beta`.
pub fn kkt_residual(
    agg: &AggregatedQuadratic,
    lambda: f64,
    weights: &DVector<f64>,
    beta: &DVector<f64>,
    skip: &[usize],
) -> f64 {
    let grad = (&agg.h_bar * beta - &agg.b) * 2.0;
    let mut worst = 0.0_f64;
    for j in 0..beta.len() {
        if weights[j].is_infinite() || skip.contains(&j) {
            continue;
        }
        let pen = lambda * weights[j];
        let r = if beta[j] != 0.0 {
            (grad[j] + pen * beta[j].signum()).abs()
        } else {
            (grad[j].abs() - pen).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// Cyclic coordinate descent. When `trace` is given, the objective after
/// every sweep is pushed onto it.
pub(crate) fn coordinate_descent(
    agg: &AggregatedQuadratic,
    lambda: f64,
    weights: &DVector<f64>,
    start: &DVector<f64>,
    opts: &SolverOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<RegularizedFit> {
    validate_inputs(agg, lambda, weights, start)?;
    let p = agg.p();
    let h = &agg.h_bar;

    let mut frozen = Vec::new();
    let mut fixed = vec![false; p];
    for j in 0..p {
        if weights[j].is_infinite() {
            fixed[j] = true;
        } else if !(h[(j, j)] > 0.0) {
            fixed[j] = true;
            frozen.push(j);
        }
    }
    let mut beta = start.clone();
    for j in 0..p {
        if fixed[j] {
            beta[j] = 0.0;
        }
    }
    // q = H beta, kept current across coordinate updates
    let mut q = h * &beta;
    let mut sweeps = 0;
    let mut kkt = f64::INFINITY;
    let mut converged = false;

    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for j in 0..p {
            if fixed[j] {
                continue;
            }
            let hjj = h[(j, j)];
            let old = beta[j];
            let z = agg.b[j] - q[j] + hjj * old;
            let new = soft_threshold(z, 0.5 * lambda * weights[j]) / hjj;
            if new != old {
                let delta = new - old;
                for (qi, hij) in q.iter_mut().zip(h.column(j).iter()) {
                    *qi += hij * delta;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(penalized_objective(agg, lambda, weights, &beta));
        }
        let scale = beta.amax().max(1.0);
        if max_change <= opts.kkt_tol * scale {
            kkt = kkt_residual(agg, lambda, weights, &beta, &frozen);
            if kkt <= opts.kkt_tol {
                converged = true;
                break;
            }
            if max_change == 0.0 {
                // fixed point that still fails the certificate: more sweeps cannot help
                break;
            }
            // drift in q; refresh from scratch
            q = h * &beta;
        }
    }
    if !converged {
        if kkt.is_infinite() {
            kkt = kkt_residual(agg, lambda, weights, &beta, &frozen);
        }
        return Err(Error::SolverNotConverged {
            sweeps,
            kkt_residual: kkt,
        });
    }
    let active_set: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
    Ok(RegularizedFit {
        lambda,
        objective: penalized_objective(agg, lambda, weights, &beta),
        df: active_set.len(),
        active_set,
        beta_hat: beta,
        sbic: None,
        kkt_residual: kkt,
        converged,
        n_sweeps: sweeps,
        frozen,
    })
}

/// Minimizes the penalized subbagging loss at one `lambda`.
pub fn solve_penalized(
    agg: &AggregatedQuadratic,
    lambda: f64,
    weights: &DVector<f64>,
    warm_start: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<RegularizedFit> {
    coordinate_descent(agg, lambda, weights, warm_start, opts, None)
}

/// Descending log-spaced grid from `lambda_max` down to `1e-6 * lambda_max`.
///
/// `lambda_max` is the smallest penalty at which every penalized coefficient
/// is zero. Coefficients with weight zero are unpenalized and sit at their
/// restricted minimizer there; with no such coefficients this is
/// `2 * max_j |b_j| / w_j`.
pub fn default_lambda_grid(
    agg: &AggregatedQuadratic,
    weights: &DVector<f64>,
    n_grid: usize,
) -> Result<Vec<f64>> {
    if n_grid < 2 {
        return Err(Error::config("lambda grid needs at least two points"));
    }
    let p = agg.p();
    if weights.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: weights.len(),
        });
    }
    let free: Vec<usize> = (0..p).filter(|&j| weights[j] == 0.0).collect();
    let penalized: Vec<usize> = (0..p)
        .filter(|&j| weights[j] > 0.0 && weights[j].is_finite())
        .collect();
    if penalized.is_empty() {
        return Err(Error::config(
            "no coefficient has a finite positive weight; nothing to penalize",
        ));
    }
    let mut base = DVector::zeros(p);
    if !free.is_empty() {
        let h_ff = agg.h_bar.select_rows(&free).select_columns(&free);
        let b_f = DVector::from_iterator(free.len(), free.iter().map(|&j| agg.b[j]));
        let sol = h_ff
            .cholesky()
            .ok_or_else(|| Error::Singular("unpenalized block of H_bar".into()))?
            .solve(&b_f);
        for (i, &j) in free.iter().enumerate() {
            base[j] = sol[i];
        }
    }
    let grad = (&agg.h_bar * &base - &agg.b) * 2.0;
    let lambda_max = penalized
        .iter()
        .map(|&j| grad[j].abs() / weights[j])
        .fold(0.0_f64, f64::max);
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::config(format!(
            "degenerate lambda grid (lambda_max = {lambda_max})"
        )));
    }
    let lambda_min = lambda_max * 1e-6;
    let step = (lambda_min / lambda_max).ln() / (n_grid - 1) as f64;
    let mut grid: Vec<f64> = (0..n_grid)
        .map(|i| lambda_max * (step * i as f64).exp())
        .collect();
    grid[n_grid - 1] = lambda_min;
    Ok(grid)
}

/// `scale * L(beta) + log(n) * df`; `scale` is `k_N` for subbagging and `N`
/// for the full-sample analogue.
pub fn sbic(agg: &AggregatedQuadratic, fit: &DVector<f64>, scale: usize, n: usize) -> Result<f64> {
    if scale == 0 || n == 0 {
        return Err(Error::config("SBIC needs positive sample sizes"));
    }
    let df = fit.iter().filter(|v| **v != 0.0).count();
    Ok(scale as f64 * agg.loss(fit)? + (n as f64).ln() * df as f64)
}

/// Fit with the smallest criterion; ties go to the larger lambda.
pub fn select_lambda(path: &LambdaPath) -> Result<&RegularizedFit> {
    let idx = argmin_criterion(&path.fits)?;
    Ok(&path.fits[idx])
}

fn argmin_criterion(fits: &[RegularizedFit]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in fits.iter().enumerate() {
        let s = f
            .sbic
            .ok_or_else(|| Error::config("path contains an unscored fit"))?;
        let better = match best {
            None => true,
            Some((bi, bs)) => s < bs || (s == bs && f.lambda > fits[bi].lambda),
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::config("empty lambda path"))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config("empty lambda grid"));
    }
    for (i, &l) in grid.iter().enumerate() {
        let last = i + 1 == grid.len();
        if !(l > 0.0 || (last && l == 0.0)) || !l.is_finite() {
            return Err(Error::config(format!("invalid lambda {l} in grid")));
        }
        if i > 0 && !(l < grid[i - 1]) {
            return Err(Error::config("lambda grid must be strictly decreasing"));
        }
    }
    Ok(())
}

/// Solves along a descending grid with warm starts and scores each fit with
/// `scale * L(beta) + log(n) * df`.
pub fn fit_path(
    agg: &AggregatedQuadratic,
    weights: &DVector<f64>,
    grid: &[f64],
    scale: usize,
    n: usize,
    opts: &SolverOptions,
) -> Result<LambdaPath> {
    check_grid(grid)?;
    let mut fits = Vec::with_capacity(grid.len());
    let mut warm = DVector::zeros(agg.p());
    for &lambda in grid {
        let mut fit = solve_penalized(agg, lambda, weights, &warm, opts)?;
        fit.sbic = Some(sbic(agg, &fit.beta_hat, scale, n)?);
        warm = fit.beta_hat.clone();
        fits.push(fit);
    }
    let selected = argmin_criterion(&fits)?;
    Ok(LambdaPath {
        grid: grid.to_vec(),
        fits,
        selected,
    })
}
