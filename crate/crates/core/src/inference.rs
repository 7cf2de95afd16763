//! Standard errors and Wald intervals from the spread of subsample estimators.
//!
//! With `m` subsamples of size `k`, `k * Var(beta_tilde_s)` estimates the
//! asymptotic covariance of a size-one estimator, and the subbagging
//! estimator's variance is that over `n`, inflated by `1 + n / (k m)` for the
//! overlap between subsamples.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::subsample::SubsampleSummary;

/// Two-sided standard normal critical value used by the replication
/// metrics, which report coverage of `beta +/- 1.96 SE`.
pub const Z_95: f64 = 1.96;

/// Quantile function of the standard normal distribution.
pub fn normal_quantile(prob: f64) -> f64 {
    Normal::standard().inverse_cdf(prob)
}

/// `(k/m) * sum_s (bt_s - bt_bar)(bt_s - bt_bar)'` over the coordinates in
/// `active_set`.
pub fn variance_estimator(
    summaries: &[SubsampleSummary],
    active_set: &[usize],
) -> Result<DMatrix<f64>> {
    let m = summaries.len();
    if m < 2 {
        return Err(Error::config(format!(
            "variance estimation needs at least 2 subsamples, got {m}"
        )));
    }
    let k = summaries[0].k;
    let p = summaries[0].p();
    if summaries.iter().any(|s| s.k != k || s.p() != p) {
        return Err(Error::config(
            "summaries differ in subsample size or dimension",
        ));
    }
    if let Some(&j) = active_set.iter().find(|&&j| j >= p) {
        return Err(Error::config(format!(
            "active index {j} out of range for p = {p}"
        )));
    }
    // a fixed summation order makes the estimate independent of input order
    let mut ordered: Vec<&SubsampleSummary> = summaries.iter().collect();
    ordered.sort_by_key(|s| s.subsample_id);

    let q = active_set.len();
    let restrict = |s: &SubsampleSummary| {
        DVector::from_iterator(q, active_set.iter().map(|&j| s.beta_tilde[j]))
    };
    let mut mean = DVector::zeros(q);
    for s in &ordered {
        mean += restrict(s);
    }
    mean /= m as f64;
    let mut psi = DMatrix::zeros(q, q);
    for s in &ordered {
        let d = restrict(s) - &mean;
        psi += &d * d.transpose();
    }
    psi *= k as f64 / m as f64;
    Ok(psi)
}

/// `1 + n / (k m)`.
pub fn inflation_factor(n: usize, k: usize, m: usize) -> f64 {
    1.0 + n as f64 / (k as f64 * m as f64)
}

/// `sqrt(n^-1 (1 + n/(k m)) psi_jj)` for each diagonal entry.
pub fn standard_errors(
    psi_hat: &DMatrix<f64>,
    n: usize,
    k: usize,
    m: usize,
) -> Result<DVector<f64>> {
    if n == 0 || k == 0 || m == 0 {
        return Err(Error::config("sample sizes must be positive"));
    }
    let scale = inflation_factor(n, k, m) / n as f64;
    let diag = psi_hat.diagonal();
    if let Some(v) = diag.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Singular(format!(
            "variance estimate has a negative or NaN diagonal entry ({v})"
        )));
    }
    Ok(diag.map(|v| (scale * v).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaldIntervals {
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub p_value: Vec<f64>,
    /// Entries whose standard error is zero.
    pub degenerate: Vec<bool>,
}

/// `beta +/- z SE` with `z` the `(1 + level)/2` normal quantile and
/// two-sided p-values `2 (1 - Phi(|beta / SE|))`.
pub fn wald_intervals(beta: &DVector<f64>, se: &DVector<f64>, level: f64) -> Result<WaldIntervals> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if beta.len() != se.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            got: se.len(),
        });
    }
    let z = normal_quantile(0.5 * (1.0 + level));
    let mut out = WaldIntervals {
        ci_low: Vec::with_capacity(beta.len()),
        ci_high: Vec::with_capacity(beta.len()),
        p_value: Vec::with_capacity(beta.len()),
        degenerate: Vec::with_capacity(beta.len()),
    };
    for (&b, &s) in beta.iter().zip(se.iter()) {
        out.ci_low.push(b - z * s);
        out.ci_high.push(b + z * s);
        if s == 0.0 {
            out.p_value.push(if b == 0.0 { 1.0 } else { 0.0 });
            out.degenerate.push(true);
        } else {
            out.p_value
                .push(erfc((b / s).abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0));
            out.degenerate.push(false);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport {
    pub active_set: Vec<usize>,
    pub estimate: Vec<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub psi_hat: DMatrix<f64>,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub p_value: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub inflation: f64,
    pub level: f64,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

/// Full inference for the coefficients in `active_set`, centred at the
/// corresponding entries of `beta_hat`.
pub fn infer(
    summaries: &[SubsampleSummary],
    beta_hat: &DVector<f64>,
    active_set: &[usize],
    n: usize,
    level: f64,
) -> Result<InferenceReport> {
    let psi_hat = variance_estimator(summaries, active_set)?;
    let k = summaries[0].k;
    let m = summaries.len();
    let se = standard_errors(&psi_hat, n, k, m)?;
    let estimate =
        DVector::from_iterator(active_set.len(), active_set.iter().map(|&j| beta_hat[j]));
    let w = wald_intervals(&estimate, &se, level)?;
    Ok(InferenceReport {
        active_set: active_set.to_vec(),
        estimate: estimate.iter().copied().collect(),
        psi_hat,
        se: se.iter().copied().collect(),
        ci_low: w.ci_low,
        ci_high: w.ci_high,
        p_value: w.p_value,
        degenerate: w.degenerate,
        inflation: inflation_factor(n, k, m),
        level,
    })
}
