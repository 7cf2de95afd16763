//! Subsample drawing and per-subsample Newton fits.
//!
//! A plan draws `m` subsamples of size `k` from `n` rows. Each subsample is
//! sampled without replacement; different subsamples are independent and may
//! overlap. Only a [`SubsampleSummary`] survives each fit.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::RowSource;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::newton::{self, NewtonOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubbaggingPlan {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub master_seed: u64,
}

/// `floor(v)` that does not lose an exact integer to a last-bit rounding error.
fn floor_tolerant(v: f64) -> usize {
    (v * (1.0 + 1e-12)).floor() as usize
}

impl SubbaggingPlan {
    /// `k = floor(n^(1/2 + delta))`, `m = floor(alpha * n / k)`.
    pub fn from_rates(n: usize, delta: f64, alpha: f64, master_seed: u64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::config(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let k = Self::subsample_size(n, delta)?;
        let m = Self::subsample_count(n, k, alpha)?;
        Ok(Self {
            n,
            k,
            m,
            delta: Some(delta),
            alpha: Some(alpha),
            master_seed,
        })
    }

    /// `floor(n^(1/2 + delta))`, capped at `n`.
    pub fn subsample_size(n: usize, delta: f64) -> Result<usize> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::config(format!(
                "delta must lie in (0, 1/2), got {delta}"
            )));
        }
        let k = floor_tolerant((n as f64).powf(0.5 + delta)).min(n);
        if k == 0 {
            return Err(Error::config("derived subsample size is zero"));
        }
        Ok(k)
    }

    /// `floor(alpha * n / k)`, which must be at least 1.
    pub fn subsample_count(n: usize, k: usize, alpha: f64) -> Result<usize> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::config(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if k == 0 {
            return Err(Error::config("subsample size must be positive"));
        }
        let m = floor_tolerant(alpha * n as f64 / k as f64);
        if m == 0 {
            return Err(Error::config(format!(
                "alpha = {alpha} gives zero subsamples for n = {n}, k = {k}"
            )));
        }
        Ok(m)
    }

    pub fn explicit(n: usize, k: usize, m: usize, master_seed: u64) -> Result<Self> {
        let plan = Self {
            n,
            k,
            m,
            delta: None,
            alpha: None,
            master_seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::config(format!(
                "subsample size k = {} must lie in [1, n = {}]",
                self.k, self.n
            )));
        }
        if self.m == 0 {
            return Err(Error::config("number of subsamples must be at least 1"));
        }
        if self.m > u32::MAX as usize {
            return Err(Error::config("too many subsamples"));
        }
        Ok(())
    }

    /// `k * m / n`, the realized subsampling volume.
    pub fn realized_alpha(&self) -> f64 {
        (self.k * self.m) as f64 / self.n as f64
    }

    pub fn subsample_seed(&self, id: u32) -> u64 {
        derive_seed(self.master_seed, u64::from(id))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for stream `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

/// Draws `k` distinct indices from `0..n`, uniform over all `k`-subsets.
///
/// Partial Fisher-Yates shuffle with the displaced entries kept in a hash
/// map, so memory is `O(k)` however large `n` is. Indices come back in draw
/// order.
pub fn draw_subsample(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::config(format!("cannot draw {k} rows from {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut displaced: HashMap<usize, usize> = HashMap::with_capacity(2 * k);
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = rng.random_range(i..n);
        let at_j = displaced.get(&j).copied().unwrap_or(j);
        let at_i = displaced.get(&i).copied().unwrap_or(i);
        displaced.insert(j, at_i);
        out.push(at_j);
    }
    Ok(out)
}

/// Everything retained from one subsample fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleSummary {
    pub k: usize,
    pub beta_tilde: DVector<f64>,
    /// Average Hessian of the subsample loss at `beta_tilde`.
    pub hessian: DMatrix<f64>,
    /// Average subsample loss at `beta_tilde`.
    pub loss_at_opt: f64,
    pub subsample_id: u32,
    pub seed: u64,
}

impl SubsampleSummary {
    pub fn p(&self) -> usize {
        self.beta_tilde.len()
    }
}

/// Fits the subsample loss on the given rows.
///
/// Rows are read in ascending index order, so the result does not depend on
/// the order `indices` was drawn in. The returned summary has id and seed 0;
/// [`run_plan`] fills them in.
pub fn fit_subsample(
    data: &dyn RowSource,
    indices: &[usize],
    family: Family,
    init: &[f64],
    opts: &NewtonOptions,
) -> Result<SubsampleSummary> {
    if indices.is_empty() {
        return Err(Error::config("empty subsample"));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if let Some(&last) = sorted.last() {
        if last >= data.n_rows() {
            return Err(Error::data(format!(
                "row index {last} out of range for {} rows",
                data.n_rows()
            )));
        }
    }
    let rows = data.gather(&sorted)?;
    rows.check_family(family)?;
    let fit = newton::minimize(&rows, family, init, opts)?;
    Ok(SubsampleSummary {
        k: indices.len(),
        beta_tilde: fit.beta,
        hessian: fit.hessian,
        loss_at_opt: fit.loss,
        subsample_id: 0,
        seed: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    #[default]
    FailFast,
    SkipAndReport,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub newton: NewtonOptions,
    pub policy: FailurePolicy,
    /// Starting point for every fit; zero vector when `None`.
    pub init: Option<Vec<f64>>,
}

#[derive(Debug)]
pub struct PlanOutcome {
    /// Successful fits ordered by subsample id.
    pub summaries: Vec<SubsampleSummary>,
    /// Failures (only under [`FailurePolicy::SkipAndReport`]).
    pub failures: Vec<(u32, Error)>,
}

fn fit_one(
    data: &dyn RowSource,
    plan: &SubbaggingPlan,
    family: Family,
    init: &[f64],
    opts: &NewtonOptions,
    id: u32,
) -> Result<SubsampleSummary> {
    let seed = plan.subsample_seed(id);
    let indices = draw_subsample(plan.n, plan.k, seed)?;
    let mut s = fit_subsample(data, &indices, family, init, opts)?;
    s.subsample_id = id;
    s.seed = seed;
    Ok(s)
}

/// Fits all `plan.m` subsamples in parallel.
pub fn run_plan(
    data: &dyn RowSource,
    plan: &SubbaggingPlan,
    family: Family,
    opts: &RunOptions,
) -> Result<PlanOutcome> {
    run_plan_range(data, plan, family, opts, 0..plan.m as u32)
}

/// Fits the subsamples whose ids fall in `ids`. Seeds depend only on the
/// master seed and the id, so disjoint ranges fitted separately reproduce a
/// single run exactly.
pub fn run_plan_range(
    data: &dyn RowSource,
    plan: &SubbaggingPlan,
    family: Family,
    opts: &RunOptions,
    ids: Range<u32>,
) -> Result<PlanOutcome> {
    plan.validate()?;
    if plan.n != data.n_rows() {
        return Err(Error::config(format!(
            "plan is for {} rows but the data has {}",
            plan.n,
            data.n_rows()
        )));
    }
    let p = data.n_covariates();
    let init = opts.init.clone().unwrap_or_else(|| vec![0.0; p]);
    let results: Vec<(u32, Result<SubsampleSummary>)> = ids
        .into_par_iter()
        .map(|id| (id, fit_one(data, plan, family, &init, &opts.newton, id)))
        .collect();

    let mut summaries = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => match opts.policy {
                FailurePolicy::FailFast => {
                    return Err(Error::Subsample {
                        id,
                        source: Box::new(e),
                    })
                }
                FailurePolicy::SkipAndReport => failures.push((id, e)),
            },
        }
    }
    Ok(PlanOutcome {
        summaries,
        failures,
    })
}
