//! Synthetic replication study.
//!
//! Covariates are i.i.d. standard normal; responses follow either the linear
//! model with N(0, 1) noise or a logistic model. Each replication runs the
//! subbagging pipeline (and optionally the full-sample baseline) and the
//! per-replication records are reduced into bias/SD/RMSE/ASE/CP and
//! selection rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::AggregatedQuadratic;
use crate::baseline::{adaptive_lasso_full, regularization_path, sandwich_variance, PathOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::family::{dot, sigmoid, Family};
use crate::inference::{infer, standard_errors, variance_estimator, Z_95};
use crate::newton::NewtonOptions;
use crate::subsample::{derive_seed, run_plan, RunOptions, SubbaggingPlan};

pub const DEFAULT_BETA0: [f64; 8] = [3.0, 1.5, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub family: Family,
    pub n: usize,
    pub beta0: Vec<f64>,
    pub delta: f64,
    pub alpha: f64,
    /// Replaces `floor(alpha n / k)` when set.
    pub m_override: Option<usize>,
    pub gamma: f64,
    pub n_grid: usize,
    pub n_reps: usize,
    pub master_seed: u64,
    pub with_baseline: bool,
    /// Skip failed replications instead of aborting.
    pub skip_failures: bool,
}

impl SimConfig {
    /// Desk-scale defaults: 200 replications at the given `n`.
    pub fn new(family: Family, n: usize, delta: f64, alpha: f64) -> Self {
        Self {
            family,
            n,
            beta0: DEFAULT_BETA0.to_vec(),
            delta,
            alpha,
            m_override: None,
            gamma: 1.0,
            n_grid: 100,
            n_reps: 200,
            master_seed: 20_240_601,
            with_baseline: true,
            skip_failures: false,
        }
    }

    /// 1000 replications at the given size.
    pub fn paper_scale(family: Family, n: usize, delta: f64, alpha: f64) -> Self {
        Self {
            n_reps: 1000,
            ..Self::new(family, n, delta, alpha)
        }
    }

    pub fn p(&self) -> usize {
        self.beta0.len()
    }

    /// Support of `beta0` (0-based).
    pub fn true_model(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.beta0[j] != 0.0).collect()
    }

    pub fn plan(&self, seed: u64) -> Result<SubbaggingPlan> {
        match self.m_override {
            None => SubbaggingPlan::from_rates(self.n, self.delta, self.alpha, seed),
            Some(m) => {
                let k = SubbaggingPlan::subsample_size(self.n, self.delta)?;
                let mut plan = SubbaggingPlan::explicit(self.n, k, m, seed)?;
                plan.delta = Some(self.delta);
                Ok(plan)
            }
        }
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(self.master_seed, rep as u64)
    }

    fn validate(&self) -> Result<()> {
        if self.beta0.is_empty() {
            return Err(Error::config("beta0 is empty"));
        }
        if self.n_reps == 0 {
            return Err(Error::config("need at least one replication"));
        }
        self.plan(0).map(|_| ())
    }
}

/// One synthetic dataset, a deterministic function of `rep_seed`.
pub fn generate_dataset(cfg: &SimConfig, rep_seed: u64) -> Dataset {
    let p = cfg.p();
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let mut x = Vec::with_capacity(cfg.n * p);
    let mut y = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let start = x.len();
        x.extend((0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let eta = dot(&x[start..], &cfg.beta0);
        let yi = match cfg.family {
            Family::Linear => eta + rng.sample::<f64, _>(StandardNormal),
            Family::Logistic => f64::from(u8::from(rng.random::<f64>() < sigmoid(eta))),
        };
        y.push(yi);
    }
    Dataset::new(y, x, p).expect("generated data is finite")
}

/// What one replication contributes to the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub beta_hat: Vec<f64>,
    /// Standard errors for the true-model coordinates, when available.
    pub se: Option<Vec<f64>>,
    pub selected: Vec<usize>,
    /// Coverage indicators for true-model coordinates under the selected
    /// model (`None` where the coordinate was not selected).
    pub covered_selected: Option<Vec<Option<bool>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub subbagging: EstimateRecord,
    pub baseline: Option<EstimateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationMetrics {
    /// Coordinates reported (0-based true-model indices).
    pub coords: Vec<usize>,
    pub bias: Vec<f64>,
    pub sd: Vec<f64>,
    pub rmse: Vec<f64>,
    pub ase: Option<Vec<f64>>,
    pub cp: Option<Vec<f64>>,
    pub reps: usize,
}

impl EstimationMetrics {
    /// Monte-Carlo standard error of each bias entry.
    pub fn bias_mc_se(&self) -> Vec<f64> {
        self.sd
            .iter()
            .map(|s| s / (self.reps as f64).sqrt())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionMetrics {
    pub cf: f64,
    pub tp: f64,
    pub fp: f64,
    pub ms: f64,
    pub sd_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub k: usize,
    pub m: usize,
    pub subbagging: EstimationMetrics,
    pub subbagging_selection: SelectionMetrics,
    pub baseline: Option<EstimationMetrics>,
    pub baseline_selection: Option<SelectionMetrics>,
    /// Coverage under the data-driven model, per true-model coordinate,
    /// over the replications that selected it.
    pub cp_selected_model: Option<Vec<f64>>,
    pub failed_reps: Vec<usize>,
}

fn coverage(beta: &[f64], se: &[f64], coords: &[usize], beta0: &[f64]) -> Vec<bool> {
    coords
        .iter()
        .zip(se)
        .map(|(&j, &s)| (beta[j] - beta0[j]).abs() <= Z_95 * s)
        .collect()
}

/// Runs the subbagging pipeline (and the baseline if configured) on one
/// replication.
pub fn run_replication(cfg: &SimConfig, rep: usize) -> Result<ReplicationRecord> {
    let rep_seed = cfg.rep_seed(rep);
    let data = generate_dataset(cfg, rep_seed);
    let truth = cfg.true_model();
    let plan = cfg.plan(derive_seed(rep_seed, u64::MAX))?;
    let summaries = run_plan(&data, &plan, cfg.family, &RunOptions::default())?.summaries;
    let agg = AggregatedQuadratic::merge(&summaries)?;
    let path_opts = PathOptions {
        gamma: cfg.gamma,
        n_grid: cfg.n_grid,
        ..Default::default()
    };
    let (_, path) = regularization_path(&agg, plan.k, plan.n, &path_opts)?;
    let fit = path.selected_fit();
    let beta_hat: Vec<f64> = fit.beta_hat.iter().copied().collect();

    let (se, covered_selected) = if summaries.len() >= 2 {
        let psi = variance_estimator(&summaries, &truth)?;
        let se = standard_errors(&psi, plan.n, plan.k, summaries.len())?;
        let covered_selected = if fit.active_set.is_empty() {
            vec![None; truth.len()]
        } else {
            let r = infer(&summaries, &fit.beta_hat, &fit.active_set, plan.n, 0.95)?;
            truth
                .iter()
                .map(|j| {
                    r.active_set
                        .iter()
                        .position(|a| a == j)
                        .map(|pos| (r.estimate[pos] - cfg.beta0[*j]).abs() <= Z_95 * r.se[pos])
                })
                .collect()
        };
        (Some(se.iter().copied().collect()), Some(covered_selected))
    } else {
        (None, None)
    };
    let subbagging = EstimateRecord {
        beta_hat,
        se,
        selected: fit.active_set.clone(),
        covered_selected,
    };

    let baseline = if cfg.with_baseline {
        let full = adaptive_lasso_full(&data, cfg.family, &NewtonOptions::default(), &path_opts)?;
        let f = full.path.selected_fit();
        let sw = sandwich_variance(&data, cfg.family, &f.beta_hat, &truth)?;
        Some(EstimateRecord {
            beta_hat: f.beta_hat.iter().copied().collect(),
            se: Some(sw.se),
            selected: f.active_set.clone(),
            covered_selected: None,
        })
    } else {
        None
    };
    Ok(ReplicationRecord {
        rep,
        subbagging,
        baseline,
    })
}

pub fn estimation_metrics(
    records: &[&EstimateRecord],
    coords: &[usize],
    beta0: &[f64],
) -> Result<EstimationMetrics> {
    let r = records.len();
    if r == 0 {
        return Err(Error::config("no replications to summarize"));
    }
    let rf = r as f64;
    let q = coords.len();
    let mut bias = vec![0.0; q];
    let mut sd = vec![0.0; q];
    for (i, &j) in coords.iter().enumerate() {
        let mean = records.iter().map(|e| e.beta_hat[j]).sum::<f64>() / rf;
        bias[i] = mean - beta0[j];
        sd[i] = (records
            .iter()
            .map(|e| (e.beta_hat[j] - mean).powi(2))
            .sum::<f64>()
            / rf)
            .sqrt();
    }
    let rmse = bias
        .iter()
        .zip(&sd)
        .map(|(b, s)| (b * b + s * s).sqrt())
        .collect();
    let (ase, cp) = if records.iter().all(|e| e.se.is_some()) {
        let mut ase = vec![0.0; q];
        let mut cp = vec![0.0; q];
        for e in records {
            let se = e.se.as_ref().expect("checked above");
            let cov = coverage(&e.beta_hat, se, coords, beta0);
            for i in 0..q {
                ase[i] += se[i] / rf;
                cp[i] += f64::from(u8::from(cov[i])) / rf;
            }
        }
        (Some(ase), Some(cp))
    } else {
        (None, None)
    };
    Ok(EstimationMetrics {
        coords: coords.to_vec(),
        bias,
        sd,
        rmse,
        ase,
        cp,
        reps: r,
    })
}

pub fn selection_metrics(
    records: &[&EstimateRecord],
    truth: &[usize],
    p: usize,
) -> SelectionMetrics {
    let rf = records.len() as f64;
    let n_false = p - truth.len();
    let mut cf = 0.0;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let sizes: Vec<f64> = records.iter().map(|e| e.selected.len() as f64).collect();
    for e in records {
        let hits = e.selected.iter().filter(|j| truth.contains(j)).count();
        let false_hits = e.selected.len() - hits;
        if hits == truth.len() && false_hits == 0 {
            cf += 1.0;
        }
        tp += hits as f64 / truth.len().max(1) as f64;
        if n_false > 0 {
            fp += false_hits as f64 / n_false as f64;
        }
    }
    let ms = sizes.iter().sum::<f64>() / rf;
    let sd_ms = (sizes.iter().map(|s| (s - ms).powi(2)).sum::<f64>() / rf).sqrt();
    SelectionMetrics {
        cf: cf / rf,
        tp: tp / rf,
        fp: fp / rf,
        ms,
        sd_ms,
    }
}

/// Runs all replications in parallel and reduces them to metrics.
pub fn run_replications(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let outcomes: Vec<Result<ReplicationRecord>> = (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failed_reps = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => records.push(r),
            Err(_) if cfg.skip_failures => failed_reps.push(rep),
            Err(e) => {
                return Err(Error::Replication {
                    rep,
                    source: Box::new(e),
                })
            }
        }
    }
    summarize(cfg, &records, failed_reps)
}

pub fn summarize(
    cfg: &SimConfig,
    records: &[ReplicationRecord],
    failed_reps: Vec<usize>,
) -> Result<SimReport> {
    let truth = cfg.true_model();
    let plan = cfg.plan(0)?;
    let sub: Vec<&EstimateRecord> = records.iter().map(|r| &r.subbagging).collect();
    let subbagging = estimation_metrics(&sub, &truth, &cfg.beta0)?;
    let subbagging_selection = selection_metrics(&sub, &truth, cfg.p());
    let base: Vec<&EstimateRecord> = records.iter().filter_map(|r| r.baseline.as_ref()).collect();
    let (baseline, baseline_selection) = if !base.is_empty() && base.len() == records.len() {
        (
            Some(estimation_metrics(&base, &truth, &cfg.beta0)?),
            Some(selection_metrics(&base, &truth, cfg.p())),
        )
    } else {
        (None, None)
    };
    let cp_selected_model = if sub.iter().all(|e| e.covered_selected.is_some()) {
        Some(
            (0..truth.len())
                .map(|i| {
                    let flags: Vec<bool> = sub
                        .iter()
                        .filter_map(|e| e.covered_selected.as_ref().unwrap()[i])
                        .collect();
                    if flags.is_empty() {
                        f64::NAN
                    } else {
                        flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(SimReport {
        config: cfg.clone(),
        k: plan.k,
        m: plan.m,
        subbagging,
        subbagging_selection,
        baseline,
        baseline_selection,
        cp_selected_model,
        failed_reps,
    })
}

/// `SD^2(subbagging) / SD^2(baseline)` for each true-model coordinate.
pub fn variance_inflation_ratios(report: &SimReport) -> Result<Vec<f64>> {
    let base = report
        .baseline
        .as_ref()
        .ok_or_else(|| Error::config("variance inflation needs baseline metrics"))?;
    Ok(report
        .subbagging
        .sd
        .iter()
        .zip(&base.sd)
        .map(|(s, b)| (s / b).powi(2))
        .collect())
}

/// Average of [`variance_inflation_ratios`] over the true model; compare
/// with `1 + n / (k m)`.
pub fn variance_inflation_check(report: &SimReport) -> Result<f64> {
    let r = variance_inflation_ratios(report)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Sample mean and variance helpers used by the data checks.
pub fn mean_and_variance(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}
