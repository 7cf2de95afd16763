//! The CLI commands as library functions.
//!
//! `fit` is `fit-subsamples` followed by `aggregate` without the round trip
//! through disk; both routes end in [`analyze`] with the same summaries and
//! therefore produce the same report.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::aggregate::tree_merge;
use crate::baseline::{adaptive_lasso_full, regularization_path, sandwich_variance, PathOptions};
use crate::csv_input::{load_csv, CategoricalLevels, CsvData, CsvSchema, StorageMode};
use crate::data::RowSource;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::inference::{infer, wald_intervals};
use crate::lasso::{LambdaPath, SolverOptions};
use crate::newton::NewtonOptions;
use crate::report::{CoefficientRow, FailureRow, FitReport, PathRow};
use crate::sim::{run_replications, SimConfig, SimReport};
use crate::subsample::{
    run_plan_range, FailurePolicy, RunOptions, SubbaggingPlan, SubsampleSummary,
};
use crate::summary_file::SummaryFile;

pub const DEFAULT_DELTA: f64 = 0.25;
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Summaries merged directly before partial aggregates are combined.
const MERGE_LEAF: usize = 256;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub family: Family,
    pub schema: CsvSchema,
    pub delta: Option<f64>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub m: Option<usize>,
    pub gamma: f64,
    pub n_grid: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    pub storage: StorageMode,
    pub level: f64,
    pub policy: FailurePolicy,
    /// Fit only ids `first_id..first_id + count` of the plan (sharding).
    pub first_id: u32,
    pub count: Option<u32>,
}

impl RunConfig {
    pub fn new(family: Family, schema: CsvSchema) -> Self {
        Self {
            family,
            schema,
            delta: None,
            k: None,
            alpha: None,
            m: None,
            gamma: 1.0,
            n_grid: 100,
            seed: 0,
            threads: 0,
            storage: StorageMode::InMemory,
            level: 0.95,
            policy: FailurePolicy::FailFast,
            first_id: 0,
            count: None,
        }
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.delta.is_some() && self.k.is_some() {
            return Err(Error::config("give either delta or k, not both"));
        }
        if self.alpha.is_some() && self.m.is_some() {
            return Err(Error::config("give either alpha or m, not both"));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 0.5) {
                return Err(Error::config(format!(
                    "delta must lie in (0, 1/2), got {d}"
                )));
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::config(format!("alpha must be positive, got {a}")));
            }
        }
        if self.k == Some(0) || self.m == Some(0) {
            return Err(Error::config("k and m must be positive"));
        }
        self.analysis_options().validate()
    }

    pub fn plan(&self, n: usize) -> Result<SubbaggingPlan> {
        self.validate()?;
        let k = match self.k {
            Some(k) => k,
            None => SubbaggingPlan::subsample_size(n, self.delta.unwrap_or(DEFAULT_DELTA))?,
        };
        let m = match self.m {
            Some(m) => m,
            None => SubbaggingPlan::subsample_count(n, k, self.alpha.unwrap_or(DEFAULT_ALPHA))?,
        };
        let mut plan = SubbaggingPlan::explicit(n, k, m, self.seed)?;
        if self.k.is_none() {
            plan.delta = Some(self.delta.unwrap_or(DEFAULT_DELTA));
        }
        if self.m.is_none() {
            plan.alpha = Some(self.alpha.unwrap_or(DEFAULT_ALPHA));
        }
        Ok(plan)
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            gamma: self.gamma,
            n_grid: self.n_grid,
            level: self.level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub gamma: f64,
    pub n_grid: usize,
    pub level: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            n_grid: 100,
            level: 0.95,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.n_grid < 2 {
            return Err(Error::config("the lambda grid needs at least 2 points"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

/// What the aggregation step needs to know about the data besides the
/// summaries themselves. Stored next to a summary file as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMeta {
    pub n: usize,
    pub names: Vec<String>,
    pub unpenalized: Vec<usize>,
    pub levels: Vec<CategoricalLevels>,
}

impl SummaryMeta {
    fn from_data(data: &CsvData) -> Self {
        Self {
            n: data.n_rows(),
            names: data.covariate_names(),
            unpenalized: data.intercept_position().into_iter().collect(),
            levels: data.levels(),
        }
    }

    /// Generic names `x1..xp` when nothing else is known.
    pub fn anonymous(n: usize, p: usize) -> Self {
        Self {
            n,
            names: (1..=p).map(|j| format!("x{j}")).collect(),
            unpenalized: Vec::new(),
            levels: Vec::new(),
        }
    }
}

/// Path of the metadata file stored next to `summaries`.
pub fn sidecar_path(summaries: &Path) -> PathBuf {
    let mut s = summaries.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Runs `f` on a pool with `threads` workers, or the global pool for 0.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

pub struct SubsampleRun {
    pub file: SummaryFile,
    pub meta: SummaryMeta,
    pub failures: Vec<(u32, Error)>,
}

fn fit_loaded(cfg: &RunConfig, data: &CsvData) -> Result<SubsampleRun> {
    data.for_each_block(&mut |b| b.check_family(cfg.family))?;
    let plan = cfg.plan(data.n_rows())?;
    let last = plan.m as u32;
    let start = cfg.first_id.min(last);
    let end = match cfg.count {
        Some(c) => start.saturating_add(c).min(last),
        None => last,
    };
    if start >= end {
        return Err(Error::config(format!(
            "no subsample ids to fit: the plan has m = {}, first id {}",
            plan.m, cfg.first_id
        )));
    }
    let opts = RunOptions {
        newton: NewtonOptions::default(),
        policy: cfg.policy,
        init: None,
    };
    let outcome = run_plan_range(data, &plan, cfg.family, &opts, start..end)?;
    if outcome.summaries.is_empty() {
        return Err(outcome
            .failures
            .into_iter()
            .next()
            .map(|(id, e)| Error::Subsample {
                id,
                source: Box::new(e),
            })
            .unwrap_or_else(|| Error::data("no subsample could be fitted")));
    }
    Ok(SubsampleRun {
        file: SummaryFile::new(cfg.family, plan.master_seed, outcome.summaries)?,
        meta: SummaryMeta::from_data(data),
        failures: outcome.failures,
    })
}

/// Loads the CSV and fits the configured subsamples.
pub fn fit_subsamples(cfg: &RunConfig, data_path: &Path) -> Result<SubsampleRun> {
    cfg.validate()?;
    let data = load_csv(data_path, &cfg.schema, cfg.storage)?;
    with_threads(cfg.threads, || fit_loaded(cfg, &data))?
}

/// [`fit_subsamples`], then writes the summary file and its metadata.
pub fn cmd_fit_subsamples(cfg: &RunConfig, data_path: &Path, out: &Path) -> Result<SubsampleRun> {
    let run = fit_subsamples(cfg, data_path)?;
    run.file.write(out)?;
    fs::write(sidecar_path(out), serde_json::to_string_pretty(&run.meta)?)?;
    Ok(run)
}

fn failure_rows(failures: &[(u32, Error)]) -> Vec<FailureRow> {
    failures
        .iter()
        .map(|(id, e)| FailureRow {
            subsample_id: *id,
            error: e.to_string(),
        })
        .collect()
}

/// Aggregates summaries, selects by SBIC and attaches inference.
pub fn analyze(
    family: Family,
    master_seed: u64,
    mut summaries: Vec<SubsampleSummary>,
    meta: &SummaryMeta,
    failures: Vec<FailureRow>,
    opts: &AnalysisOptions,
) -> Result<FitReport> {
    opts.validate()?;
    summaries.sort_by_key(|s| s.subsample_id);
    if let Some(w) = summaries
        .windows(2)
        .find(|w| w[0].subsample_id == w[1].subsample_id)
    {
        return Err(Error::config(format!(
            "subsample id {} appears twice",
            w[0].subsample_id
        )));
    }
    let first = summaries
        .first()
        .ok_or_else(|| Error::config("no summaries"))?;
    let (k, p) = (first.k, first.p());
    let n = meta.n;
    if meta.names.len() != p {
        return Err(Error::config(format!(
            "{} covariate names for {p} coefficients",
            meta.names.len()
        )));
    }
    if k > n {
        return Err(Error::config(format!("subsample size {k} exceeds N = {n}")));
    }
    let agg = tree_merge(&summaries, MERGE_LEAF)?;
    let path_opts = PathOptions {
        gamma: opts.gamma,
        n_grid: opts.n_grid,
        solver: SolverOptions::default(),
        unpenalized: meta.unpenalized.clone(),
    };
    let (_, path) = regularization_path(&agg, k, n, &path_opts)?;
    let fit = path.selected_fit();
    let m = summaries.len();

    let mut selected: Vec<CoefficientRow> = fit
        .active_set
        .iter()
        .map(|&j| CoefficientRow {
            index: j,
            name: meta.names[j].clone(),
            estimate: fit.beta_hat[j],
            se: None,
            ci_low: None,
            ci_high: None,
            p_value: None,
            degenerate: false,
        })
        .collect();
    let inference_note = if m < 2 {
        Some("standard errors need at least two subsamples (m = 1)".to_string())
    } else {
        if !fit.active_set.is_empty() {
            let inf = infer(&summaries, &fit.beta_hat, &fit.active_set, n, opts.level)?;
            for (i, row) in selected.iter_mut().enumerate() {
                row.se = Some(inf.se[i]);
                row.ci_low = Some(inf.ci_low[i]);
                row.ci_high = Some(inf.ci_high[i]);
                row.p_value = Some(inf.p_value[i]);
                row.degenerate = inf.degenerate[i];
            }
        }
        None
    };
    Ok(FitReport {
        family,
        n,
        k,
        m,
        master_seed,
        gamma: opts.gamma,
        level: opts.level,
        names: meta.names.clone(),
        unpenalized: meta.unpenalized.clone(),
        lambda_hat: fit.lambda,
        sbic_hat: fit.sbic.unwrap_or(f64::NAN),
        selected,
        beta_hat: fit.beta_hat.iter().copied().collect(),
        beta_bar: agg.beta_bar.iter().copied().collect(),
        path: path_rows(&path),
        inference_note,
        levels: meta.levels.clone(),
        failures,
    })
}

fn path_rows(path: &LambdaPath) -> Vec<PathRow> {
    path.fits
        .iter()
        .map(|f| PathRow {
            lambda: f.lambda,
            df: f.df,
            sbic: f.sbic.unwrap_or(f64::NAN),
        })
        .collect()
}

/// Merges one or more summary files and reports the selected model. `n`
/// overrides the row count recorded next to the first file; names and the
/// intercept position come from that record when present.
pub fn cmd_aggregate(
    paths: &[PathBuf],
    n: Option<usize>,
    opts: &AnalysisOptions,
    threads: usize,
) -> Result<FitReport> {
    opts.validate()?;
    let first_path = paths
        .first()
        .ok_or_else(|| Error::config("no summary files given"))?;
    let mut files = Vec::with_capacity(paths.len());
    for p in paths {
        files.push(SummaryFile::read(p)?);
    }
    let head = &files[0];
    for (f, p) in files.iter().zip(paths).skip(1) {
        if f.family != head.family || f.p != head.p || f.k != head.k {
            return Err(Error::config(format!(
                "{} is incompatible with {}: family, p or k differ",
                p.display(),
                first_path.display()
            )));
        }
        if f.master_seed != head.master_seed {
            return Err(Error::config(format!(
                "{} was written with a different master seed",
                p.display()
            )));
        }
    }
    let sidecar = sidecar_path(first_path);
    let mut meta = if sidecar.exists() {
        let meta: SummaryMeta = serde_json::from_slice(&fs::read(&sidecar)?)
            .map_err(|e| Error::SummaryFormat(format!("{}: {e}", sidecar.display())))?;
        meta
    } else {
        let n = n.ok_or_else(|| {
            Error::config(format!(
                "N is required: pass --n or keep {}",
                sidecar.display()
            ))
        })?;
        SummaryMeta::anonymous(n, head.p)
    };
    if let Some(n) = n {
        meta.n = n;
    }
    let (family, seed) = (head.family, head.master_seed);
    let summaries: Vec<SubsampleSummary> = files.into_iter().flat_map(|f| f.summaries).collect();
    with_threads(threads, || {
        analyze(family, seed, summaries, &meta, Vec::new(), opts)
    })?
}

/// Fit-subsamples and aggregate in one process.
pub fn cmd_fit(cfg: &RunConfig, data_path: &Path) -> Result<FitReport> {
    let run = fit_subsamples(cfg, data_path)?;
    let failures = failure_rows(&run.failures);
    with_threads(cfg.threads, || {
        analyze(
            cfg.family,
            run.file.master_seed,
            run.file.summaries,
            &run.meta,
            failures,
            &cfg.analysis_options(),
        )
    })?
}

/// Full-sample adaptive LASSO on the same data, tuned by `N L + log(N) df`,
/// with sandwich standard errors. Reported in the same layout with `k = N`
/// and `m = 1`.
pub fn cmd_baseline(cfg: &RunConfig, data_path: &Path) -> Result<FitReport> {
    cfg.validate()?;
    let data = load_csv(data_path, &cfg.schema, cfg.storage)?;
    with_threads(cfg.threads, || baseline_report(cfg, &data))?
}

fn baseline_report(cfg: &RunConfig, data: &CsvData) -> Result<FitReport> {
    let meta = SummaryMeta::from_data(data);
    let opts = cfg.analysis_options();
    let path_opts = PathOptions {
        gamma: opts.gamma,
        n_grid: opts.n_grid,
        solver: SolverOptions::default(),
        unpenalized: meta.unpenalized.clone(),
    };
    let full = adaptive_lasso_full(data, cfg.family, &NewtonOptions::default(), &path_opts)?;
    let fit = full.path.selected_fit();
    let active = &fit.active_set;
    let mut selected = Vec::with_capacity(active.len());
    if !active.is_empty() {
        let sw = sandwich_variance(data, cfg.family, &fit.beta_hat, active)?;
        let est = DVector::from_iterator(active.len(), active.iter().map(|&j| fit.beta_hat[j]));
        let se = DVector::from_vec(sw.se.clone());
        let w = wald_intervals(&est, &se, opts.level)?;
        for (i, &j) in active.iter().enumerate() {
            selected.push(CoefficientRow {
                index: j,
                name: meta.names[j].clone(),
                estimate: est[i],
                se: Some(se[i]),
                ci_low: Some(w.ci_low[i]),
                ci_high: Some(w.ci_high[i]),
                p_value: Some(w.p_value[i]),
                degenerate: w.degenerate[i],
            });
        }
    }
    Ok(FitReport {
        family: cfg.family,
        n: full.fit.n,
        k: full.fit.n,
        m: 1,
        master_seed: 0,
        gamma: opts.gamma,
        level: opts.level,
        names: meta.names.clone(),
        unpenalized: meta.unpenalized.clone(),
        lambda_hat: fit.lambda,
        sbic_hat: fit.sbic.unwrap_or(f64::NAN),
        selected,
        beta_hat: fit.beta_hat.iter().copied().collect(),
        beta_bar: full.fit.beta_tilde.iter().copied().collect(),
        path: path_rows(&full.path),
        inference_note: Some("full-sample fit; sandwich standard errors".to_string()),
        levels: meta.levels.clone(),
        failures: Vec::new(),
    })
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub family: Family,
    pub ns: Vec<usize>,
    pub deltas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub gamma: f64,
    pub n_grid: usize,
    pub baseline: bool,
    pub skip_failures: bool,
    pub threads: usize,
}

impl SimulateConfig {
    /// `N` in {10^4, 10^5}, `delta = 1/4`, `alpha` in {0.1, 0.5, 1}, 200 reps.
    pub fn desk(family: Family) -> Self {
        Self {
            family,
            ns: vec![10_000, 100_000],
            deltas: vec![0.25],
            alphas: vec![0.1, 0.5, 1.0],
            reps: 200,
            seed: 20_240_601,
            gamma: 1.0,
            n_grid: 100,
            baseline: true,
            skip_failures: false,
            threads: 0,
        }
    }

    /// `N` in {5 x 10^5, 10^6}, `delta` in {1/4, 1/3}, 1000 reps.
    pub fn paper(family: Family) -> Self {
        Self {
            ns: vec![500_000, 1_000_000],
            deltas: vec![0.25, 1.0 / 3.0],
            reps: 1000,
            ..Self::desk(family)
        }
    }

    pub fn configs(&self) -> Vec<SimConfig> {
        let mut out = Vec::new();
        for &n in &self.ns {
            for &delta in &self.deltas {
                for (i, &alpha) in self.alphas.iter().enumerate() {
                    let mut c = SimConfig::new(self.family, n, delta, alpha);
                    c.n_reps = self.reps;
                    c.master_seed = self.seed;
                    c.gamma = self.gamma;
                    c.n_grid = self.n_grid;
                    // the full-sample estimator does not depend on alpha
                    c.with_baseline = self.baseline && i == 0;
                    c.skip_failures = self.skip_failures;
                    out.push(c);
                }
            }
        }
        out
    }
}

/// Runs every `(N, delta, alpha)` combination in order.
pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<Vec<SimReport>> {
    let configs = cfg.configs();
    if configs.is_empty() {
        return Err(Error::config("empty simulation grid"));
    }
    with_threads(cfg.threads, || {
        configs
            .iter()
            .map(run_replications)
            .collect::<Result<Vec<_>>>()
    })?
}
