//! Human-readable tables and line-delimited JSON records.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::json;

use crate::csv_input::CategoricalLevels;
use crate::error::Result;
use crate::family::Family;
use crate::sim::{EstimationMetrics, SelectionMetrics, SimReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub index: usize,
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    /// Zero standard error: the interval collapses to the estimate.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRow {
    pub lambda: f64,
    pub df: usize,
    pub sbic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRow {
    pub subsample_id: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub family: Family,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub master_seed: u64,
    pub gamma: f64,
    pub level: f64,
    pub names: Vec<String>,
    pub unpenalized: Vec<usize>,
    pub lambda_hat: f64,
    pub sbic_hat: f64,
    pub selected: Vec<CoefficientRow>,
    pub beta_hat: Vec<f64>,
    pub beta_bar: Vec<f64>,
    pub path: Vec<PathRow>,
    /// Why standard errors are missing, if they are.
    pub inference_note: Option<String>,
    pub levels: Vec<CategoricalLevels>,
    pub failures: Vec<FailureRow>,
}

fn fmt_p(p: f64) -> String {
    if p < 1e-16 {
        "<1e-16".to_string()
    } else {
        format!("{p:.3e}")
    }
}

fn fmt_opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "n/a".to_string())
}

impl FitReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Subbagging adaptive LASSO, {} family",
            self.family.name()
        );
        let _ = writeln!(
            s,
            "N = {}, k = {}, m = {}, alpha = {:.4}, gamma = {}, seed = {}",
            self.n,
            self.k,
            self.m,
            (self.k * self.m) as f64 / self.n as f64,
            self.gamma,
            self.master_seed
        );
        let _ = writeln!(
            s,
            "lambda_hat = {:.6e}, SBIC = {:.6}, {} of {} variables selected",
            self.lambda_hat,
            self.sbic_hat,
            self.selected.len(),
            self.names.len()
        );
        if !self.unpenalized.is_empty() {
            let names: Vec<&str> = self
                .unpenalized
                .iter()
                .map(|&j| self.names[j].as_str())
                .collect();
            let _ = writeln!(s, "unpenalized: {}", names.join(", "));
        }
        s.push('\n');

        let width = self
            .names
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(8)
            .max(17);
        let pct = format!("{:.0}% CI", self.level * 100.0);
        let _ = writeln!(
            s,
            "{:<width$}  {:>13}  {:>12}  {:>10}  {:>29}",
            "Variable selected", "estimate", "SE", "p-value", pct
        );
        let _ = writeln!(s, "{}", "-".repeat(width + 74));
        for r in &self.selected {
            let ci = match (r.ci_low, r.ci_high) {
                (Some(lo), Some(hi)) => format!("[{lo:>12.6}, {hi:>12.6}]"),
                _ => "n/a".to_string(),
            };
            let flag = if r.degenerate { "  (SE = 0)" } else { "" };
            let _ = writeln!(
                s,
                "{:<width$}  {:>13.6}  {:>12}  {:>10}  {:>29}{flag}",
                r.name,
                r.estimate,
                fmt_opt(r.se, |v| format!("{v:.6}")),
                fmt_opt(r.p_value, fmt_p),
                ci,
            );
        }
        if let Some(note) = &self.inference_note {
            let _ = writeln!(s, "note: {note}");
        }
        let dropped: Vec<&str> = (0..self.names.len())
            .filter(|j| !self.selected.iter().any(|r| r.index == *j))
            .map(|j| self.names[j].as_str())
            .collect();
        if !dropped.is_empty() {
            let _ = writeln!(s, "\nNot selected: {}", dropped.join(", "));
        }
        if !self.levels.is_empty() {
            let _ = writeln!(s, "\nCategorical levels (first is the reference):");
            for l in &self.levels {
                let _ = writeln!(s, "  {}: {}", l.column, l.levels.join(", "));
            }
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s, "\nSkipped subsamples:");
            for f in &self.failures {
                let _ = writeln!(s, "  {}: {}", f.subsample_id, f.error);
            }
        }
        let _ = writeln!(s, "\nSBIC path");
        let _ = writeln!(s, "  {:>14}  {:>4}  {:>18}", "lambda", "df", "SBIC");
        for r in &self.path {
            let mark = if r.lambda == self.lambda_hat {
                "  <"
            } else {
                ""
            };
            let _ = writeln!(
                s,
                "  {:>14.6e}  {:>4}  {:>18.6}{mark}",
                r.lambda, r.df, r.sbic
            );
        }
        s
    }

    /// One `run` record, then one `coefficient` record per variable and one
    /// `path` record per lambda.
    pub fn json_lines(&self) -> Result<String> {
        let mut out = String::new();
        let run = json!({
            "record": "run",
            "family": self.family,
            "n": self.n,
            "k": self.k,
            "m": self.m,
            "master_seed": self.master_seed,
            "gamma": self.gamma,
            "level": self.level,
            "lambda_hat": self.lambda_hat,
            "sbic_hat": self.sbic_hat,
            "names": self.names,
            "unpenalized": self.unpenalized,
            "levels": self.levels,
            "inference_note": self.inference_note,
            "failures": self.failures,
        });
        out.push_str(&serde_json::to_string(&run)?);
        out.push('\n');
        for j in 0..self.names.len() {
            let row = self.selected.iter().find(|r| r.index == j);
            let rec = json!({
                "record": "coefficient",
                "index": j,
                "name": self.names[j],
                "selected": row.is_some(),
                "estimate": self.beta_hat[j],
                "beta_bar": self.beta_bar[j],
                "se": row.and_then(|r| r.se),
                "ci_low": row.and_then(|r| r.ci_low),
                "ci_high": row.and_then(|r| r.ci_high),
                "p_value": row.and_then(|r| r.p_value),
            });
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        for r in &self.path {
            let rec = json!({ "record": "path", "lambda": r.lambda, "df": r.df, "sbic": r.sbic });
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn cell(v: Option<f64>, scale: f64, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{:.*}", digits, x * scale),
        _ => "n/a".to_string(),
    }
}

/// Estimation and selection tables for a set of simulation runs. Runs that
/// share `(family, n, delta)` are laid out side by side, one column group per
/// `alpha`, followed by the full-sample estimator when available. BIAS, SD,
/// RMSE and ASE are multiplied by 100.
pub fn render_simulation(reports: &[SimReport]) -> String {
    let mut s = String::new();
    let mut groups: Vec<Vec<&SimReport>> = Vec::new();
    for r in reports {
        let key = |x: &SimReport| (x.config.family, x.config.n, x.config.delta.to_bits());
        match groups.last_mut() {
            Some(g) if key(g[0]) == key(r) => g.push(r),
            _ => groups.push(vec![r]),
        }
    }
    for g in groups {
        let head = g[0];
        let coords = &head.subbagging.coords;
        let q = coords.len();
        let _ = writeln!(
            s,
            "{} family, N = {}, delta = {:.4}, k = {}, reps = {}  (BIAS, SD, RMSE, ASE x 100)",
            head.config.family.name(),
            head.config.n,
            head.config.delta,
            head.k,
            head.subbagging.reps
        );
        let mut blocks: Vec<(String, &EstimationMetrics, &SelectionMetrics)> = g
            .iter()
            .map(|r| {
                (
                    format!("alpha={} (m={})", r.config.alpha, r.m),
                    &r.subbagging,
                    &r.subbagging_selection,
                )
            })
            .collect();
        if let (Some(b), Some(bs)) = (&head.baseline, &head.baseline_selection) {
            blocks.push(("full sample".to_string(), b, bs));
        }
        let colw = 8;
        let groupw = q * colw;
        let _ = write!(s, "{:<8}", "");
        for (label, _, _) in &blocks {
            let _ = write!(s, " |{label:^groupw$}");
        }
        s.push('\n');
        let _ = write!(s, "{:<8}", "");
        for _ in &blocks {
            let _ = write!(s, " |");
            for &j in coords {
                let _ = write!(s, "{:>colw$}", format!("b{}", j + 1));
            }
        }
        s.push('\n');
        type Getter = fn(&EstimationMetrics, usize) -> Option<f64>;
        let rows: [(&str, Getter, f64); 5] = [
            ("BIAS", |e, i| Some(e.bias[i]), 100.0),
            ("SD", |e, i| Some(e.sd[i]), 100.0),
            ("RMSE", |e, i| Some(e.rmse[i]), 100.0),
            ("ASE", |e, i| e.ase.as_ref().map(|a| a[i]), 100.0),
            ("CP (%)", |e, i| e.cp.as_ref().map(|c| c[i]), 100.0),
        ];
        for (name, get, scale) in rows {
            let digits = if name.starts_with("CP") { 1 } else { 2 };
            let _ = write!(s, "{name:<8}");
            for (_, e, _) in &blocks {
                let _ = write!(s, " |");
                for i in 0..q {
                    let _ = write!(s, "{:>colw$}", cell(get(e, i), scale, digits));
                }
            }
            s.push('\n');
        }
        s.push('\n');
        let sel_w = 16;
        let _ = write!(s, "{:<8}", "");
        for (label, _, _) in &blocks {
            let _ = write!(s, " |{label:>sel_w$}");
        }
        s.push('\n');
        type SelGetter = fn(&SelectionMetrics) -> String;
        let sel_rows: [(&str, SelGetter); 4] = [
            ("CF (%)", |m| format!("{:.2}", 100.0 * m.cf)),
            ("TP (%)", |m| format!("{:.2}", 100.0 * m.tp)),
            ("FP (%)", |m| format!("{:.2}", 100.0 * m.fp)),
            ("MS (sd)", |m| format!("{:.2} ({:.2})", m.ms, m.sd_ms)),
        ];
        for (name, get) in sel_rows {
            let _ = write!(s, "{name:<8}");
            for (_, _, m) in &blocks {
                let _ = write!(s, " |{:>sel_w$}", get(m));
            }
            s.push('\n');
        }
        for r in &g {
            if let Some(cp) = &r.cp_selected_model {
                let vals: Vec<String> = cp.iter().map(|c| cell(Some(*c), 100.0, 1)).collect();
                let _ = writeln!(
                    s,
                    "alpha={}: CP (%) under the selected model: {}",
                    r.config.alpha,
                    vals.join(", ")
                );
            }
            if !r.failed_reps.is_empty() {
                let _ = writeln!(
                    s,
                    "alpha={}: {} replications failed and were skipped",
                    r.config.alpha,
                    r.failed_reps.len()
                );
            }
        }
        s.push('\n');
    }
    s
}

/// One record per run and estimator, with unscaled metrics.
pub fn simulation_json_lines(reports: &[SimReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        let c = &r.config;
        let mut push =
            |estimator: &str, e: &EstimationMetrics, sel: &SelectionMetrics| -> Result<()> {
                let rec = json!({
                    "record": "simulation",
                    "estimator": estimator,
                    "family": c.family,
                    "n": c.n,
                    "delta": c.delta,
                    "alpha": c.alpha,
                    "k": r.k,
                    "m": r.m,
                    "gamma": c.gamma,
                    "reps": e.reps,
                    "master_seed": c.master_seed,
                    "coords": e.coords,
                    "bias": e.bias,
                    "sd": e.sd,
                    "rmse": e.rmse,
                    "ase": e.ase,
                    "cp": e.cp,
                    "cf": sel.cf,
                    "tp": sel.tp,
                    "fp": sel.fp,
                    "ms": sel.ms,
                    "sd_ms": sel.sd_ms,
                    "failed_reps": r.failed_reps,
                });
                out.push_str(&serde_json::to_string(&rec)?);
                out.push('\n');
                Ok(())
            };
        push("subbagging", &r.subbagging, &r.subbagging_selection)?;
        if let (Some(b), Some(bs)) = (&r.baseline, &r.baseline_selection) {
            push("full_sample", b, bs)?;
        }
    }
    Ok(out)
}
