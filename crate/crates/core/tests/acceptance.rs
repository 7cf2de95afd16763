//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the lines are always printed. Failing criteria
//! are reported but only fail the process when `ACCEPTANCE_STRICT=1`.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use subbag_core::baseline::{adaptive_lasso_full, regularization_path, PathOptions};
use subbag_core::commands::{
    cmd_aggregate, cmd_fit, cmd_fit_subsamples, AnalysisOptions, RunConfig,
};
use subbag_core::csv_input::{Covariates, CsvSchema};
use subbag_core::lasso::{solve_penalized, SolverOptions};
use subbag_core::newton::NewtonOptions;
use subbag_core::sim::{run_replications, SimConfig, SimReport};
use subbag_core::subsample::{draw_subsample, run_plan, RunOptions};
use subbag_core::summary_file::SummaryFile;
use subbag_core::{AggregatedQuadratic, Dataset, Family, Observation, SubbaggingPlan};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- criteria 1-4

struct Study {
    by_alpha: Vec<SimReport>,
    delta_third: SimReport,
}

fn run_study() -> Study {
    let by_alpha = [0.1, 0.5, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let mut cfg = SimConfig::new(Family::Logistic, 100_000, 0.25, alpha);
            cfg.with_baseline = i == 0;
            run_replications(&cfg).expect("study run")
        })
        .collect();
    let mut cfg = SimConfig::new(Family::Logistic, 100_000, 1.0 / 3.0, 1.0);
    cfg.with_baseline = false;
    let delta_third = run_replications(&cfg).expect("delta = 1/3 run");
    Study {
        by_alpha,
        delta_third,
    }
}

fn selection_consistency(s: &Study) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &s.by_alpha {
        let m = &r.subbagging_selection;
        let ok = m.cf >= 0.95 && m.tp == 1.0 && m.fp <= 0.01 && (2.95..=3.05).contains(&m.ms);
        pass &= ok;
        parts.push(format!(
            "alpha={}: CF={:.1}% TP={:.1}% FP={:.2}% MS={:.3}",
            r.config.alpha,
            100.0 * m.cf,
            100.0 * m.tp,
            100.0 * m.fp,
            m.ms
        ));
    }
    verdict(pass, parts.join("; "))
}

fn variance_inflation(s: &Study) -> Verdict {
    let base_sd = s.by_alpha[0].baseline.as_ref().expect("baseline").sd[0];
    let ratios: Vec<f64> = s
        .by_alpha
        .iter()
        .map(|r| (r.subbagging.sd[0] / base_sd).powi(2))
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (r, ratio) in s.by_alpha.iter().zip(&ratios) {
        let target = 1.0 + 1.0 / r.config.alpha;
        let realized = 1.0 + r.config.n as f64 / (r.k * r.m) as f64;
        let in_band = ratio / target >= 0.7 && ratio / target <= 1.4;
        if r.config.alpha >= 0.5 {
            pass &= in_band;
        }
        parts.push(format!(
            "alpha={}: ratio={ratio:.3} (1+1/alpha={target:.2}, 1+N/(km)={realized:.2})",
            r.config.alpha
        ));
    }
    let monotone = ratios.windows(2).all(|w| w[0] > w[1]);
    pass &= monotone;
    parts.push(format!("decreasing in alpha: {monotone}"));
    verdict(pass, parts.join("; "))
}

fn coverage(s: &Study) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in s.by_alpha.iter().filter(|r| r.m >= 2) {
        let cp = r.subbagging.cp.as_ref().expect("coverage with m >= 2");
        pass &= cp.iter().all(|&c| (0.915..=0.975).contains(&c));
        let cells: Vec<String> = cp.iter().map(|c| format!("{:.1}", 100.0 * c)).collect();
        parts.push(format!(
            "alpha={} (m={}): CP%={}",
            r.config.alpha,
            r.m,
            cells.join("/")
        ));
    }
    verdict(pass, parts.join("; "))
}

fn bias_ordering(s: &Study) -> Verdict {
    let quarter = &s.by_alpha[2].subbagging;
    let third = &s.delta_third.subbagging;
    let base = s.by_alpha[0].baseline.as_ref().expect("baseline");
    let (bq, bt, bb) = (
        quarter.bias[0].abs(),
        third.bias[0].abs(),
        base.bias[0].abs(),
    );
    let (sq, st, sb) = (
        quarter.bias_mc_se()[0],
        third.bias_mc_se()[0],
        base.bias_mc_se()[0],
    );
    let diff_se = (sq * sq + st * st).sqrt();
    let ordered = bt <= bq + 2.0 * diff_se;
    let above_base = bq >= bb - 2.0 * sb && bt >= bb - 2.0 * sb;
    verdict(
        ordered && above_base,
        format!(
            "x100 |BIAS| b1: delta=1/3 {:.3} (se {:.3}), delta=1/4 {:.3} (se {:.3}), full {:.3} (se {:.3})",
            100.0 * bt,
            100.0 * st,
            100.0 * bq,
            100.0 * sq,
            100.0 * bb,
            100.0 * sb
        ),
    )
}

// ------------------------------------------------------------------ criterion 5

fn objective(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    c: f64,
    lambda: f64,
    w: &DVector<f64>,
    beta: &DVector<f64>,
) -> f64 {
    let pen: f64 = (0..beta.len())
        .filter(|&j| beta[j] != 0.0)
        .map(|j| w[j] * beta[j].abs())
        .sum();
    beta.dot(&(h * beta)) - 2.0 * b.dot(beta) + c + lambda * pen
}

/// Minimum over all sign patterns of the restricted stationary points.
fn enumeration_oracle(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    c: f64,
    lambda: f64,
    w: &DVector<f64>,
) -> f64 {
    let p = b.len();
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(p as u32) {
        let signs: Vec<f64> = (0..p)
            .map(|j| ((code / 3usize.pow(j as u32)) % 3) as f64 - 1.0)
            .collect();
        let support: Vec<usize> = (0..p).filter(|&j| signs[j] != 0.0).collect();
        if support.iter().any(|&j| w[j].is_infinite()) {
            continue;
        }
        let mut beta = DVector::zeros(p);
        if !support.is_empty() {
            let hs = h.select_rows(&support).select_columns(&support);
            let rhs = DVector::from_iterator(
                support.len(),
                support
                    .iter()
                    .map(|&j| b[j] - 0.5 * lambda * w[j] * signs[j]),
            );
            let Some(sol) = hs.lu().solve(&rhs) else {
                continue;
            };
            if support
                .iter()
                .enumerate()
                .any(|(i, &j)| sol[i] * signs[j] < 0.0)
            {
                continue;
            }
            for (i, &j) in support.iter().enumerate() {
                beta[j] = sol[i];
            }
        }
        best = best.min(objective(h, b, c, lambda, w, &beta));
    }
    best
}

fn kkt_holds(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    w: &DVector<f64>,
    beta: &DVector<f64>,
    tol: f64,
) -> bool {
    let g = (h * beta - b) * 2.0;
    (0..beta.len()).all(|j| {
        if w[j].is_infinite() {
            beta[j] == 0.0
        } else if beta[j] != 0.0 {
            (g[j] + lambda * w[j] * beta[j].signum()).abs() <= tol
        } else {
            g[j].abs() <= lambda * w[j] + tol
        }
    })
}

fn solver_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    let mut kkt_fail = 0;
    for _ in 0..200 {
        let p = rng.random_range(1..=6);
        let a = DMatrix::from_fn(p + 2, p, |_, _| rng.random_range(-1.0..1.0));
        let h = a.transpose() * &a / (p + 2) as f64 + DMatrix::identity(p, p) * 0.02;
        let h = (&h + h.transpose()) * 0.5;
        let b: DVector<f64> = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
        let c = rng.random_range(0.0..5.0);
        let w: DVector<f64> = DVector::from_fn(p, |_, _| match rng.random_range(0..10) {
            0 => 0.0,
            1 => f64::INFINITY,
            _ => rng.random_range(0.1..5.0),
        });
        let scale = (0..p)
            .filter(|&j| w[j] > 0.0 && w[j].is_finite())
            .map(|j| 2.0 * b[j].abs() / w[j])
            .fold(1e-3, f64::max);
        let lambda = scale * rng.random_range(0.0..1.2);
        let agg = AggregatedQuadratic {
            m: 1,
            k: 1,
            h_bar: h.clone(),
            b: b.clone(),
            c,
            beta_bar: DVector::zeros(p),
            c_loss: 0.0,
        };
        let fit = solve_penalized(
            &agg,
            lambda,
            &w,
            &DVector::zeros(p),
            &SolverOptions::default(),
        )
        .expect("solver");
        let got = objective(&h, &b, c, lambda, &w, &fit.beta_hat);
        let want = enumeration_oracle(&h, &b, c, lambda, &w);
        worst = worst.max((got - want).abs());
        if !fit.converged || !kkt_holds(&h, &b, lambda, &w, &fit.beta_hat, 1e-8) {
            kkt_fail += 1;
        }
    }
    verdict(
        worst <= 1e-8 && kkt_fail == 0,
        format!("200 problems: max |objective gap| = {worst:.2e}, KKT failures = {kkt_fail}"),
    )
}

// ------------------------------------------------------------------ criterion 6

fn calculus_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_g = 0.0_f64;
    let mut worst_h = 0.0_f64;
    for family in [Family::Linear, Family::Logistic] {
        for _ in 0..100 {
            let p = rng.random_range(1..=6);
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
            let y = match family {
                Family::Linear => rng.random_range(-3.0..3.0),
                Family::Logistic => f64::from(rng.random_range(0..2u8)),
            };
            let z = Observation::new(y, &x);
            let g = family.gradient(&beta, &z).unwrap();
            let hm = family.hessian(&beta, &z).unwrap();
            let eps = 1e-5;
            for j in 0..p {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j] += eps;
                dn[j] -= eps;
                let fd =
                    (family.loss(&up, &z).unwrap() - family.loss(&dn, &z).unwrap()) / (2.0 * eps);
                worst_g = worst_g.max((fd - g[j]).abs() / g[j].abs().max(1.0));
                let gu = family.gradient(&up, &z).unwrap();
                let gd = family.gradient(&dn, &z).unwrap();
                for i in 0..p {
                    let fd = (gu[i] - gd[i]) / (2.0 * eps);
                    worst_h = worst_h.max((fd - hm[(i, j)]).abs() / hm[(i, j)].abs().max(1.0));
                }
            }
        }
    }
    verdict(
        worst_g <= 1e-6 && worst_h <= 1e-5,
        format!("max relative error: gradient {worst_g:.2e}, Hessian {worst_h:.2e}"),
    )
}

// ------------------------------------------------------------------ criterion 7

fn synthetic(family: Family, n: usize, seed: u64) -> Dataset {
    let beta0 = [3.0, 1.5, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut cfg = SimConfig::new(family, n, 0.25, 1.0);
    cfg.beta0 = beta0.to_vec();
    subbag_core::sim::generate_dataset(&cfg, seed)
}

fn mean_loss(family: Family, data: &Dataset, rows: &[usize], beta: &[f64]) -> f64 {
    rows.iter()
        .map(|&i| family.loss(beta, &data.observation(i)).unwrap())
        .sum::<f64>()
        / rows.len() as f64
}

fn lsa_fidelity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // linear: the subsample losses are exact quadratics
    let data = synthetic(Family::Linear, 4000, 70);
    let plan = SubbaggingPlan::explicit(4000, 300, 6, 71).unwrap();
    let summaries = run_plan(&data, &plan, Family::Linear, &RunOptions::default())
        .unwrap()
        .summaries;
    let agg = AggregatedQuadratic::merge(&summaries).unwrap();
    let draws: Vec<Vec<usize>> = (0..plan.m as u32)
        .map(|id| {
            let mut d = draw_subsample(plan.n, plan.k, plan.subsample_seed(id)).unwrap();
            d.sort_unstable();
            d
        })
        .collect();
    let mut worst_linear = 0.0_f64;
    for _ in 0..25 {
        let beta: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
        let exact = draws
            .iter()
            .map(|d| mean_loss(Family::Linear, &data, d, &beta))
            .sum::<f64>()
            / draws.len() as f64;
        let approx = 0.5 * agg.loss(&DVector::from_column_slice(&beta)).unwrap() + agg.c_loss;
        worst_linear = worst_linear.max((exact - approx).abs() / exact.abs().max(1.0));
    }

    // logistic: relative Taylor remainder around each subsample optimum
    let data = synthetic(Family::Logistic, 4000, 72);
    // a loose gradient tolerance leaves a first-order term that swamps the
    // remainder at small eps
    let tight = RunOptions {
        newton: NewtonOptions {
            tol: 1e-12,
            ..NewtonOptions::default()
        },
        ..RunOptions::default()
    };
    let summaries = run_plan(&data, &plan, Family::Logistic, &tight)
        .unwrap()
        .summaries;
    let u = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    let mut ratios = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        let mut r = 0.0;
        for (s, d) in summaries.iter().zip(&draws) {
            let beta = &s.beta_tilde + &u * eps;
            let base = mean_loss(Family::Logistic, &data, d, s.beta_tilde.as_slice());
            let exact = mean_loss(Family::Logistic, &data, d, beta.as_slice()) - base;
            let quad = 0.5 * eps * eps * u.dot(&(&s.hessian * &u));
            r += (exact - quad).abs() / (eps * eps);
        }
        ratios.push(r / summaries.len() as f64);
    }
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    verdict(
        worst_linear <= 1e-10 && decreasing,
        format!(
            "linear max rel. gap {worst_linear:.2e}; logistic remainder ratios {:.2e}, {:.2e}, {:.2e}",
            ratios[0], ratios[1], ratios[2]
        ),
    )
}

// ------------------------------------------------------------------ criterion 8

fn write_csv(path: &Path, data: &Dataset) {
    let mut w = BufWriter::new(std::fs::File::create(path).unwrap());
    let p = data.p();
    let header: Vec<String> = std::iter::once("y".to_string())
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect();
    writeln!(w, "{}", header.join(",")).unwrap();
    for i in 0..data.len() {
        let row: Vec<String> = data.row(i).iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "{},{}", data.y()[i], row.join(",")).unwrap();
    }
}

fn pipeline_equivalence() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&csv, &synthetic(Family::Logistic, 20_000, 80));
    let schema = CsvSchema {
        response: "y".into(),
        covariates: Covariates::AllOthers,
        categorical: vec![],
        intercept: false,
    };
    let mut cfg = RunConfig::new(Family::Logistic, schema);
    cfg.alpha = Some(1.0);
    cfg.seed = 81;

    let mut reports = Vec::new();
    for threads in [1, 8] {
        cfg.threads = threads;
        reports.push(cmd_fit(&cfg, &csv).unwrap());
    }
    let threads_equal = reports[0] == reports[1]
        && reports[0].json_lines().unwrap() == reports[1].json_lines().unwrap();

    cfg.threads = 0;
    let summaries = dir.path().join("all.sbag");
    cmd_fit_subsamples(&cfg, &csv, &summaries).unwrap();
    let two_phase = cmd_aggregate(
        std::slice::from_ref(&summaries),
        None,
        &AnalysisOptions::default(),
        0,
    )
    .unwrap();
    let composed_equal = two_phase == reports[0];

    // the same plan split across two processes' worth of files
    let m = reports[0].m as u32;
    let (a, b) = (dir.path().join("a.sbag"), dir.path().join("b.sbag"));
    cfg.count = Some(m / 2);
    cmd_fit_subsamples(&cfg, &csv, &a).unwrap();
    cfg.first_id = m / 2;
    cfg.count = None;
    cmd_fit_subsamples(&cfg, &csv, &b).unwrap();
    let sharded = cmd_aggregate(&[b, a], None, &AnalysisOptions::default(), 0).unwrap();
    let sharded_equal = sharded == reports[0];

    let bytes = std::fs::read(&summaries).unwrap();
    let decoded = SummaryFile::decode(&bytes).unwrap();
    let round_trip = decoded.encode().unwrap() == bytes;
    let mut corrupted = bytes.clone();
    corrupted[bytes.len() / 2] ^= 1;
    let crc_rejects = SummaryFile::decode(&corrupted).is_err();

    verdict(
        threads_equal && composed_equal && sharded_equal && round_trip && crc_rejects,
        format!(
            "threads 1 vs 8 identical: {threads_equal}; fit == fit-subsamples + aggregate: {composed_equal}; \
             sharded files: {sharded_equal}; round trip bit-exact: {round_trip}; CRC rejects corruption: {crc_rejects}"
        ),
    )
}

// ------------------------------------------------------------------ criterion 9

fn degenerate_plan() -> Verdict {
    let mut worst = 0.0_f64;
    let mut same_shape = true;
    for (family, seed) in [(Family::Logistic, 90), (Family::Linear, 91)] {
        let n = 5000;
        let data = synthetic(family, n, seed);
        let plan = SubbaggingPlan::explicit(n, n, 1, 92).unwrap();
        let summaries = run_plan(&data, &plan, family, &RunOptions::default())
            .unwrap()
            .summaries;
        let agg = AggregatedQuadratic::merge(&summaries).unwrap();
        let opts = PathOptions::default();
        let (_, sub) = regularization_path(&agg, plan.k, n, &opts).unwrap();
        let full = adaptive_lasso_full(&data, family, &NewtonOptions::default(), &opts).unwrap();
        let base = &full.path;
        same_shape &= sub.grid.len() == base.grid.len() && sub.selected == base.selected;
        for (x, y) in sub.grid.iter().zip(&base.grid) {
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
        }
        for (f, g) in sub.fits.iter().zip(&base.fits) {
            same_shape &= f.active_set == g.active_set && f.df == g.df;
            worst = worst.max((&f.beta_hat - &g.beta_hat).amax());
            let (a, b) = (f.sbic.unwrap(), g.sbic.unwrap());
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
            worst = worst.max((f.objective - g.objective).abs() / g.objective.abs().max(1.0));
        }
    }
    verdict(
        same_shape && worst <= 1e-12,
        format!("supports and selection agree: {same_shape}; max field difference {worst:.2e}"),
    )
}

// ----------------------------------------------------------------- criterion 10

// reaped with wait4 below to collect its resource usage
#[allow(clippy::zombie_processes)]
fn peak_rss_kib(mut cmd: Command) -> (i32, i64) {
    let child = cmd.spawn().expect("spawn");
    let pid = child.id() as libc::pid_t;
    let mut status = 0;
    // SAFETY: rusage is plain data and pid is our own child.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let r = unsafe { libc::wait4(pid, &mut status, 0, &mut usage) };
    assert_eq!(r, pid, "wait4 failed");
    let code = if libc::WIFEXITED(status) {
        libc::WEXITSTATUS(status)
    } else {
        -1
    };
    (code, usage.ru_maxrss)
}

fn memory_contract() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("big.csv");
    {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let beta0 = [3.0, 1.5, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut w = BufWriter::with_capacity(1 << 20, std::fs::File::create(&csv).unwrap());
        writeln!(w, "y,x1,x2,x3,x4,x5,x6,x7,x8").unwrap();
        let mut line = String::new();
        for _ in 0..1_000_000 {
            line.clear();
            let x: Vec<f64> = (0..8)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let eta: f64 = x.iter().zip(&beta0).map(|(a, b)| a * b).sum();
            let y = u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()));
            use std::fmt::Write as _;
            let _ = write!(line, "{y}");
            for v in &x {
                let _ = write!(line, ",{v:.5}");
            }
            writeln!(w, "{line}").unwrap();
        }
    }
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_subbag"));
    cmd.args([
        "fit",
        "--family",
        "logistic",
        "--response",
        "y",
        "--indexed",
        "--k",
        "1000",
        "--m",
        "100",
    ])
    .arg(&csv)
    .arg("--metrics-out")
    .arg(dir.path().join("m.jsonl"))
    .stdout(std::process::Stdio::null());
    let started = Instant::now();
    let (code, kib) = peak_rss_kib(cmd);
    let mib = kib as f64 / 1024.0;
    verdict(
        code == 0 && mib <= 64.0,
        format!(
            "indexed fit of 1e6 rows, k = 1000, m = 100: exit {code}, peak RSS {mib:.1} MiB in {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    // ignore harness arguments such as --test-threads
    let started = Instant::now();
    let mut results: Vec<(u8, &str, Verdict)> = Vec::new();
    let study = run_study();
    results.push((1, "selection consistency", selection_consistency(&study)));
    results.push((2, "variance inflation", variance_inflation(&study)));
    results.push((3, "coverage", coverage(&study)));
    results.push((4, "bias ordering", bias_ordering(&study)));
    results.push((5, "solver correctness", solver_correctness()));
    results.push((6, "calculus correctness", calculus_correctness()));
    results.push((7, "LSA fidelity", lsa_fidelity()));
    results.push((
        8,
        "pipeline determinism and equivalence",
        pipeline_equivalence(),
    ));
    results.push((9, "degenerate-plan equivalence", degenerate_plan()));
    results.push((10, "memory contract", memory_contract()));

    let mut failed = 0;
    for (id, name, v) in &results {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        println!("criterion {id:>2} {tag} {name}: {}", v.detail);
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.0}s)",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
