use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use subbag_core::commands::{
    cmd_aggregate, cmd_baseline, cmd_fit, cmd_fit_subsamples, cmd_simulate, AnalysisOptions,
    RunConfig, SimulateConfig,
};
use subbag_core::csv_input::{Covariates, CsvSchema, StorageMode};
use subbag_core::report::{render_simulation, simulation_json_lines};
use subbag_core::subsample::FailurePolicy;
use subbag_core::{Error, Family, Result};

#[derive(Parser)]
#[command(
    name = "subbag",
    version,
    about = "Subbagging adaptive LASSO for large regression data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit subsamples, aggregate, select and report in one run.
    Fit(FitArgs),
    /// Fit subsamples and write their summaries to a file.
    FitSubsamples(FitSubsamplesArgs),
    /// Merge summary files, select and report.
    Aggregate(AggregateArgs),
    /// Run the replication study and print metric tables.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Linear,
    Logistic,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Linear => Family::Linear,
            FamilyArg::Logistic => Family::Logistic,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    data: PathBuf,
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    response: String,
    /// Comma-separated covariate columns; all other columns when omitted.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Comma-separated columns to treat as categorical.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// Add an unpenalized intercept.
    #[arg(long)]
    intercept: bool,
    /// Keep only a row-offset index in memory and read rows on demand.
    #[arg(long)]
    indexed: bool,
    /// Subsample size exponent: k = floor(N^(1/2 + delta)). Default 0.25.
    #[arg(long, conflicts_with = "k")]
    delta: Option<f64>,
    /// Explicit subsample size.
    #[arg(long)]
    k: Option<usize>,
    /// Subsampling volume: m = floor(alpha N / k). Default 0.5.
    #[arg(long, conflicts_with = "m")]
    alpha: Option<f64>,
    /// Explicit number of subsamples.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0: all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Skip subsamples that fail to fit instead of aborting.
    #[arg(long)]
    skip_failures: bool,
}

#[derive(Args)]
struct AnalysisArgs {
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Number of lambda values.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Confidence level of the reported intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

impl AnalysisArgs {
    fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            gamma: self.gamma,
            n_grid: self.grid,
            level: self.level,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Write the formatted report here as well as to stdout.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Write line-delimited JSON records here.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Also fit the full-sample adaptive LASSO for comparison.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct FitSubsamplesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    summaries_out: PathBuf,
    /// First subsample id to fit, for splitting a plan across processes.
    #[arg(long, default_value_t = 0)]
    first_id: u32,
    /// Number of subsample ids to fit from `--first-id`.
    #[arg(long)]
    count: Option<u32>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Summary files written by fit-subsamples.
    #[arg(long = "summaries-in", required = true, num_args = 1..)]
    summaries_in: Vec<PathBuf>,
    /// Row count of the full data; read from the metadata file when omitted.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "logistic")]
    family: FamilyArg,
    /// Paper-scale grid: N in {500000, 1000000}, delta in {1/4, 1/3}, 1000 reps.
    #[arg(long)]
    paper_scale: bool,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Skip the full-sample comparison.
    #[arg(long)]
    no_baseline: bool,
    #[arg(long)]
    skip_failures: bool,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[command(flatten)]
    output: OutputArgs,
}

fn run_config(d: &DataArgs, analysis: Option<&AnalysisArgs>) -> RunConfig {
    let schema = CsvSchema {
        response: d.response.clone(),
        covariates: if d.covariates.is_empty() {
            Covariates::AllOthers
        } else {
            Covariates::Named(d.covariates.clone())
        },
        categorical: d.categorical.clone(),
        intercept: d.intercept,
    };
    let mut cfg = RunConfig::new(d.family.into(), schema);
    cfg.delta = d.delta;
    cfg.k = d.k;
    cfg.alpha = d.alpha;
    cfg.m = d.m;
    cfg.seed = d.seed;
    cfg.threads = d.threads;
    cfg.storage = if d.indexed {
        StorageMode::Indexed
    } else {
        StorageMode::InMemory
    };
    if d.skip_failures {
        cfg.policy = FailurePolicy::SkipAndReport;
    }
    if let Some(a) = analysis {
        cfg.gamma = a.gamma;
        cfg.n_grid = a.grid;
        cfg.level = a.level;
    }
    cfg
}

fn emit(text: &str, json: &str, out: &OutputArgs) -> Result<()> {
    print!("{text}");
    if let Some(p) = &out.report_out {
        fs::write(p, text)?;
    }
    if let Some(p) = &out.metrics_out {
        fs::write(p, json)?;
    }
    Ok(())
}

fn fit(args: &FitArgs) -> Result<()> {
    let cfg = run_config(&args.data, Some(&args.analysis));
    let report = cmd_fit(&cfg, &args.data.data)?;
    let mut text = report.render_text();
    let mut json = report.json_lines()?;
    if args.baseline {
        let base = cmd_baseline(&cfg, &args.data.data)?;
        text.push_str("\n\nFull-sample comparison\n\n");
        text.push_str(&base.render_text());
        for line in base.json_lines()?.lines() {
            let mut v: serde_json::Value = serde_json::from_str(line)?;
            v["estimator"] = "full_sample".into();
            json.push_str(&serde_json::to_string(&v)?);
            json.push('\n');
        }
    }
    emit(&text, &json, &args.output)
}

fn fit_subsamples(args: &FitSubsamplesArgs) -> Result<()> {
    let mut cfg = run_config(&args.data, None);
    cfg.first_id = args.first_id;
    cfg.count = args.count;
    let run = cmd_fit_subsamples(&cfg, &args.data.data, &args.summaries_out)?;
    println!(
        "wrote {} summaries (p = {}, k = {}) to {}",
        run.file.summaries.len(),
        run.file.p,
        run.file.k,
        args.summaries_out.display()
    );
    for (id, e) in &run.failures {
        eprintln!("skipped subsample {id}: {e}");
    }
    Ok(())
}

fn aggregate(args: &AggregateArgs) -> Result<()> {
    let report = cmd_aggregate(
        &args.summaries_in,
        args.n,
        &args.analysis.options(),
        args.threads,
    )?;
    emit(&report.render_text(), &report.json_lines()?, &args.output)
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let family = args.family.into();
    let mut cfg = if args.paper_scale {
        SimulateConfig::paper(family)
    } else {
        SimulateConfig::desk(family)
    };
    if !args.n.is_empty() {
        cfg.ns = args.n.clone();
    }
    if !args.delta.is_empty() {
        cfg.deltas = args.delta.clone();
    }
    if !args.alpha.is_empty() {
        cfg.alphas = args.alpha.clone();
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.gamma = args.gamma;
    cfg.n_grid = args.grid;
    cfg.baseline = !args.no_baseline;
    cfg.skip_failures = args.skip_failures;
    cfg.threads = args.threads;
    let reports = cmd_simulate(&cfg)?;
    emit(
        &render_simulation(&reports),
        &simulation_json_lines(&reports)?,
        &args.output,
    )
}

fn check_output_dir(p: &Option<PathBuf>) -> Result<()> {
    if let Some(dir) = p.as_deref().and_then(Path::parent) {
        if !dir.as_os_str().is_empty() && !dir.is_dir() {
            return Err(Error::Config(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => {
            check_output_dir(&a.output.report_out)?;
            check_output_dir(&a.output.metrics_out)?;
            fit(a)
        }
        Command::FitSubsamples(a) => {
            check_output_dir(&Some(a.summaries_out.clone()))?;
            fit_subsamples(a)
        }
        Command::Aggregate(a) => {
            check_output_dir(&a.output.report_out)?;
            check_output_dir(&a.output.metrics_out)?;
            aggregate(a)
        }
        Command::Simulate(a) => {
            check_output_dir(&a.output.report_out)?;
            check_output_dir(&a.output.metrics_out)?;
            simulate(a)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
