//! Command-line interface tying the estimators together: simulate random
//! network models, run single-recording Granger or Bayesian estimation, run
//! group-level hypothesis tests, and sweep the TPR/FPR benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dynet::bayes::{default_order, greedy_search, EmOptions};
use dynet::bench::{records_to_csv_writer, run_benchmark, BenchConfig};
use dynet::granger::{granger_matrix, select_order_aic, SignificanceTest};
use dynet::group::{run_study, EvidenceMode, StudyManifest, DEFAULT_POOL_SIZE};
use dynet::simgen::{random_network_model, SimConfig};
use dynet::{Error, Result, TimeSeriesDataset};

#[derive(Parser)]
#[command(
    name = "dynet",
    about = "Directed topology inference for linear dynamic networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random stable network model and simulate a recording.
    Simulate(SimulateArgs),
    /// Conditional Granger-causality analysis of one recording.
    Granger(GrangerArgs),
    /// Bayesian graph estimation of one recording by greedy search.
    Bayes(BayesArgs),
    /// Group-level Bayesian hypothesis test over a study manifest.
    GroupTest(GroupTestArgs),
    /// TPR/FPR benchmark sweep comparing both estimators.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// SimConfig JSON; defaults to a 6-node configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples to simulate.
    #[arg(long, default_value_t = 300)]
    samples: usize,
    /// Overrides the config's model seed; the recording uses seed + 1.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the model JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Where to write the recording CSV.
    #[arg(long)]
    data_out: PathBuf,
}

#[derive(Args)]
struct GrangerArgs {
    /// Recording CSV: one column per node, one row per sample.
    data: PathBuf,
    /// VAR model order; selected by AIC when omitted.
    #[arg(long)]
    order: Option<usize>,
    /// Cap for AIC order selection.
    #[arg(long, default_value_t = 10)]
    max_order: usize,
    /// Significance level for thresholding.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Benjamini-Hochberg FDR correction across the L(L-1) tests.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    fdr: bool,
    #[arg(long, value_enum, default_value_t = TestKind::F)]
    test: TestKind,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKind {
    F,
    Chi2,
}

#[derive(Args)]
struct BayesArgs {
    /// Recording CSV: one column per node, one row per sample.
    data: PathBuf,
    /// Model order; defaults to a schedule based on the data length.
    #[arg(long)]
    order: Option<usize>,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GroupTestArgs {
    /// Study manifest JSON; session CSV paths resolve relative to it.
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeKind::Capped)]
    mode: ModeKind,
    /// Candidate-pool cap in capped mode.
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pool_size: usize,
    /// Reuse hyperparameters fitted once under the full pool (capped mode).
    #[arg(long)]
    reuse_hyperparameters: bool,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the results table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeKind {
    Exact,
    Capped,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// BenchConfig JSON; defaults to the desk-scale sweep.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for the default configuration.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 50 models per cell instead of the desk-scale 20.
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the plot-ready table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidArgument(format!("{}: {e}", path.display()))
            })?;
            serde_json::from_str::<SimConfig>(&text).map_err(|e| {
                Error::InvalidArgument(format!("{}: {e}", path.display()))
            })?
        }
        None => SimConfig::new(6, 0),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let model = random_network_model(&config)?;
    let data = model.network.simulate(args.samples, config.seed.wrapping_add(1))?;
    data.to_csv_path(&args.data_out)?;
    if let Some(path) = &args.model_out {
        write_json(&model, Some(path))?;
    }
    Ok(())
}

fn run_granger(args: &GrangerArgs) -> Result<()> {
    let data = TimeSeriesDataset::from_csv_path(&args.data)?;
    let order = match args.order {
        Some(m) => m,
        None => select_order_aic(&data, args.max_order)?,
    };
    let test = match args.test {
        TestKind::F => SignificanceTest::FTest,
        TestKind::Chi2 => SignificanceTest::ChiSquared,
    };
    let result = granger_matrix(&data, order, test)?.thresholded(args.alpha, args.fdr);
    write_json(&result, args.output.as_deref())
}

fn run_bayes(args: &BayesArgs) -> Result<()> {
    let data = TimeSeriesDataset::from_csv_path(&args.data)?;
    let order = args.order.unwrap_or_else(|| default_order(data.sample_count()));
    let estimate = greedy_search(&data, order)?;
    write_json(&estimate, args.output.as_deref())
}

fn run_group_test(args: &GroupTestArgs) -> Result<()> {
    let manifest = StudyManifest::from_json_path(&args.manifest)?;
    let base = args
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mode = match args.mode {
        ModeKind::Exact => EvidenceMode::Exact,
        ModeKind::Capped => EvidenceMode::Capped {
            pool_size: args.pool_size,
            reuse_hyperparameters: args.reuse_hyperparameters,
        },
    };
    let report = run_study(&manifest, &base, mode, &EmOptions::default())?;
    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path)?;
        report.to_csv_writer(file)?;
    }
    write_json(&report, args.output.as_deref())
}

fn run_bench(args: &BenchmarkArgs) -> Result<()> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidArgument(format!("{}: {e}", path.display()))
            })?;
            serde_json::from_str::<BenchConfig>(&text).map_err(|e| {
                Error::InvalidArgument(format!("{}: {e}", path.display()))
            })?
        }
        None => BenchConfig::desk(args.seed),
    };
    if args.paper_scale {
        config.model_count = 50;
    }
    let records = run_benchmark(&config)?;
    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path)?;
        records_to_csv_writer(&records, file)?;
    }
    write_json(&records, args.output.as_deref())
}

#[derive(Serialize)]
struct ErrorReport {
    error: String,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Granger(args) => run_granger(args),
        Command::Bayes(args) => run_bayes(args),
        Command::GroupTest(args) => run_group_test(args),
        Command::Benchmark(args) => run_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report = ErrorReport {
                error: err.kind().to_string(),
                message: err.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&report).unwrap());
            ExitCode::FAILURE
        }
    }
}
