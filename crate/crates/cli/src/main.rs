//! `svi`: compile models, run stochastic variational inference with a chosen
//! gradient estimator, and tabulate the results.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nondiff_svi::benchmarks::{compile_program, Benchmark, BuildError, DEFAULT_DATA_SEED};
use nondiff_svi::metrics::{timing_table, variance_ratio_table, write_table};
use nondiff_svi::optimize::{write_trajectory, RunError};
use nondiff_svi::{run_svi, DataTable, EstimatorKind, Family, Model, RunConfig, RunSummary, SourceProgram};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "svi", version, about = "Variational inference for programs with if statements")]
struct Cli {
    /// Print errors to stderr as one JSON object per line.
    #[arg(long, global = true)]
    json_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, validate and compile a model; print its latent dimension and branch count.
    Check {
        model: PathBuf,
        /// Data table (CSV with header key,index,value).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run SVI on a model and write trajectory.csv and summary.json.
    Run {
        model: PathBuf,
        #[arg(long, value_parser = parse_estimator)]
        estimator: EstimatorKind,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
        /// Monte Carlo samples per gradient estimate.
        #[arg(long = "N", default_value_t = 1)]
        n: usize,
        /// Boundary samples for `ours` (defaults to N).
        #[arg(long = "M")]
        m: Option<usize>,
        /// Adam stepsize.
        #[arg(long, default_value_t = 0.001)]
        stepsize: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate data for a benchmark and run every estimator over a grid of N and stepsizes.
    Bench(BenchArgs),
    /// Build the variance-ratio and timing tables from run directories.
    Table {
        /// Directories searched recursively for summary.json files.
        #[arg(long = "in", num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Write table1.csv and table2.csv here instead of printing them.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_parser = parse_benchmark)]
    name: Benchmark,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    opts: RunOpts,
    /// Comma-separated sample counts.
    #[arg(long = "N", value_delimiter = ',', default_values_t = [1usize, 8, 16])]
    n: Vec<usize>,
    /// Comma-separated Adam stepsizes.
    #[arg(long, value_delimiter = ',', default_values_t = [0.001f64, 0.01])]
    stepsize: Vec<f64>,
    /// Comma-separated estimators.
    #[arg(long, value_delimiter = ',', value_parser = parse_estimator, default_value = "score,repar,ours")]
    estimators: Vec<EstimatorKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the synthetic data generator.
    #[arg(long, default_value_t = DEFAULT_DATA_SEED)]
    data_seed: u64,
    /// Give every estimator the same seed (common random numbers).
    #[arg(long)]
    crn: bool,
}

#[derive(Args, Debug, Clone)]
struct RunOpts {
    /// Adam iterations.
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    /// Iterations between ELBO and variance measurements.
    #[arg(long, default_value_t = 100)]
    eval_interval: usize,
    /// Estimator invocations per variance measurement.
    #[arg(long, default_value_t = 16)]
    variance_samples: usize,
    /// Samples per ELBO measurement.
    #[arg(long, default_value_t = 1000)]
    elbo_samples: usize,
    /// Variational family: mean-field or location-only.
    #[arg(long, default_value = "mean-field", value_parser = parse_family)]
    family: Family,
    /// Threads for the measurement invocations.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse()
}

fn parse_benchmark(s: &str) -> Result<Benchmark, String> {
    s.parse()
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse()
}

/// A failure with its exit code: 1 for model errors, 2 for everything at run time.
#[derive(Debug)]
enum Failure {
    Build(BuildError),
    Runtime { kind: &'static str, message: String },
}

impl Failure {
    fn runtime(kind: &'static str, message: impl std::fmt::Display) -> Self {
        Failure::Runtime {
            kind,
            message: message.to_string(),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Build(_) => 1,
            Failure::Runtime { .. } => 2,
        }
    }
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Self {
        Failure::Build(e)
    }
}

#[derive(Serialize)]
struct JsonError<'a> {
    kind: &'a str,
    message: String,
    file: Option<&'a str>,
    line: Option<u32>,
    col: Option<u32>,
    exit_code: u8,
}

fn report(failure: &Failure, json: bool) {
    if !json {
        match failure {
            Failure::Build(e) => eprintln!("{e}"),
            Failure::Runtime { message, .. } => eprintln!("error: {message}"),
        }
        return;
    }
    let obj = match failure {
        Failure::Build(e) => {
            let (line, col) = e.position();
            JsonError {
                kind: e.stage(),
                message: e.to_string(),
                file: Some(e.origin()),
                line: Some(line),
                col: Some(col),
                exit_code: failure.code(),
            }
        }
        Failure::Runtime { kind, message } => JsonError {
            kind,
            message: message.clone(),
            file: None,
            line: None,
            col: None,
            exit_code: failure.code(),
        },
    };
    eprintln!("{}", serde_json::to_string(&obj).expect("error serializes"));
}

fn load_data(path: Option<&Path>) -> Result<DataTable, Failure> {
    match path {
        Some(p) => DataTable::from_path(p).map_err(|e| Failure::runtime("data", format!("{}: {e}", p.display()))),
        None => Ok(DataTable::new()),
    }
}

fn load_model(path: &Path, data: &DataTable) -> Result<Model, Failure> {
    let program =
        SourceProgram::from_file(path).map_err(|e| Failure::runtime("io", format!("{}: {e}", path.display())))?;
    Ok(compile_program(&program, data)?)
}

fn model_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned())
}

fn config(opts: &RunOpts, estimator: EstimatorKind, n: usize, m: Option<usize>, stepsize: f64, seed: u64) -> RunConfig {
    RunConfig {
        estimator,
        n_samples: n,
        m_samples: m,
        iterations: opts.iters,
        stepsize,
        seed,
        eval_interval: opts.eval_interval,
        variance_samples: opts.variance_samples,
        elbo_samples: opts.elbo_samples,
        family: opts.family,
        workers: opts.workers,
        ..RunConfig::default()
    }
}

/// Runs one configuration and writes its artifacts into `dir`. Aborted runs
/// still write what they have before failing.
fn run_one(name: &str, model: &Model, cfg: &RunConfig, dir: &Path) -> Result<RunSummary, Failure> {
    let io = |e: std::io::Error| Failure::runtime("io", format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let result = run_svi(model, cfg, None);
    let records = match &result {
        Ok(out) => &out.records,
        Err(RunError::Aborted { records, .. }) => records,
        Err(e @ RunError::Config(_)) => return Err(Failure::runtime("config", e)),
    };
    let file = fs::File::create(dir.join("trajectory.csv")).map_err(io)?;
    write_trajectory(std::io::BufWriter::new(file), records, cfg).map_err(|e| Failure::runtime("io", e))?;
    let summary = RunSummary::from_result(name, model, cfg, &result).expect("configuration was valid");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(dir.join("summary.json"), json + "\n").map_err(io)?;
    if let Err(e) = result {
        return Err(Failure::runtime("aborted", e));
    }
    Ok(summary)
}

fn check(model: &Path, data: Option<&Path>) -> Result<(), Failure> {
    let data = load_data(data)?;
    let m = load_model(model, &data)?;
    println!("n={} L={}", m.dim(), m.branch_count());
    Ok(())
}

/// Seed for one estimator of a benchmark grid: shared under common random
/// numbers, otherwise a distinct stream per estimator.
fn estimator_seed(seed: u64, kind: EstimatorKind, crn: bool) -> u64 {
    if crn {
        return seed;
    }
    let offset = match kind {
        EstimatorKind::Score => 0x5c0e,
        EstimatorKind::Repar => 0x5e9a,
        EstimatorKind::Ours => 0x0b55,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(offset)
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    let name = args.name;
    let root = args.out.join(name.name());
    let io = |e: std::io::Error| Failure::runtime("io", format!("{}: {e}", root.display()));
    fs::create_dir_all(&root).map_err(io)?;
    let data = name.generate_data(args.data_seed);
    data.to_path(root.join("data.csv")).map_err(|e| Failure::runtime("io", e))?;
    fs::write(root.join(name.file_name()), name.source()).map_err(io)?;
    let model: Model = name.compile(&data)?;
    for &stepsize in &args.stepsize {
        for &n in &args.n {
            for &kind in &args.estimators {
                let seed = estimator_seed(args.seed, kind, args.crn);
                let cfg = config(&args.opts, kind, n, None, stepsize, seed);
                cfg.validate().map_err(|e| Failure::runtime("config", e))?;
                let dir = root.join(format!("{kind}_N{n}_step{stepsize}"));
                let s = run_one(name.name(), &model, &cfg, &dir)?;
                println!(
                    "{name} {kind} N={n} stepsize={stepsize}: final smoothed ELBO {} mean Var_cmp {} ({:.4} ms/iter)",
                    fmt_opt(s.final_smoothed_elbo),
                    fmt_opt(s.mean_var_cmp),
                    s.mean_iter_ms
                );
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

fn collect_summaries(dir: &Path, into: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_summaries(&path, into)?;
        } else if path.file_name().is_some_and(|f| f == "summary.json") {
            into.push(path);
        }
    }
    Ok(())
}

fn table(inputs: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let mut paths = Vec::new();
    for dir in inputs {
        collect_summaries(dir, &mut paths).map_err(|e| Failure::runtime("io", format!("{}: {e}", dir.display())))?;
    }
    let mut runs = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| Failure::runtime("io", format!("{}: {e}", p.display())))?;
        let summary: RunSummary =
            serde_json::from_str(&text).map_err(|e| Failure::runtime("summary", format!("{}: {e}", p.display())))?;
        runs.push(summary);
    }
    if runs.is_empty() {
        return Err(Failure::runtime("table", "no summary.json found"));
    }
    let ratios = variance_ratio_table(&runs).map_err(|e| Failure::runtime("table", e))?;
    let timings = timing_table(&runs);
    let csv_err = |e: nondiff_svi::metrics::CsvError| Failure::runtime("io", e);
    match out {
        Some(dir) => {
            let io = |e: std::io::Error| Failure::runtime("io", format!("{}: {e}", dir.display()));
            fs::create_dir_all(dir).map_err(io)?;
            write_table(fs::File::create(dir.join("table1.csv")).map_err(io)?, &ratios).map_err(csv_err)?;
            write_table(fs::File::create(dir.join("table2.csv")).map_err(io)?, &timings).map_err(csv_err)?;
        }
        None => {
            let stdout = std::io::stdout();
            write_table(stdout.lock(), &ratios).map_err(csv_err)?;
            println!();
            write_table(stdout.lock(), &timings).map_err(csv_err)?;
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Check { model, data } => check(&model, data.as_deref()),
        Command::Run {
            model,
            estimator,
            data,
            out,
            opts,
            n,
            m,
            stepsize,
            seed,
        } => {
            let data = load_data(data.as_deref())?;
            let compiled = load_model(&model, &data)?;
            let cfg = config(&opts, estimator, n, m, stepsize, seed);
            cfg.validate().map_err(|e| Failure::runtime("config", e))?;
            let s = run_one(&model_name(&model), &compiled, &cfg, &out)?;
            println!(
                "{} {}: final ELBO {} mean Var_cmp {} mean Var_nrm {} ({:.4} ms/iter)",
                s.model,
                s.estimator,
                fmt_opt(s.final_elbo),
                fmt_opt(s.mean_var_cmp),
                fmt_opt(s.mean_var_nrm),
                s.mean_iter_ms
            );
            Ok(())
        }
        Command::Bench(args) => bench(&args),
        Command::Table { input, out } => table(&input, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json_errors;
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f, json);
            ExitCode::from(f.code())
        }
    }
}
