use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use landmark_surrogate::config::FileConfig;
use landmark_surrogate::data::{load_study, summarize, write_study, Schema};
use landmark_surrogate::estimators::{check_conditions, render_conditions, ConditionTolerances};
use landmark_surrogate::inference::{infer, render_report, CiSelection, InferenceConfig, VarianceMode};
use landmark_surrogate::kernel::{BandwidthSample, KernelSpec, Transform};
use landmark_surrogate::simulation::{
    generate_study, render_table, run_study, truth_oracle, Setting, SimulationConfig,
};
use landmark_surrogate::{Error, Result, StudyData};

/// Proportion of a treatment effect on a censored outcome explained by
/// landmark surrogate information.
#[derive(Parser)]
#[command(name = "landmark-surrogate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point estimates, perturbation standard errors and intervals for a CSV study.
    Estimate(EstimateArgs),
    /// Replication study under a built-in generator.
    Simulate(SimulateArgs),
    /// Empirical checks of the monotonicity and ordering conditions.
    Diagnose(DiagnoseArgs),
    /// Writes one synthetic study as CSV.
    Generate(GenerateArgs),
    /// Monte-Carlo population values of the estimands for a generator.
    Truth(TruthArgs),
}

#[derive(Args)]
struct StudyArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    /// TOML file; keys present there override flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "group")]
    group_col: String,
    #[arg(long, default_value = "time")]
    time_col: String,
    #[arg(long, default_value = "event")]
    event_col: String,
    #[arg(long, default_value = "s")]
    surrogate_col: String,
    /// Covariate columns (comma separated); default is every other column.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long, default_value = "A")]
    label_a: String,
    #[arg(long, default_value = "B")]
    label_b: String,
    /// Map the surrogate through exp() at ingestion (real-valued markers).
    #[arg(long)]
    exp_surrogate: bool,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Args)]
struct KernelArgs {
    /// Surrogate transformation: log, identity or reciprocal.
    #[arg(long, default_value = "log")]
    transform: Transform,
    /// Undersmoothing exponent in (0.05, 0.3).
    #[arg(long, default_value_t = 0.11)]
    c0: f64,
    /// Fixed bandwidth on the transformed scale.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Sample size in the reference rule: at-risk or full-arm.
    #[arg(long, default_value = "at-risk", value_parser = parse_bandwidth_sample)]
    bandwidth_sample: BandwidthSample,
}

#[derive(Args)]
struct InferenceArgs {
    /// Perturbation draws.
    #[arg(long = "D", default_value_t = 500)]
    draws: usize,
    /// Seed; drawn from the OS and recorded in the report when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// empirical or robust (median absolute deviation).
    #[arg(long, default_value = "empirical")]
    variance: VarianceMode,
    /// Interval types: normal, quantile, fieller or all (comma separated).
    #[arg(long, default_value = "all")]
    ci: CiSelection,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[command(flatten)]
    inference: InferenceArgs,
    /// Covariate columns for augmentation (comma separated).
    #[arg(long, value_delimiter = ',')]
    augment: Option<Vec<String>>,
    #[arg(long)]
    ratio_floor: Option<f64>,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print a text table to stdout.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// 1, 2, 2alt, null or dpp.
    #[arg(long)]
    setting: Setting,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Perturbation draws per replicate; 0 for point estimates only.
    #[arg(long = "D", default_value_t = 500)]
    draws: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "empirical")]
    variance: VarianceMode,
    /// Skip covariate augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Monte-Carlo size of the truth oracle.
    #[arg(long, default_value_t = 2_000_000)]
    truth_mc: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Surrogate grid (raw scale, comma separated); default is pooled quantiles.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.1)]
    tol_c1: f64,
    #[arg(long, default_value_t = 0.05)]
    tol_c2: f64,
    #[arg(long, default_value_t = 0.1)]
    tol_c3: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    setting: Setting,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long)]
    setting: Setting,
    #[arg(long, default_value_t = 10_000_000)]
    mc_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_bandwidth_sample(s: &str) -> std::result::Result<BandwidthSample, String> {
    match s {
        "at-risk" => Ok(BandwidthSample::AtRisk),
        "full-arm" => Ok(BandwidthSample::FullArm),
        other => Err(format!("unknown bandwidth sample `{other}`")),
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn kernel_spec(args: &KernelArgs, file: &FileConfig) -> KernelSpec {
    KernelSpec {
        transform: file.transform.unwrap_or(args.transform),
        c0: file.c0.unwrap_or(args.c0),
        bandwidth_override: file.bandwidth.or(args.bandwidth),
        bandwidth_sample: file.bandwidth_sample.unwrap_or(args.bandwidth_sample),
        ..KernelSpec::default()
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn load(args: &StudyArgs, file: &FileConfig) -> Result<StudyData> {
    let schema = file.schema.clone().unwrap_or_else(|| Schema {
        group: args.group_col.clone(),
        time: args.time_col.clone(),
        event: args.event_col.clone(),
        surrogate: args.surrogate_col.clone(),
        covariates: args.covariates.clone(),
        label_a: args.label_a.clone(),
        label_b: args.label_b.clone(),
        exp_surrogate: args.exp_surrogate,
    });
    let t0 = file
        .t0
        .or(args.t0)
        .ok_or_else(|| Error::InvalidParameter("landmark time --t0 is required".into()))?;
    let t = file
        .t
        .or(args.t)
        .ok_or_else(|| Error::InvalidParameter("horizon --t is required".into()))?;
    let reader = BufReader::new(File::open(&args.input)?);
    load_study(reader, &schema, t0, t)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

/// JSON goes to `--out` when given; otherwise to stdout unless a table was
/// requested, in which case stdout carries the table.
fn emit<T: Serialize>(value: &T, out: Option<&Path>, table: Option<String>) -> Result<()> {
    match (out, table) {
        (Some(p), table) => {
            write_json(value, Some(p))?;
            if let Some(t) = table {
                print!("{t}");
            }
        }
        (None, Some(t)) => print!("{t}"),
        (None, None) => write_json(value, None)?,
    }
    Ok(())
}

fn run_estimate(args: EstimateArgs) -> Result<()> {
    let file = load_config(args.study.config.as_deref())?;
    init_threads(file.threads.or(args.inference.threads))?;
    let data = load(&args.study, &file)?;
    let ci = match &file.ci {
        Some(s) => s.parse()?,
        None => args.inference.ci,
    };
    let config = InferenceConfig {
        kernel: kernel_spec(&args.study.kernel, &file),
        draws: file.draws.unwrap_or(args.inference.draws),
        seed: file
            .seed
            .or(args.inference.seed)
            .unwrap_or_else(rand::random),
        alpha: file.alpha.unwrap_or(args.inference.alpha),
        variance: file.variance.unwrap_or(args.inference.variance),
        ci,
        augment: file.augment.clone().or(args.augment),
        ratio_floor: file
            .ratio_floor
            .or(args.ratio_floor)
            .unwrap_or(landmark_surrogate::estimators::DEFAULT_RATIO_FLOOR),
    };
    let report = infer(&data, &config)?;
    if !args.table {
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
    }
    let table = args.table.then(|| render_report(&report));
    emit(&report, args.out.as_deref(), table)
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    init_threads(args.threads)?;
    let mut config = SimulationConfig::new(args.setting, args.n, args.reps);
    config.draws = args.draws;
    config.seed = args.seed.unwrap_or_else(rand::random);
    config.alpha = args.alpha;
    config.variance = args.variance;
    config.kernel = kernel_spec(&args.kernel, &FileConfig::default());
    config.augment = !args.no_augment;
    config.truth_mc_size = args.truth_mc;
    let report = run_study(&config)?;
    let table = args.table.then(|| render_table(&report));
    emit(&report, args.out.as_deref(), table)
}

#[derive(Serialize)]
struct DiagnoseOutput {
    summary: landmark_surrogate::data::StudySummary,
    conditions: landmark_surrogate::estimators::ConditionsReport,
}

fn run_diagnose(args: DiagnoseArgs) -> Result<()> {
    let file = load_config(args.study.config.as_deref())?;
    let data = load(&args.study, &file)?;
    let tol = ConditionTolerances {
        c1: args.tol_c1,
        c2: args.tol_c2,
        c3: args.tol_c3,
    };
    let spec = kernel_spec(&args.study.kernel, &file);
    let conditions = check_conditions(&data, &spec, args.grid.as_deref(), &tol)?;
    let table = args.table.then(|| render_conditions(&conditions));
    let output = DiagnoseOutput {
        summary: summarize(&data),
        conditions,
    };
    emit(&output, args.out.as_deref(), table)
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let data = generate_study(args.setting, args.n, args.seed, args.replicate)?;
    match args.out {
        Some(p) => write_study(&data, BufWriter::new(File::create(p)?)),
        None => write_study(&data, io::stdout().lock()),
    }
}

fn run_truth(args: TruthArgs) -> Result<()> {
    init_threads(args.threads)?;
    let report = truth_oracle(args.setting, args.mc_size, args.seed)?;
    write_json(&report, None)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => run_estimate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::Generate(a) => run_generate(a),
        Command::Truth(a) => run_truth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
