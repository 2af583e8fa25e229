//! `rwb`: robust Wasserstein barycenters from the command line.

mod settings;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rwb::coreset::{coreset_around, CoresetParams};
use rwb::free::WeightUpdateSet;
use rwb::measures::{dataset_to_json, load_dataset, load_measure, measure_to_json};
use rwb::synth::{csv_string, ReportRow};
use rwb::{
    contaminate, evaluate, gen_gaussian_dataset, robust_distance, run_bench, solve_fixed_awb,
    solve_fixed_awb_exact, solve_free_rwb, BenchConfig, ContaminationSpec, DiscreteMeasure,
    FixedProblem, FreeConfig, OutlierBudget, SolveMode,
};

use settings::Settings;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(rwb::Error),
}

impl From<rwb::Error> for CliError {
    fn from(e: rwb::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(rwb::Error::Io(e))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn class(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "input",
            CliError::Core(e) => e.class(),
        }
    }

    fn exit_code(&self) -> i32 {
        match self.class() {
            "convergence" | "capacity" => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "rwb", version, about = "Robust Wasserstein barycenters of discrete measures")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for per-measure solves (default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with default values for any flag; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Silence progress lines on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic Gaussian-cluster dataset.
    Gen(GenArgs),
    /// Add Gaussian outlier mass and random shifts to a dataset.
    Contaminate(ContaminateArgs),
    /// Robust (or plain, with zero budgets) Wasserstein distance between two measures.
    Distance(DistanceArgs),
    /// Fixed-support robust barycenter.
    FixedBary(FixedArgs),
    /// Free-support robust barycenter.
    FreeBary(FreeArgs),
    /// Layered coreset of a dataset around an anchor measure.
    Coreset(CoresetArgs),
    /// Evaluate a barycenter against a reference on clean data.
    Eval(EvalArgs),
    /// Full pipeline: clean reference, contamination, robust and plain solves, CSV report.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Standard deviation of atoms around their cluster center.
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    noise_mean: Option<f64>,
    /// Defaults to the magnitude of the noise mean.
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    shift_count: Option<usize>,
    #[arg(long)]
    shift_std: Option<f64>,
}

#[derive(Args, Debug)]
struct ContaminateArgs {
    dataset: PathBuf,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DistanceArgs {
    source: PathBuf,
    target: PathBuf,
    #[arg(long)]
    zeta_mu: Option<f64>,
    #[arg(long)]
    zeta_nu: Option<f64>,
    #[arg(long)]
    z: Option<f64>,
    /// Use entropic OT with this additive error instead of the exact solver.
    #[arg(long)]
    entropic: Option<f64>,
}

#[derive(Args, Debug)]
struct FixedArgs {
    dataset: PathBuf,
    /// Measure file whose points form the barycenter support.
    #[arg(long)]
    support: PathBuf,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    z: Option<f64>,
    /// Solve the LP exactly (small instances only).
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    ot_epsilon: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightsOn {
    Coreset,
    Full,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long)]
    z: Option<f64>,
    /// Coreset accuracy.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Per-layer coreset sample budget.
    #[arg(long)]
    gamma: Option<usize>,
    /// Candidate supports tried by the initialization.
    #[arg(long)]
    t_init: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    ot_epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FreeArgs {
    dataset: PathBuf,
    #[arg(long)]
    zeta: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Measure set for the weight update.
    #[arg(long, value_enum)]
    weights_on: Option<WeightsOn>,
    /// Write the per-step trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Include wall-clock times in the trace.
    #[arg(long)]
    timing: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CoresetArgs {
    dataset: PathBuf,
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    z: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Clean dataset the cost is measured on.
    clean: PathBuf,
    #[arg(long)]
    barycenter: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    z: Option<f64>,
    /// Label for the report row.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    noise_mean: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Runtime in seconds to copy into the report.
    #[arg(long)]
    runtime: Option<f64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Fill in the runtime_s column (makes output time-dependent).
    #[arg(long)]
    timing: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

struct Output {
    json: bool,
}

impl Output {
    fn write_artifact(&self, out: Option<&Path>, text: &str) -> CliResult<()> {
        if let Some(path) = out {
            std::fs::write(path, text)?;
        }
        Ok(())
    }

    fn print(&self, text: &str) -> CliResult<()> {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(text.as_bytes())?;
        if !text.ends_with('\n') {
            stdout.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Write the artifact to `out` (or stdout) and report `summary`.
    fn emit(&self, out: Option<&Path>, artifact: &str, key: &str, mut summary: Value) -> CliResult<()> {
        self.write_artifact(out, artifact)?;
        match (out, self.json) {
            (Some(path), true) => {
                summary["written"] = json!(path.display().to_string());
                self.print(&summary.to_string())
            }
            (Some(path), false) => self.print(&format!("wrote {}", path.display())),
            (None, true) => {
                summary[key] = serde_json::from_str(artifact).unwrap_or(Value::String(artifact.into()));
                self.print(&summary.to_string())
            }
            (None, false) => self.print(artifact),
        }
    }
}

fn cmd_gen(args: GenArgs, s: &Settings, out: &Output) -> CliResult<()> {
    let m = s.get(args.m, "m", 100)?;
    let n = s.get(args.n, "n", 8)?;
    let d = s.get(args.d, "d", 2)?;
    let spread = s.get(args.spread, "spread", 0.3)?;
    let seed = s.required(args.seed, "seed")?;
    let set = gen_gaussian_dataset(m, n, d, spread, seed)?;
    let summary = json!({"measures": set.len(), "atoms": n, "dim": d});
    out.emit(s.optional(args.out, "out")?.as_deref(), &dataset_to_json(&set), "dataset", summary)
}

fn contamination(noise: &NoiseArgs, s: &Settings, seed: u64, zeta_default: f64, mean_default: f64) -> CliResult<ContaminationSpec> {
    let noise_mean = s.get(noise.noise_mean, "noise-mean", mean_default)?;
    Ok(ContaminationSpec {
        zeta: s.get(noise.zeta, "zeta", zeta_default)?,
        noise_mean,
        noise_std: s.get(noise.noise_std, "noise-std", noise_mean.abs())?,
        shift_count: s.get(noise.shift_count, "shift-count", 0)?,
        shift_std: s.get(noise.shift_std, "shift-std", 0.0)?,
        seed,
    })
}

fn cmd_contaminate(args: ContaminateArgs, s: &Settings, out: &Output) -> CliResult<()> {
    let seed = s.required(args.seed, "seed")?;
    let spec = contamination(&args.noise, s, seed, 0.0, 0.0)?;
    let set = load_dataset(&args.dataset)?;
    let result = contaminate(&set, &spec)?;
    let summary = json!({"measures": result.len(), "zeta": spec.zeta});
    out.emit(s.optional(args.out, "out")?.as_deref(), &dataset_to_json(&result), "dataset", summary)
}

fn cmd_distance(args: DistanceArgs, s: &Settings, out: &Output) -> CliResult<()> {
    let budget = OutlierBudget::new(s.get(args.zeta_mu, "zeta-mu", 0.0)?, s.get(args.zeta_nu, "zeta-nu", 0.0)?)?;
    let z = s.get(args.z, "z", 2.0)?;
    let mode = match s.optional(args.entropic, "entropic")? {
        Some(additive_error) => SolveMode::Entropic { additive_error },
        None => SolveMode::Exact,
    };
    let mu = load_measure(&args.source)?;
    let nu = load_measure(&args.target)?;
    let solution = robust_distance(&mu, &nu, budget, z, mode)?;
    let distance = solution.value.max(0.0).powf(1.0 / z);
    if out.json {
        out.print(
            &json!({
                "distance": distance,
                "cost": solution.value,
                "z": z,
                "a_out": solution.a_out,
                "b_out": solution.b_out,
                "plan": solution.plan.to_rows(),
            })
            .to_string(),
        )
    } else {
        out.print(&format!("{distance}"))
    }
}

fn cmd_fixed(args: FixedArgs, s: &Settings, out: &Output) -> CliResult<()> {
    let zeta = s.get(args.zeta, "zeta", 0.0)?;
    let z = s.get(args.z, "z", 2.0)?;
    let exact = s.switch(args.exact, "exact")?;
    let eps = s.get(args.ot_epsilon, "ot-epsilon", 1e-3)?;
    let set = load_dataset(&args.dataset)?;
    let support = load_measure(&args.support)?.locations().to_vec();
    let problem = FixedProblem::new(set, support.clone(), zeta, z)?;
    let solution = if exact {
        solve_fixed_awb_exact(&problem)?
    } else {
        solve_fixed_awb(&problem, eps)?
    };
    let nu = solution.barycenter(&support)?;
    let summary = json!({"value": solution.value});
    out.emit(s.optional(args.out, "out")?.as_deref(), &measure_to_json(&nu), "barycenter", summary)
}

fn free_config(solver: &SolverArgs, zeta: f64, s: &Settings) -> CliResult<FreeConfig> {
    let seed = s.required(solver.seed, "seed")?;
    let defaults = FreeConfig::new(2.0, zeta, seed);
    Ok(FreeConfig {
        z: s.get(solver.z, "z", defaults.z)?,
        epsilon: s.get(solver.epsilon, "epsilon", defaults.epsilon)?,
        gamma: s.get(solver.gamma, "gamma", defaults.gamma)?,
        t_init: s.get(solver.t_init, "t-init", defaults.t_init)?,
        iterations: s.get(solver.iterations, "iterations", defaults.iterations)?,
        ot_epsilon: s.get(solver.ot_epsilon, "ot-epsilon", defaults.ot_epsilon)?,
        ..defaults
    })
}

fn cmd_free(args: FreeArgs, s: &Settings, out: &Output) -> CliResult<()> {
    let zeta = s.get(args.zeta, "zeta", 0.0)?;
    let mut config = free_config(&args.solver, zeta, s)?;
    let weights_on = match args.weights_on {
        Some(w) => w,
        None => match s.optional::<String>(None, "weights-on")?.as_deref() {
            None | Some("coreset") => WeightsOn::Coreset,
            Some("full") => WeightsOn::Full,
            Some(other) => return Err(CliError::Usage(format!("unknown weights-on value {other}"))),
        },
    };
    config.weight_update = match weights_on {
        WeightsOn::Coreset => WeightUpdateSet::Coreset,
        WeightsOn::Full => WeightUpdateSet::Full,
    };
    config.validate()?;
    let timing = s.switch(args.timing, "timing")?;
    let trace_path = s.optional(args.trace, "trace")?;
    let set = load_dataset(&args.dataset)?;

    let result = solve_free_rwb(&set, &config)?;
    if let Some(path) = trace_path {
        std::fs::write(path, result.trace.to_json_lines(timing))?;
    }
    let summary = json!({
        "objective": result.objective,
        "rebuilds": result.trace.rebuilds,
        "steps": result.trace.records.len(),
    });
    out.emit(
        s.optional(args.out, "out")?.as_deref(),
        &measure_to_json(&result.barycenter),
        "barycenter",
        summary,
    )
}

fn cmd_coreset(args: CoresetArgs, s: &Settings, out: &Output) -> CliResult<()> {
    let params = CoresetParams {
        epsilon: s.get(args.epsilon, "epsilon", 0.2)?,
        gamma: s.get(args.gamma, "gamma", 200)?,
        zeta: s.get(args.zeta, "zeta", 0.0)?,
        z: s.get(args.z, "z", 2.0)?,
    };
    let seed = s.required(args.seed, "seed")?;
    if !(params.epsilon > 0.0 && params.epsilon < 1.0) || params.gamma == 0 {
        return Err(CliError::Usage("epsilon must lie in (0, 1) and gamma must be at least 1".into()));
    }
    let set = load_dataset(&args.dataset)?;
    let anchor = load_measure(&args.anchor)?;
    let result = coreset_around(&set, &anchor, params, seed)?;
    let summary = json!({"size": result.len(), "source_size": set.len()});
    out.emit(s.optional(args.out, "out")?.as_deref(), &result.to_json(), "coreset", summary)
}

fn cmd_eval(args: EvalArgs, s: &Settings, out: &Output) -> CliResult<()> {
    let z = s.get(args.z, "z", 2.0)?;
    let clean = load_dataset(&args.clean)?;
    let nu: DiscreteMeasure = load_measure(&args.barycenter)?;
    let reference = load_measure(&args.reference)?;
    let runtime = s.optional(args.runtime, "runtime")?;
    let report = evaluate(&clean, &nu, &reference, z, runtime)?;
    let row = ReportRow {
        method: s.get(args.method, "method", "unnamed".to_string())?,
        zeta: s.get(args.zeta, "zeta", 0.0)?,
        noise_mean: s.get(args.noise_mean, "noise-mean", 0.0)?,
        noise_std: s.get(args.noise_std, "noise-std", 0.0)?,
        runtime_s: report.runtime_s,
        wd: report.wd,
        cost: report.cost,
    };
    if out.json {
        out.print(&serde_json::to_string(&row).expect("row serializes"))
    } else {
        out.print(&csv_string(&[row])?)
    }
}

fn cmd_bench(args: BenchArgs, s: &Settings, out: &Output) -> CliResult<()> {
    let defaults = BenchConfig::default();
    let seed = s.required(args.solver.seed, "seed")?;
    let noise = contamination(&args.noise, s, seed, defaults.zeta, defaults.noise_mean)?;
    let config = BenchConfig {
        m: s.get(args.m, "m", defaults.m)?,
        n: s.get(args.n, "n", defaults.n)?,
        d: s.get(args.d, "d", defaults.d)?,
        spread: s.get(args.spread, "spread", defaults.spread)?,
        zeta: noise.zeta,
        noise_mean: noise.noise_mean,
        noise_std: noise.noise_std,
        shift_count: noise.shift_count,
        shift_std: noise.shift_std,
        z: s.get(args.solver.z, "z", defaults.z)?,
        epsilon: s.get(args.solver.epsilon, "epsilon", defaults.epsilon)?,
        gamma: s.get(args.solver.gamma, "gamma", defaults.gamma)?,
        t_init: s.get(args.solver.t_init, "t-init", defaults.t_init)?,
        iterations: s.get(args.solver.iterations, "iterations", defaults.iterations)?,
        ot_epsilon: s.get(args.solver.ot_epsilon, "ot-epsilon", defaults.ot_epsilon)?,
        seed,
        timing: s.switch(args.timing, "timing")?,
    };
    config.validate()?;
    let out_path = s.optional(args.out, "out")?;
    let started = Instant::now();
    let report = run_bench(&config)?;
    log::info!("bench finished in {:.1}s", started.elapsed().as_secs_f64());
    let csv = csv_string(&report.rows)?;
    if out.json {
        out.write_artifact(out_path.as_deref(), &csv)?;
        let mut summary = json!({ "rows": report.rows });
        if let Some(path) = &out_path {
            summary["written"] = json!(path.display().to_string());
        }
        out.print(&summary.to_string())
    } else {
        out.emit(out_path.as_deref(), &csv, "csv", Value::Null)
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let threads = settings.optional(cli.threads, "threads")?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let out = Output { json: cli.json };
    match cli.command {
        Command::Gen(a) => cmd_gen(a, &settings, &out),
        Command::Contaminate(a) => cmd_contaminate(a, &settings, &out),
        Command::Distance(a) => cmd_distance(a, &settings, &out),
        Command::FixedBary(a) => cmd_fixed(a, &settings, &out),
        Command::FreeBary(a) => cmd_free(a, &settings, &out),
        Command::Coreset(a) => cmd_coreset(a, &settings, &out),
        Command::Eval(a) => cmd_eval(a, &settings, &out),
        Command::Bench(a) => cmd_bench(a, &settings, &out),
    }
}

fn report_error(err: &CliError) {
    let line = json!({"error": err.class(), "message": err.to_string()});
    eprintln!("{line}");
}

/// Run the command line and return the process exit code.
fn run(argv: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            report_error(&CliError::Usage(e.kind().to_string()));
            return 1;
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run(std::env::args_os()));
}
