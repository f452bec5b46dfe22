//! Command-line front end: solve models, run safe solvers, evaluate bounds and
//! run the grid benchmark.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use safe_mdp::benchmark::{run_experiment, BenchmarkConfig, ExperimentResult};
use safe_mdp::bounds::bound_suite;
use safe_mdp::document::{ErrorSource, ModelDocument, PolicyDocument};
use safe_mdp::mdp::{return_of, solve_optimal_exact, Policy};
use safe_mdp::safe::{
    solve_augmented_rmdp, solve_ramdp, solve_rbc, solve_rmdp_safe, Method, RbcOptions, SafePolicy,
    SafePolicyResult, SubgradientSchedule,
};
use safe_mdp::Error;

/// Failure classes, mapped to process exit codes.
#[derive(Debug)]
enum Failure {
    /// Bad input or contradictory flags.
    Usage(String),
    /// A numerical invariant broke inside a solver.
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => Failure::Internal(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "safe-mdp", version, about = "Safe policy improvement for tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the optimal policy of a model and its return.
    Solve { model: PathBuf },
    /// Run a safe solver against a baseline policy.
    Safe(SafeArgs),
    /// Run the grid benchmark and write a CSV plus a JSON sidecar.
    Benchmark {
        /// Benchmark configuration (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every performance bound of a simulator against a true model.
    Bounds {
        true_model: PathBuf,
        simulator: PathBuf,
        /// Baseline policy.
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        error: ErrorArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Ramdp,
    Rmdp,
    Armdp,
    Rbc,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ramdp => Method::Ramdp,
            MethodArg::Rmdp => Method::Rmdp,
            MethodArg::Armdp => Method::Armdp,
            MethodArg::Rbc => Method::Rbc,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ErrorKind {
    /// Concentration bound on the model's counts.
    Counts,
    /// The model's `error` table.
    Inline,
}

#[derive(clap::Args, Debug)]
struct ErrorArgs {
    /// Source of the error budgets.
    #[arg(long = "error", value_enum, default_value = "counts")]
    kind: ErrorKind,
    /// Confidence parameter for count-based budgets.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

impl ErrorArgs {
    fn source(&self) -> ErrorSource {
        match self.kind {
            ErrorKind::Counts => ErrorSource::Counts { delta: self.delta },
            ErrorKind::Inline => ErrorSource::Inline,
        }
    }
}

#[derive(clap::Args, Debug)]
struct SafeArgs {
    model: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    baseline_policy: PathBuf,
    /// True return of the baseline; required by every method except rbc.
    #[arg(long)]
    baseline_return: Option<f64>,
    #[command(flatten)]
    error: ErrorArgs,
    /// armdp: first subgradient step (default `(1−γ)/Rmax`).
    #[arg(long)]
    alpha0: Option<f64>,
    /// armdp: subgradient iterations.
    #[arg(long)]
    max_iters: Option<usize>,
    /// armdp: multiplier cap (default `10³·Rmax/(1−γ)`).
    #[arg(long)]
    lambda_cap: Option<f64>,
    /// rbc: alternation restarts.
    #[arg(long)]
    restarts: Option<usize>,
    /// rbc: alternation rounds per restart.
    #[arg(long)]
    rounds: Option<usize>,
    /// rbc: seed for the random starting models.
    #[arg(long)]
    seed: Option<u64>,
    /// rbc: accept on the local-search estimate instead of the certified bound.
    #[arg(long)]
    uncertified: bool,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<ModelDocument> {
    Ok(ModelDocument::from_json(&read(path)?)?)
}

fn load_policy(path: &Path, n_states: usize, n_actions: usize) -> CliResult<Policy> {
    Ok(PolicyDocument::from_json(&read(path)?)?.to_policy(n_states, n_actions)?)
}

fn policy_json(pi: &Policy) -> Value {
    serde_json::to_value(PolicyDocument::from_policy(pi)).expect("policies serialize")
}

fn cmd_solve(model: &Path) -> CliResult<Value> {
    let mdp = load_model(model)?.to_mdp()?;
    let (pi, v) = solve_optimal_exact(&mdp)?;
    let rho = return_of(&mdp, &pi)?;
    Ok(json!({ "policy": policy_json(&pi), "return": rho, "values": v.0 }))
}

fn safe_result_json(result: &SafePolicyResult) -> Value {
    let policy = match &result.policy {
        SafePolicy::Markov(pi) => json!({ "kind": "markov", "policy": policy_json(pi) }),
        SafePolicy::Augmented(pi) => {
            json!({ "kind": "augmented", "n_base": pi.n_base(), "policy": policy_json(pi.policy()) })
        }
    };
    json!({
        "method": result.method,
        "accepted": result.accepted,
        "certified_value": result.certified_value,
        "policy": policy,
        "diagnostics": result.diagnostics,
    })
}

fn cmd_safe(args: &SafeArgs) -> CliResult<Value> {
    let method = Method::from(args.method);
    let rho_b = match (method, args.baseline_return) {
        (Method::Rbc, Some(_)) => {
            return Err(Failure::Usage("rbc does not use --baseline-return".into()));
        }
        (Method::Rbc, None) => 0.0,
        (_, Some(rho)) => rho,
        (_, None) => return Err(Failure::Usage(format!("{method} requires --baseline-return"))),
    };
    let armdp_flags = args.alpha0.is_some() || args.max_iters.is_some() || args.lambda_cap.is_some();
    let rbc_flags = args.restarts.is_some() || args.rounds.is_some() || args.seed.is_some() || args.uncertified;
    if armdp_flags && method != Method::Armdp {
        return Err(Failure::Usage("--alpha0, --max-iters and --lambda-cap apply to armdp only".into()));
    }
    if rbc_flags && method != Method::Rbc {
        return Err(Failure::Usage("--restarts, --rounds, --seed and --uncertified apply to rbc only".into()));
    }
    let doc = load_model(&args.model)?;
    let set = doc.uncertainty_set(args.error.source())?;
    let sim = set.nominal();
    let baseline = load_policy(&args.baseline_policy, sim.n_states(), sim.n_actions())?;
    let result = match method {
        Method::Ramdp => solve_ramdp(sim, set.error(), &baseline, rho_b)?,
        Method::Rmdp => solve_rmdp_safe(&set, &baseline, rho_b)?,
        Method::Armdp => {
            let mut schedule = SubgradientSchedule::for_model(sim);
            schedule.alpha0 = args.alpha0.unwrap_or(schedule.alpha0);
            schedule.max_iters = args.max_iters.unwrap_or(schedule.max_iters);
            schedule.lambda_cap = args.lambda_cap.unwrap_or(schedule.lambda_cap);
            solve_augmented_rmdp(&set, &baseline, rho_b, &schedule)?
        }
        Method::Rbc => {
            let defaults = RbcOptions::default();
            let opts = RbcOptions {
                restarts: args.restarts.unwrap_or(defaults.restarts),
                rounds: args.rounds.unwrap_or(defaults.rounds),
                seed: args.seed.unwrap_or(defaults.seed),
                certified: !args.uncertified,
                ..defaults
            };
            solve_rbc(&set, &baseline, &opts)?
        }
    };
    Ok(safe_result_json(&result))
}

fn benchmark_csv(result: &ExperimentResult) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Failure::Internal(e.to_string());
    w.write_record(["method", "sample_size", "trial", "improvement_pct"]).map_err(fail)?;
    for row in &result.rows {
        w.write_record([
            row.method.label().to_string(),
            row.sample_size.to_string(),
            row.trial.to_string(),
            row.improvement_pct.to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::Internal(e.to_string()))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    out.with_file_name(name)
}

fn cmd_benchmark(config: Option<&Path>, out: &Path) -> CliResult<Value> {
    let cfg = match config {
        Some(path) => BenchmarkConfig::from_json(&read(path)?)?,
        None => BenchmarkConfig::default(),
    };
    cfg.validate()?;
    let result = run_experiment(&cfg)?;
    write(out, &benchmark_csv(&result)?)?;
    let reference: Vec<Value> = cfg
        .sample_sizes
        .iter()
        .map(|&n| json!({ "sample_size": n, "improvement_pct": result.optimal_reference_pct }))
        .collect();
    let meta = json!({
        "config": cfg,
        "membership_violation_rate": result.membership_violation_rate(),
        "membership": result.membership,
        "optimal_return": result.optimal_return,
        "baseline_return": result.baseline_return,
        "optimal_reference": reference,
    });
    let sidecar = sidecar_path(out);
    write(&sidecar, &serde_json::to_string_pretty(&meta).expect("metadata serializes"))?;
    Ok(json!({ "csv": out, "metadata": sidecar, "rows": result.rows.len() }))
}

fn cmd_bounds(true_model: &Path, simulator: &Path, policy: &Path, error: &ErrorArgs) -> CliResult<Value> {
    let truth = load_model(true_model)?.to_mdp()?;
    let set = load_model(simulator)?.uncertainty_set(error.source())?;
    let baseline = load_policy(policy, truth.n_states(), truth.n_actions())?;
    let reports = bound_suite(&truth, &set, &baseline)?;
    Ok(serde_json::to_value(reports).expect("reports serialize"))
}

/// Applies `SAFE_MDP_THREADS` (0 or unset: one thread per core).
fn configure_threads() -> CliResult<()> {
    let threads = match std::env::var("SAFE_MDP_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Failure::Usage(format!("SAFE_MDP_THREADS must be a count, got {v:?}")))?,
        Err(_) => 0,
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<Value> {
    configure_threads()?;
    match &cli.command {
        Command::Solve { model } => cmd_solve(model),
        Command::Safe(args) => cmd_safe(args),
        Command::Benchmark { config, out } => cmd_benchmark(config.as_deref(), out),
        Command::Bounds { true_model, simulator, policy, error } => cmd_bounds(true_model, simulator, policy, error),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("output serializes"));
            ExitCode::SUCCESS
        }
        Err(failure) => {
            let (Failure::Usage(msg) | Failure::Internal(msg)) = &failure;
            eprintln!("error: {msg}");
            ExitCode::from(failure.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_sits_next_to_the_csv() {
        assert_eq!(sidecar_path(Path::new("/tmp/out/run.csv")), PathBuf::from("/tmp/out/run.csv.json"));
    }

    #[test]
    fn numerical_errors_are_internal() {
        assert_eq!(Failure::from(Error::Numerical("x".into())).code(), 3);
        assert_eq!(Failure::from(Error::Parse("x".into())).code(), 2);
        assert_eq!(Failure::from(Error::Dimension("x".into())).code(), 2);
    }

    #[test]
    fn command_line_parses() {
        let cli = Cli::try_parse_from(["safe-mdp", "safe", "m.json", "--method", "rbc", "--baseline-policy", "p.json"]);
        assert!(cli.is_ok());
        assert!(Cli::try_parse_from(["safe-mdp", "safe", "m.json", "--method", "dro", "--baseline-policy", "p"]).is_err());
        assert!(Cli::try_parse_from(["safe-mdp", "benchmark"]).is_err());
    }
}
