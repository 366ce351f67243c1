use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mbac::linalg::Vector;
use mbac::oracle::OracleSolution;
use mbac::policy::SoftmaxPolicy;
use mbac_harness::acceptance::{run_check, ALL_CRITERIA};
use mbac_harness::config::{AlgorithmBlock, ExperimentConfig, OutputFormat};
use mbac_harness::experiment::AggregateResult;
use mbac_harness::{run_experiment, HarnessError};

#[derive(Parser)]
#[command(name = "mbac", version, about = "Mini-batch actor-critic experiments on finite MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mini-batch TD on a fixed policy.
    RunTd(RunArgs),
    /// Actor-critic.
    RunAc(RunArgs),
    /// Natural actor-critic.
    RunNac(RunArgs),
    /// Mini-batch linear stochastic approximation on the TD embedding.
    RunSa(RunArgs),
    /// Any algorithm block, over its sweep axes.
    Sweep(RunArgs),
    /// Exact oracle quantities for the configured MDP and policy as JSON.
    OracleDump(OracleArgs),
    /// Runs the acceptance suite.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Base seed; replicate `i` uses `seed + i`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[arg(long)]
    workers: Option<usize>,
    /// Write a per-iteration CSV for every run under `<out>/traces`.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated policy parameters; defaults to those in the config,
    /// else zero.
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `check.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Subset of criteria to run, e.g. `1,6,7`.
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<u8>>,
}

enum Failure {
    Config(String),
    Runtime(String),
    Acceptance,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Acceptance) => ExitCode::from(2),
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::RunTd(args) => run(args, Some("td")),
        Command::RunAc(args) => run(args, Some("ac")),
        Command::RunNac(args) => run(args, Some("nac")),
        Command::RunSa(args) => run(args, Some("sa")),
        Command::Sweep(args) => run(args, None),
        Command::OracleDump(args) => oracle_dump(args),
        Command::Check(args) => check(args),
    }
}

fn run(args: RunArgs, expected_kind: Option<&str>) -> Result<(), Failure> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(kind) = expected_kind {
        if config.algorithm.kind() != kind {
            return Err(Failure::Config(format!(
                "this subcommand runs `{kind}` but the config's algorithm is `{}`",
                config.algorithm.kind()
            )));
        }
    }
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(out) = args.out {
        config.output.path = Some(out);
    }
    if let Some(format) = args.format {
        config.output.format = format;
    }
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    config.output.trace |= args.trace;
    if config.output.trace && config.output.path.is_none() {
        return Err(Failure::Config("--trace needs an output directory (--out)".into()));
    }
    let result = run_experiment(&config)?;
    print_summary(&result);
    Ok(())
}

fn print_summary(result: &AggregateResult) {
    println!(
        "{} [{}] config {} seeds {:?}",
        result.manifest.name,
        result.algorithm,
        &result.manifest.config_hash[..12],
        result.manifest.seeds
    );
    for point in &result.points {
        let params: Vec<String> = point.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let scalars: Vec<String> = point
            .scalars
            .iter()
            .map(|(k, s)| format!("{k}={:.4e}±{:.1e}", s.mean, s.std))
            .collect();
        println!("point {} {} {}", point.config_id, params.join(" "), scalars.join(" "));
        for f in &point.failures {
            eprintln!("  seed {} failed: {}", f.seed, f.message);
        }
    }
    for slope in &result.slopes {
        if let Some(fit) = slope.fit {
            println!(
                "slope of {} vs {}: {:.4} (R^2 {:.4})",
                slope.metric, slope.axis, fit.slope, fit.r_squared
            );
        }
    }
    println!("total samples {}", result.total_samples);
}

fn oracle_dump(args: OracleArgs) -> Result<(), Failure> {
    let config = ExperimentConfig::load(&args.config)?;
    let mdp = config.mdp.load()?;
    let features = config.policy_features.build(&mdp)?;
    let configured = match &config.algorithm {
        AlgorithmBlock::Td(b) => b.policy_params.clone(),
        AlgorithmBlock::Sa(b) => b.policy_params.clone(),
        AlgorithmBlock::Ac(b) | AlgorithmBlock::Nac(b) => b.initial_params.clone(),
    };
    let params = match args.params.or(configured) {
        Some(w) => Vector::from_vec(w),
        None => Vector::zeros(features.dim()),
    };
    let policy = SoftmaxPolicy::new(features, params).map_err(|e| Failure::Config(e.to_string()))?;
    let phi = config.critic_features.build(mdp.num_states())?;
    let solution = OracleSolution::compute(&mdp, &policy, &phi).map_err(|e| Failure::Runtime(e.to_string()))?;
    let text = serde_json::to_string_pretty(&solution.to_json()).map_err(|e| Failure::Runtime(e.to_string()))?;
    match args.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(e.to_string()))?;
            let path = dir.join("oracle.json");
            std::fs::write(&path, text).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("wrote {}", path.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(stdout, "{text}");
        }
    }
    Ok(())
}

fn check(args: CheckArgs) -> Result<(), Failure> {
    let ids = args.criteria.unwrap_or_else(|| ALL_CRITERIA.to_vec());
    let mut outcomes = Vec::new();
    for id in ids {
        let report = run_check(args.seed, &[id])?;
        for o in report.outcomes {
            println!("{o}");
            outcomes.push(o);
        }
    }
    let report = mbac_harness::acceptance::CheckReport {
        seed: args.seed,
        outcomes,
    };
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(e.to_string()))?;
        let path = dir.join("check.csv");
        std::fs::write(&path, report.csv_body()?).map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    let passed = report.outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed", report.outcomes.len());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Acceptance)
    }
}
