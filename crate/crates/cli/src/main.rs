mod config;
mod output;
mod runs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use hflgen::verify::{Suite, SuiteResult};
use hflgen::Error;
use serde_json::json;

/// Generalization bounds for hierarchical federated learning: closed forms,
/// Monte Carlo estimators and property suites.
#[derive(Parser)]
#[command(name = "hflgen", version)]
struct Cli {
    /// Worker threads; falls back to HFLGEN_THREADS, then to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form GLM comparison over a sweep; writes results.csv,
    /// comparison.svg and report.json.
    Glm(RunArgs),
    /// Per-layer contributions of the requested bound families.
    Bounds(RunArgs),
    /// Privacy bound against the measured generalization error.
    Dp(RunArgs),
    /// Runs one property suite, or all of them.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Directory for report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's "output", then ./hflgen-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the outer trial count.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io(std::io::Error),
    Failed,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed => 1,
            CliError::Core(Error::Unsupported(_)) => 3,
            CliError::Core(_) | CliError::Io(_) => 2,
        }
    }
}

fn threads(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("HFLGEN_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("HFLGEN_THREADS must be a count, got {v:?}")).into()),
        Err(_) => Ok(0),
    }
}

fn prepare(args: &RunArgs) -> Result<(config::Loaded, PathBuf), CliError> {
    let mut loaded = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        loaded.config.seed = seed;
    }
    if let Some(t) = args.trials {
        loaded.config.trials.outer = t;
        loaded.config.validate()?;
    }
    let out = args
        .out
        .clone()
        .or_else(|| loaded.config.output.clone())
        .unwrap_or_else(|| PathBuf::from("hflgen-out"));
    std::fs::create_dir_all(&out)?;
    Ok((loaded, out))
}

fn verify(suite: &str, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::from_str(suite)?]
    };
    let results = suites
        .into_iter()
        .map(|s| s.run(seed))
        .collect::<Result<Vec<SuiteResult>, Error>>()?;
    for r in &results {
        for c in &r.checks {
            let status = if c.failures == 0 { "pass" } else { "FAIL" };
            eprintln!(
                "{status} {}/{}: {} cases, {} failures, worst margin {:e}",
                r.suite, c.name, c.cases, c.failures, c.worst_margin
            );
        }
    }
    let passed = results.iter().all(SuiteResult::passed);
    let report = json!({ "seed": seed, "passed": passed, "suites": results });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), text + "\n")?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads(cli.threads)?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Glm(a) => prepare(a).and_then(|(l, out)| runs::run_glm(&l, &out)),
        Command::Bounds(a) => prepare(a).and_then(|(l, out)| runs::run_bounds(&l, &out)),
        Command::Dp(a) => prepare(a).and_then(|(l, out)| runs::run_dp(&l, &out)),
        Command::Verify { suite, seed, out } => verify(suite, *seed, out.as_deref()),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Core(err) => eprintln!("hflgen: {err}"),
                CliError::Io(err) => eprintln!("hflgen: {err}"),
                CliError::Failed => eprintln!("hflgen: verification failed"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
