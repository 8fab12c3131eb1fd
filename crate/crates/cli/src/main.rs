use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;

use exaul_core::environments::DEFAULT_CONCENTRATION;
use exaul_core::{
    audit_run_dir, gen_pool_with_concentration, load_pool, run_experiment, write_pool,
    AdversaryConfig, Algorithm, AuditConfig, Calibration, Error, ExperimentConfig, LambdaSpec,
    RateMode, Schedule, ScheduleKind,
};

const EXIT_AUDIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Online conformal abstention simulator.
#[derive(Debug, Parser)]
#[command(name = "exaul", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic (score, correctness) pool.
    GenPool(GenPoolArgs),
    /// Run a multi-trial experiment and write its outputs.
    Run(RunArgs),
    /// Re-check the guarantees recorded in a run directory.
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
struct GenPoolArgs {
    /// Number of entries.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score-to-correctness map: well, over or under.
    #[arg(long, default_value = "well")]
    calibration: Calibration,
    /// Target fraction of incorrect entries.
    #[arg(long, default_value_t = 0.3)]
    incorrect_rate: f64,
    /// Beta concentration of the score distribution.
    #[arg(long, default_value_t = DEFAULT_CONCENTRATION)]
    concentration: f64,
    #[arg(long, default_value = "pool.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// exaul, exp3ix-ca, ew-ca or no-ca.
    #[arg(long, default_value = "exaul")]
    algo: Algorithm,
    /// stochastic, shift-single, shift-alternating, shift-gradual or adversary.
    #[arg(long, default_value = "stochastic")]
    env: String,
    /// Pool CSV (`score,correctness`).
    #[arg(long)]
    pool: PathBuf,
    /// Second pool for the two-pool environments.
    #[arg(long)]
    pool2: Option<PathBuf>,
    /// Horizon.
    #[arg(long = "T", default_value_t = 30_000)]
    horizon: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// A non-negative number or `sqrtT`.
    #[arg(long, default_value = "sqrtT")]
    lambda: LambdaSpec,
    #[arg(long, default_value_t = 1000)]
    grid_size: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step-log stride.
    #[arg(long, default_value_t = 10)]
    log_every: usize,
    /// Confidence parameter of the probabilistic bounds.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// shift-single: last round served from the first pool [default: T/2].
    #[arg(long)]
    switch: Option<usize>,
    /// shift-alternating: rounds per pool before switching.
    #[arg(long, default_value_t = 3000)]
    chunk: usize,
    /// adversary: round at which adaptation starts [default: T/5].
    #[arg(long)]
    phase_switch: Option<usize>,
    /// adversary: rounds between mix-ratio updates.
    #[arg(long, default_value_t = 500)]
    window: usize,
    /// Scale rates by sqrt(T/t) instead of holding them fixed.
    #[arg(long, default_value_t = false)]
    anytime: bool,
    /// Run trials one after another instead of in parallel.
    #[arg(long, default_value_t = false)]
    serial: bool,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Run directory written by `run`.
    #[arg(long)]
    run: PathBuf,
    /// Override the confidence parameter recorded with the run.
    #[arg(long)]
    delta: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenPool(a) => gen_pool_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Audit(a) => audit_cmd(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Csv(_) | Error::RunFormat { .. } => EXIT_AUDIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

fn gen_pool_cmd(a: GenPoolArgs) -> Result<ExitCode, Error> {
    let pool = gen_pool_with_concentration(
        a.n,
        a.seed,
        a.calibration,
        a.incorrect_rate,
        a.concentration,
    )?;
    write_pool(&pool, &a.out)?;
    info!("wrote {} entries to {}", pool.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_shared(path: &Path) -> Result<Arc<exaul_core::ExamplePool>, Error> {
    Ok(Arc::new(load_pool(path)?))
}

fn schedule_kind(a: &RunArgs) -> Result<ScheduleKind, Error> {
    Ok(match a.env.as_str() {
        "stochastic" => ScheduleKind::Stochastic,
        "shift-single" => ScheduleKind::ShiftSingle {
            switch_point: a.switch.unwrap_or(a.horizon / 2),
        },
        "shift-alternating" => ScheduleKind::ShiftAlternating { chunk: a.chunk },
        "shift-gradual" => ScheduleKind::ShiftGradual,
        "adversary" => ScheduleKind::Adversary(AdversaryConfig {
            phase_switch: a.phase_switch,
            window: a.window,
            ..AdversaryConfig::default()
        }),
        other => return Err(Error::UnknownEnvironment(other.to_string())),
    })
}

fn run_cmd(a: RunArgs) -> Result<ExitCode, Error> {
    let kind = schedule_kind(&a)?;
    let first = load_shared(&a.pool)?;
    let second = a.pool2.as_deref().map(load_shared).transpose()?;
    let schedule = Schedule::new(kind, first, second)?;
    let mut config =
        ExperimentConfig::new(a.algo, schedule, a.alpha, a.lambda, a.grid_size, a.horizon)?;
    config.trials = a.trials;
    config.base_seed = a.seed;
    config.log_every = a.log_every;
    config.audit = AuditConfig {
        delta: a.delta,
        ..AuditConfig::default()
    };
    config.rate_mode = if a.anytime {
        RateMode::Anytime
    } else {
        RateMode::Fixed
    };
    config.parallel = !a.serial;
    config.output_dir = Some(a.out.clone());

    let output = run_experiment(&config)?;
    print!("{}", output.summary.to_key_values());
    Ok(ExitCode::SUCCESS)
}

fn audit_cmd(a: AuditArgs) -> Result<ExitCode, Error> {
    let audit = audit_run_dir(&a.run, a.delta)?;
    print!("{}", audit.summary.to_key_values());
    if audit.passed() {
        println!("audit=pass");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("audit=fail");
        for v in &audit.violations {
            println!("violation: {v}");
        }
        Ok(ExitCode::from(EXIT_AUDIT_FAILURE))
    }
}
