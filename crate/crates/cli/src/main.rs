mod config;
mod output;

use clap::{Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brar_core::asymptotics::verify;
use brar_core::stopping::calibrate_boundaries;
use brar_core::trial::{replicate, with_workers};
use brar_core::{Error, SpendingSchedule, TransformConstants};

use config::RunConfig;
use output::RunDir;

#[derive(Parser)]
#[command(name = "brar", version, about = "Bayesian response-adaptive randomization trial simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate interim critical values from simulated null trials.
    Calibrate(RunArgs),
    /// Run replicated trials and summarize their operating characteristics.
    Replicate(RunArgs),
    /// Verify likelihood, information and delta-method results numerically.
    Asymptotics(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed; overrides `replication.seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

/// Exit status 2 for configuration problems, 1 for numerical failures.
struct Failure {
    code: u8,
    message: String,
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn numeric_error(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnequalDraws(..)
            | Error::ZeroProbability(_)
            | Error::SingularInformation(_)
            | Error::Calibration { .. } => numeric_error(e.to_string()),
            _ => config_error(e.to_string()),
        }
    }
}

struct Context {
    config: RunConfig,
    config_dir: PathBuf,
    seed: u64,
    workers: usize,
    run_dir: RunDir,
}

impl Context {
    fn load(args: &RunArgs) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(&args.config)
            .map_err(|e| config_error(format!("cannot read {}: {e}", args.config.display())))?;
        let config = RunConfig::parse(&text).map_err(|e| config_error(format!("{}: {e}", args.config.display())))?;
        let workers = match args.workers {
            Some(0) => return Err(config_error("--workers must be at least 1")),
            Some(w) => w,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let run_dir = RunDir::new(&config.output.directory, &config.output.run_id, args.force);
        Ok(Self {
            seed: args.seed.unwrap_or(config.replication.seed),
            config_dir: args.config.parent().map(Path::to_path_buf).unwrap_or_default(),
            config,
            workers,
            run_dir,
        })
    }

    fn pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
        with_workers(self.workers, f).map_err(Failure::from)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        self.run_dir
            .write(name, contents)
            .map_err(|e| numeric_error(format!("cannot write {}: {e}", self.run_dir.file(name).display())))
    }
}

fn schedule_table(s: &SpendingSchedule) -> String {
    let mut out = format!("spending {} alpha {}\n", s.spending, s.alpha);
    let _ = writeln!(out, "{:>3}  {:>5}  {:>12}  {:>12}  {:>10}", "j", "t", "alpha_t", "delta_alpha", "c_j");
    for e in &s.entries {
        let _ = writeln!(
            out,
            "{:>3}  {:>5.3}  {:>12.5e}  {:>12.5e}  {:>10.6}",
            e.stage, e.t, e.alpha_t, e.delta_alpha, e.critical
        );
    }
    out
}

fn calibrate(ctx: &Context) -> Result<SpendingSchedule, Failure> {
    let cal = ctx.config.calibration_config().map_err(config_error)?;
    let mcmc = ctx.config.mcmc;
    let constants = TransformConstants::standard();
    let seed = ctx.seed;
    ctx.pool(|| calibrate_boundaries(&cal, &mcmc, &constants, seed))?.map_err(Failure::from)
}

fn cmd_calibrate(ctx: &Context) -> Result<(), Failure> {
    ctx.run_dir.claim(&["boundaries.csv"]).map_err(config_error)?;
    let schedule = calibrate(ctx)?;
    let path = ctx.write("boundaries.csv", &schedule.to_boundary_file())?;
    print!("{}", schedule_table(&schedule));
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_replicate(ctx: &Context) -> Result<(), Failure> {
    let trial = ctx.config.trial_config().map_err(config_error)?;
    let replicates = ctx.config.replication.replicates;
    if replicates == 0 {
        return Err(config_error("replication.replicates must be at least 1"));
    }
    let spending = ctx.config.spending_section().map_err(config_error)?;
    let from_file = spending.boundary_file.as_ref().map(|p| ctx.config_dir.join(p));
    let mut outputs = vec!["replicates.csv", "summary.toml"];
    if from_file.is_none() {
        outputs.push("boundaries.csv");
    }
    ctx.run_dir.claim(&outputs).map_err(config_error)?;

    let schedule = match &from_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_error(format!("cannot read boundary file {}: {e}", path.display())))?;
            SpendingSchedule::parse_boundary_file(&text)?
        }
        None if spending.calibration.is_some() => {
            let s = calibrate(ctx)?;
            ctx.write("boundaries.csv", &s.to_boundary_file())?;
            s
        }
        None => {
            return Err(config_error("no boundaries: set spending.boundary_file or a [spending.calibration] block"))
        }
    };
    if schedule.num_stages() != trial.num_stages {
        return Err(Error::ScheduleMismatch { schedule: schedule.num_stages(), trial: trial.num_stages }.into());
    }

    let constants = TransformConstants::standard();
    let seed = ctx.seed;
    let (results, summary) = ctx.pool(|| replicate(&trial, &schedule, &constants, replicates, seed))??;
    let label = schedule.spending.to_string();
    let rows = ctx.write("replicates.csv", &output::replicates_csv(&trial, seed, &label, &results))?;
    let sum =
        ctx.write("summary.toml", &output::summary_toml(&trial, seed, &label, &schedule.critical_values(), &summary))?;
    println!("{} / {} / {}: R = {}", trial.scenario.name, trial.rule, label, summary.replicates);
    println!("  PPS(H_a1) {}", summary.pps_ha1);
    println!("  PPS(H_a2) {}", summary.pps_ha2);
    println!("  PPS(H_a3) {}", summary.pps_ha3);
    println!("  best-arm proportion {}", summary.best_arm_proportion);
    println!("  rejection rate {:.4}, early stop rate {:.4}", summary.rejection_rate, summary.early_stop_rate);
    println!("wrote {} and {}", rows.display(), sum.display());
    Ok(())
}

fn cmd_asymptotics(ctx: &Context) -> Result<(), Failure> {
    ctx.run_dir.claim(&["asymptotics.txt"]).map_err(config_error)?;
    let arm = ctx.config.asymptotics_arm();
    let vcfg = ctx.config.asymptotics.verification.clone();
    let constants = TransformConstants::standard();
    let seed = ctx.seed;
    let report = ctx.pool(|| verify(&arm, &vcfg, &constants, seed))??;
    let text = report.to_text();
    let path = ctx.write("asymptotics.txt", &text)?;
    print!("{text}");
    println!("wrote {}", path.display());
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(numeric_error(format!("{failed} asymptotics check(s) failed")));
    }
    Ok(())
}

type Handler = fn(&Context) -> Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, cmd): (&RunArgs, Handler) = match &cli.command {
        Command::Calibrate(a) => (a, cmd_calibrate),
        Command::Replicate(a) => (a, cmd_replicate),
        Command::Asymptotics(a) => (a, cmd_asymptotics),
    };
    match Context::load(args).and_then(|ctx| cmd(&ctx)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
