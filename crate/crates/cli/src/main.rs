use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use raycontact_cli::registry::{load, BUNDLED};
use raycontact_cli::{run, ConfigError, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "raycontact", version, about = "Light-ray contact form and redshift experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace one null geodesic and write its samples as CSV.
    Trace(RunArgs),
    /// Redshift between two surfaces along rays from a point.
    Redshift(RunArgs),
    /// Compare alpha_{M'}/alpha_M with 1 + z on random variations.
    VerifyTheorem(RunArgs),
    /// Check that <gamma', J> is constant along rays.
    VerifyLemma(RunArgs),
    /// Jacobian of the transfer map against (1 + z)^(-n).
    Density(RunArgs),
    /// Volume of a region from the redshift-weighted ray measure.
    Volume(RunArgs),
    /// Both sides of the exchange identity.
    Exchange(RunArgs),
    /// List bundled configurations.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or `bundled:NAME`.
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Pass/fail tolerance for the experiment's residual.
    #[arg(long)]
    tol: Option<f64>,
    /// Directory for the report and CSV data.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

const WORKERS_ENV: &str = "RAYCONTACT_WORKERS";

fn configure(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = load(&args.config)?;
    if cfg.experiment != kind {
        return Err(ConfigError {
            field: "experiment".into(),
            line: None,
            message: format!("config is for `{}`, not `{}`", cfg.experiment.name(), kind.name()),
        });
    }
    cfg.run.seed = args.seed.or(cfg.run.seed);
    cfg.run.samples = args.samples.or(cfg.run.samples);
    cfg.run.tolerance = args.tol.or(cfg.run.tolerance);
    // revalidate with the overrides applied
    ExperimentConfig::parse(&cfg.to_toml())
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> Result<bool, String> {
    let cfg = configure(kind, args).map_err(|e| e.to_string())?;
    let outcome = run(&cfg).map_err(|e| format!("{} failed: {e}", kind.name()))?;
    let (name, body) = match args.format {
        Format::Json => (format!("{}.json", kind.name()), outcome.report.to_json()),
        Format::Csv => (format!("{}-report.csv", kind.name()), outcome.report.to_csv()),
    };
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            std::fs::write(dir.join(&name), &body).map_err(|e| format!("{name}: {e}"))?;
            if let Some((data_name, data)) = &outcome.data {
                std::fs::write(dir.join(data_name), data).map_err(|e| format!("{data_name}: {e}"))?;
            }
            let r = &outcome.report;
            println!(
                "{} {}: residual {} (tolerance {:e})",
                if r.passed { "PASS" } else { "FAIL" },
                r.experiment,
                r.residual_sigma.or(r.residual).map(|v| format!("{v:e}")).unwrap_or_default(),
                r.tolerance
            );
        }
        None => println!("{body}"),
    }
    Ok(outcome.report.passed)
}

fn set_workers() -> Result<(), String> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = set_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let (kind, args) = match &cli.command {
        Command::List => {
            for (name, src) in BUNDLED {
                let kind = ExperimentConfig::parse(src).map(|c| c.experiment.name()).unwrap_or("invalid");
                println!("{name}\t{kind}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Trace(a) => (ExperimentKind::Trace, a),
        Command::Redshift(a) => (ExperimentKind::Redshift, a),
        Command::VerifyTheorem(a) => (ExperimentKind::VerifyTheorem, a),
        Command::VerifyLemma(a) => (ExperimentKind::VerifyLemma, a),
        Command::Density(a) => (ExperimentKind::Density, a),
        Command::Volume(a) => (ExperimentKind::Volume, a),
        Command::Exchange(a) => (ExperimentKind::Exchange, a),
    };
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
