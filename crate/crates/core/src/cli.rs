//! `sprinkled` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiments::{self, output::write_result_dir, EnsembleResult, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "sprinkled", version, about = "Monte Carlo experiments for NLS with a random point-measure nonlinearity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample measures and write replica 0 of each epsilon as CSV.
    SampleMeasure(RunArgs),
    /// Solve once with a sampled measure and once with Lebesgue measure.
    Solve(RunArgs),
    /// Homogenization ensemble over the epsilon list.
    Homogenize(RunArgs),
    /// Scalar CLT for the integral of a test function against the measure.
    Clt(RunArgs),
    /// Fluctuation field statistics against the exact Gaussian law.
    Fluctuations(RunArgs),
    /// Homogenization and fluctuations with mollified measures.
    Mollified(RunArgs),
    /// Haar coefficient cumulants and weighted negative-norm moments.
    HaarStats(RunArgs),
    /// Parse and check config files without running anything.
    ValidateConfig {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

/// Exit code for configuration problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 1;

fn execute(name: &str, args: &RunArgs) -> Result<String> {
    let src = std::fs::read_to_string(&args.config)?;
    let cfg = ExperimentConfig::from_toml_str(&src, &args.config.display().to_string())?;
    let dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let (result, extra): (EnsembleResult, Vec<String>) = match name {
        "sample-measure" => experiments::run_sample_measure(&cfg, Some(&dir))?,
        "solve" => experiments::run_solve(&cfg, Some(&dir))?,
        "homogenize" => (experiments::run_homogenization(&cfg)?, Vec::new()),
        "clt" => (experiments::run_clt_linear(&cfg)?, Vec::new()),
        "fluctuations" => (experiments::run_fluctuations(&cfg)?, Vec::new()),
        "mollified" => (experiments::run_mollified(&cfg)?, Vec::new()),
        "haar-stats" => (experiments::run_haar_stats(&cfg)?, Vec::new()),
        _ => unreachable!("unknown command {name}"),
    };
    write_result_dir(&dir, name, &src, cfg.master_seed, &result, &extra)?;
    let rejected = result.tests.iter().filter(|t| t.rejected).count();
    Ok(format!(
        "{name}: {} records, {} aggregates, {} tests ({rejected} rejected) -> {}",
        result.records.len(),
        result.aggregates.len(),
        result.tests.len(),
        dir.display()
    ))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Run the CLI on `argv` (including the program name) and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, args) = match &cli.command {
        Command::ValidateConfig { configs } => {
            let mut code = 0;
            for path in configs {
                match ExperimentConfig::load(path) {
                    Ok(_) => println!("{}: ok", path.display()),
                    Err(e) => {
                        eprintln!("{e}");
                        code = code.max(exit_code(&e));
                    }
                }
            }
            return code;
        }
        Command::SampleMeasure(a) => ("sample-measure", a),
        Command::Solve(a) => ("solve", a),
        Command::Homogenize(a) => ("homogenize", a),
        Command::Clt(a) => ("clt", a),
        Command::Fluctuations(a) => ("fluctuations", a),
        Command::Mollified(a) => ("mollified", a),
        Command::HaarStats(a) => ("haar-stats", a),
    };
    match execute(name, args) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
