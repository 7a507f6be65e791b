use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use greenlab_cli::{emit_plotdata, run, write_report, CliError, ExperimentConfig, Kind};

/// Run a greenlab experiment and write CSV, JSON and plot data.
#[derive(Parser, Debug)]
#[command(name = "greenlab", version)]
struct Args {
    /// Experiment kind.
    #[arg(value_enum)]
    kind: Kind,

    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; overrides the config.
    #[arg(long, env = "GREENLAB_WORKERS")]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Override a config key, e.g. `--set params.count=5000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Skip the two-column plot files.
    #[arg(long)]
    no_plots: bool,
}

fn execute(args: &Args) -> Result<bool, CliError> {
    let mut overrides = args.overrides.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(w) = args.workers {
        overrides.push(format!("workers={w}"));
    }
    let cfg = ExperimentConfig::load(args.config.as_deref(), &overrides, args.kind)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let report = pool.install(|| run(&cfg))?;
    write_report(&report, &args.out)?;
    if !args.no_plots {
        emit_plotdata(&report, &args.out)?;
    }
    for v in &report.verdicts {
        println!(
            "{} {}: statistic {} threshold {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.statistic,
            v.threshold,
            v.csv
        );
    }
    Ok(report.pass())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("greenlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
