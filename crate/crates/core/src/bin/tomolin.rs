use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tomolin::bench::{run_selftest, run_to_files, ExperimentConfig, ExperimentKind, WORKERS_ENV};
use tomolin::{Error, Result};

/// Standard versus data-pattern linear-inversion tomography benchmarks.
#[derive(Debug, Parser)]
#[command(name = "tomolin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Performance ratio versus the number of probes M at fixed m.
    SweepProbes(RunArgs),
    /// Performance ratio versus the number of outcomes m at fixed M.
    SweepOutcomes(RunArgs),
    /// Homodyne reconstruction of the signal state, with Wigner exports.
    Homodyne(RunArgs),
    /// Linear-algebra, state and protocol invariant suites.
    Selftest(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON configuration; fields not given keep their defaults.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Skip points already present in the output file.
    #[arg(long)]
    resume: bool,
    /// Start from the full-size settings instead of desk-scale defaults.
    #[arg(long)]
    full_scale: bool,
}

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig> {
    let base = if args.full_scale {
        ExperimentConfig::full_scale(kind)
    } else {
        ExperimentConfig::defaults(kind)
    };
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json_over(&base, &text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<bool> {
    let cfg = load(kind, args)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be >= 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        if kind == ExperimentKind::Selftest {
            let report = run_selftest(&cfg)?;
            for s in &report.suites {
                println!(
                    "{:<28} {}  cases={:<4} failures={:<4} worst={:.3e} tol={:.0e}",
                    s.name,
                    if s.passed() { "PASS" } else { "FAIL" },
                    s.cases,
                    s.failures,
                    s.worst_residual,
                    s.tolerance
                );
            }
            return Ok(report.passed());
        }
        let summary = run_to_files(&cfg, args.resume)?;
        eprintln!(
            "{}: {} points computed, {} resumed",
            summary.output.display(),
            summary.points_computed,
            summary.points_resumed
        );
        for f in &summary.wigner_files {
            eprintln!("{}", f.display());
        }
        Ok(true)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::SweepProbes(a) => (ExperimentKind::SweepProbes, a),
        Command::SweepOutcomes(a) => (ExperimentKind::SweepOutcomes, a),
        Command::Homodyne(a) => (ExperimentKind::Homodyne, a),
        Command::Selftest(a) => (ExperimentKind::Selftest, a),
    };
    match run(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
