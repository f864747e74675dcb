use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use susceptlab::config::ExperimentConfig;
use susceptlab::experiments::execute;

#[derive(Parser)]
#[command(name = "susceptlab", version, about = "Susceptibility estimator experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Empirical vs population susceptibilities over a sample-size schedule.
    Converge(Common),
    /// Posterior moment scaling fits.
    Moments(Common),
    /// Ridge-regularized patterning.
    Pattern(Common),
    /// Coupling kernels on a grid.
    Kernel(Common),
    /// SGLD estimates against exact quadrature.
    SgldCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output` or `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, args) = match cli.command {
        Command::Converge(a) => ("converge", a),
        Command::Moments(a) => ("moments", a),
        Command::Pattern(a) => ("pattern", a),
        Command::Kernel(a) => ("kernel", a),
        Command::SgldCheck(a) => ("sgld-check", a),
    };
    match run_cli(run, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run_cli(run: &str, args: Common) -> anyhow::Result<()> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_toml_str(&text)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let rec = execute(run, &cfg, &text, &out)?;
    println!("{}: {} rows -> {} ({:.2}s)", rec.run, rec.rows, rec.csv.display(), rec.wall_time_s);
    Ok(())
}
