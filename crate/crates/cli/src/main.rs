use std::path::PathBuf;
use std::process::ExitCode;

use asymdiag_cli::{execute, CliError, Command, RunConfig};
use clap::Parser;

#[derive(Parser, Debug)]
#[command(name = "asymdiag", version, about = "Asymptotic diagonalization experiments with CSV output")]
struct Args {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Treat bound violations as failures.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(args: &Args) -> Result<(), CliError> {
    if let Some(k) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None if args.command == Command::Selftest => RunConfig::default(),
        None => return Err(CliError::Config("--config is required".into())),
    };
    let out = args.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("."));
    let report = execute(args.command, &cfg, &out, args.strict)?;
    for line in &report.summary {
        println!("{line}");
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for t in &report.tables {
        println!("wrote {}", out.join(format!("{}.csv", t.name)).display());
    }
    Ok(())
}
