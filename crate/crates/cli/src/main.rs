use clap::{Parser, Subcommand};
use etd_cli::config::RunConfig;
use etd_cli::{commands, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "etd", about = "Exponential integrator experiments: simulate, order studies, checks, estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the model and write snapshots.
    Simulate(Args),
    /// Convergence orders of state, adjoint and gradient.
    OrderStudy(Args),
    /// Consistency checks; exits 1 if any fails.
    Check(Args),
    /// Recover parameter fields with projected L-BFGS.
    Estimate(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Upper bound on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cmd: &Command) -> Result<bool, CliError> {
    let args = match cmd {
        Command::Simulate(a) | Command::OrderStudy(a) | Command::Check(a) | Command::Estimate(a) => a,
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Run(format!("thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(&args.config)?;
    let out = cfg.output_dir(args.out.as_deref());
    match cmd {
        Command::Simulate(_) => {
            let s = commands::simulate(&cfg, &out)?;
            println!("simulated {} steps to t = {}; outputs in {}", s.steps, s.t_final, out.display());
        }
        Command::OrderStudy(_) => {
            let s = commands::order_study_cmd(&cfg, &out)?;
            for r in &s.rows {
                println!("{:<20} {:<7} {:<12} {:.4}", r.scheme, r.quantity, r.pair, r.p);
            }
        }
        Command::Check(_) => {
            let r = commands::check(&cfg, &out)?;
            for i in &r.items {
                println!("{} {:<45} {:.3e} (tol {:.0e})", if i.passed { "ok  " } else { "FAIL" }, i.name, i.value, i.tolerance);
            }
            return Ok(r.passed);
        }
        Command::Estimate(_) => {
            let s = commands::estimate(&cfg, &out)?;
            println!(
                "{:?} after {} iterations; misfit {:.4e} -> {:.4e} ({:.1}% reduction)",
                s.status,
                s.iterations,
                s.initial_misfit,
                s.final_misfit,
                100.0 * s.misfit_reduction
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("etd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
