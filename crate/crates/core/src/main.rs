use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use doppler_cqed::cli::{self, Mode, Overrides, WORKERS_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "doppler-cqed",
    version,
    about = "Steady states, phase slopes and shot-noise linewidths of a Doppler-broadened atomic cavity"
)]
struct Args {
    mode: Mode,
    /// TOML run description.
    #[arg(long)]
    config: PathBuf,
    /// Output file; overrides [output].path. The summary goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Highest Floquet harmonic kept.
    #[arg(long)]
    l_max: Option<usize>,
    /// Gauss-Legendre nodes per velocity panel.
    #[arg(long)]
    vel_nodes: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let code = match real_main(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

fn real_main(args: &Args) -> doppler_cqed::Result<i32> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| doppler_cqed::Error::Io(format!("{}: {e}", args.config.display())))?;
    let over = Overrides {
        mode: Some(args.mode),
        out: args.out.clone(),
        l_max: args.l_max,
        vel_nodes: args.vel_nodes,
    };
    let cfg = cli::parse_config_with(&text, &over)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| doppler_cqed::Error::Config(format!("worker pool: {e}")))?;
    let (outcome, written) = pool.install(|| cli::run(&cfg))?;
    println!("{}", cli::describe(&outcome, &written));
    if outcome.failures > 0 {
        eprintln!(
            "{} of the requested points failed; see the summary diagnostics",
            outcome.failures
        );
    }
    Ok(cli::failure_exit_code(outcome.failures))
}
