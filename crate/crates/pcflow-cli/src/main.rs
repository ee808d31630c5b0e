use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pcflow::suite::SuiteOptions;
use pcflow_cli::commands;
use pcflow_cli::config::parse_config;
use pcflow_cli::error::{CliError, EXIT_CHECK, EXIT_OK};
use pcflow_cli::runner::{self, resolve_out_dir};

#[derive(Parser)]
#[command(name = "pcflow", version, about = "Pluriclosed flow on flat complex tori")]
struct Cli {
    /// run configuration (alternative to the positional argument of `run`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory; PCFLOW_OUT takes precedence
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// worker threads, 0 = one per core
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// multiplier on absolute tolerances of checks and oracles
    #[arg(long = "tol-scale", global = true, default_value_t = 1.0)]
    tol_scale: f64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// integrate a configured flow
    Run {
        #[arg(value_name = "CONFIG")]
        path: Option<PathBuf>,
    },
    /// run an acceptance suite: identities, evolution, monotonicity, convergence, all, or a number
    Check { suite: String },
    /// print the diagnostics row of a checkpoint
    Diag { checkpoint: PathBuf },
    /// compare a slow reference implementation on a checkpoint
    Oracle { name: String, checkpoint: PathBuf },
}

fn init_threads(k: usize) -> Result<usize, CliError> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        if k > 1 {
            eprintln!("built without the parallel feature; --threads {k} ignored");
        }
        Ok(1)
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    if !(cli.tol_scale > 0.0 && cli.tol_scale.is_finite()) {
        return Err(CliError::Usage(format!("--tol-scale must be positive, got {}", cli.tol_scale)));
    }
    let threads = init_threads(cli.threads)?;
    match cli.cmd {
        Cmd::Run { path } => {
            let path = match (path, cli.config) {
                (Some(a), Some(b)) if a != b => {
                    return Err(CliError::Usage("config given twice with different paths".into()))
                }
                (Some(p), _) | (None, Some(p)) => p,
                (None, None) => return Err(CliError::Usage("run needs a config file".into())),
            };
            let text = std::fs::read_to_string(&path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            let cfg = parse_config(&text).map_err(CliError::Config)?;
            let out = resolve_out_dir(cli.out.as_deref(), Some(&cfg));
            let r = runner::run(&cfg, &out, threads)?;
            println!("completed {} steps to t = {} in {}", r.steps, r.t, r.out_dir.display());
            Ok(EXIT_OK)
        }
        Cmd::Check { suite } => {
            let opts = SuiteOptions {
                tol_scale: cli.tol_scale,
                ..SuiteOptions::default()
            };
            let res = commands::check(&suite, &opts, |c| print!("{}", commands::render(c)))?;
            let failed: Vec<_> = res.iter().filter(|c| !c.passed()).map(|c| c.id.to_string()).collect();
            if failed.is_empty() {
                Ok(EXIT_OK)
            } else {
                eprintln!("failed criteria: {}", failed.join(" "));
                Ok(EXIT_CHECK)
            }
        }
        Cmd::Diag { checkpoint } => {
            print!("{}", commands::diag(&checkpoint)?);
            Ok(EXIT_OK)
        }
        Cmd::Oracle { name, checkpoint } => {
            let lines = commands::oracle(&name, &checkpoint, cli.tol_scale)?;
            for l in &lines {
                println!("{l}");
            }
            Ok(if lines.iter().all(|l| l.pass) { EXIT_OK } else { EXIT_CHECK })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
