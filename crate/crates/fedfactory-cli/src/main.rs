//! `fedfactory`: configuration-driven experiment runner. One TOML file pins
//! an experiment end to end; subcommands execute runs and sweeps, apply
//! unlearning requests to stored factory matrices, verify the
//! distribution-matching bounds numerically, and pivot results into summary
//! tables. Exit codes: 0 success, 1 runtime failure, 2 invalid config.

mod config;
mod report;
mod runner;
mod theory;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Problem with the invocation or config file; exits 2.
    Config(String),
    /// Failure while executing a valid request; exits 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(anyhow::anyhow!("{e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "fedfactory",
    version,
    about = "Federated factory experiment runner"
)]
struct Cli {
    /// Override the config file's experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment from a TOML config.
    Run { config: PathBuf },
    /// Run the base config once per value of --alphas or --seeds.
    Sweep {
        config: PathBuf,
        /// Comma-separated partition α values; "silo" selects the silo
        /// endpoint.
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Apply an unlearning request to a stored factory matrix, then retrain
    /// and re-evaluate from the resynthesized buffer.
    Unlearn {
        config: PathBuf,
        /// Directory holding a matrix manifest (a run's `matrix/`).
        #[arg(long)]
        matrix: PathBuf,
        /// One of vertical:K, horizontal:C, targeted:C,K.
        #[arg(long)]
        request: String,
    },
    /// Numerically verify the distribution-matching bounds.
    VerifyTheory {
        #[arg(long, default_value_t = 1000)]
        lemma1_count: usize,
        #[arg(long, default_value_t = 500)]
        theorem1_count: usize,
        #[arg(long, default_value_t = 10_000)]
        pinsker_count: usize,
        #[arg(long, hide = true)]
        inject_kl_error: bool,
    },
    /// Summarize a results file into quality and cost tables.
    Report { results: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn print_line(line: &runner::ResultsLine) {
    println!(
        "run {} {} partition={} seed={} accuracy={:.4} auroc={:.4}",
        &line.run_id[..12],
        line.protocol,
        line.partition,
        line.seed,
        line.accuracy,
        line.auroc
    );
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = config::load_config(&config, cli.seed, cli.out.as_deref())?;
            let output = runner::execute_run(&cfg)?;
            let results =
                runner::append_results(cfg.out_dir()?, std::slice::from_ref(&output.line))?;
            print_line(&output.line);
            println!("artifacts: {}", output.run_dir.display());
            println!("results: {}", results.display());
            Ok(())
        }
        Command::Sweep {
            config,
            alphas,
            seeds,
        } => {
            let cfg = config::load_config(&config, cli.seed, cli.out.as_deref())?;
            let axis = match (alphas.is_empty(), seeds.is_empty()) {
                (false, true) => runner::SweepAxis::Alphas(alphas),
                (true, false) => runner::SweepAxis::Seeds(seeds),
                (true, true) => {
                    return Err(CliError::Config("sweep: pass --alphas or --seeds".into()))
                }
                (false, false) => {
                    return Err(CliError::Config(
                        "sweep: --alphas and --seeds are mutually exclusive".into(),
                    ))
                }
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cli.jobs.unwrap_or(0))
                .build()
                .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
            let (summary, lines) = pool.install(|| runner::run_sweep(&cfg, &axis))?;
            for line in &lines {
                print_line(line);
            }
            println!("summary: {}", summary.display());
            Ok(())
        }
        Command::Unlearn {
            config,
            matrix,
            request,
        } => {
            let cfg = config::load_config(&config, cli.seed, cli.out.as_deref())?;
            let request = runner::parse_request(&request)?;
            let (audit, report) = runner::run_unlearn(&cfg, &matrix, request)?;
            println!(
                "unlearn {:?}: deleted {} cells, {} survive, accuracy={:.4} auroc={:.4}",
                report.request,
                report.deleted_cells.len(),
                report.surviving_cells,
                report.accuracy,
                report.auroc
            );
            if !report.skipped_classes.is_empty() {
                println!("auroc skipped classes: {:?}", report.skipped_classes);
            }
            println!("audit: {}", audit.display());
            Ok(())
        }
        Command::VerifyTheory {
            lemma1_count,
            theorem1_count,
            pinsker_count,
            inject_kl_error,
        } => {
            let opts = theory::TheoryOptions {
                lemma1_count,
                theorem1_count,
                pinsker_count,
                seed: cli.seed.unwrap_or(0),
                inject_kl_error,
            };
            let out = cli.out.unwrap_or_else(|| PathBuf::from("."));
            let path = theory::run_verify_theory(&opts, &out)?;
            println!("report: {}", path.display());
            Ok(())
        }
        Command::Report { results } => {
            let out = cli
                .out
                .clone()
                .or_else(|| results.parent().map(|p| p.to_path_buf()))
                .unwrap_or_else(|| PathBuf::from("."));
            let (t1, t2) = report::run_report(&results, &out)?;
            println!("table1: {}", t1.display());
            println!("table2: {}", t2.display());
            Ok(())
        }
    }
}
