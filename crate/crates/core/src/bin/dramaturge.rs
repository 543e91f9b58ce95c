use std::io::{self, BufRead};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use dramaturge::backend::CompletionBackend;
use dramaturge::cli::{self, BackendChoice, BackendSource, RunOptions};
use dramaturge::engine::Mode;
use dramaturge::service::{self, AppState, ServiceConfig};
use dramaturge::store::Store;

#[derive(Parser)]
#[command(
    name = "dramaturge",
    version,
    about = "Run and inspect trigger-driven LLM stories"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a story file.
    Validate {
        story: PathBuf,
        /// Exit 0 even when there are warnings.
        #[arg(long)]
        allow_warnings: bool,
    },
    /// Play one session and write .json/.txt exports.
    Run {
        story: PathBuf,
        #[arg(long, default_value = "live")]
        backend: BackendChoice,
        #[arg(long, default_value = "interactive")]
        mode: Mode,
        #[arg(long, default_value_t = 30)]
        max_turns: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "transcripts")]
        out: PathBuf,
    },
    /// Run many autonomous sessions and summarize them.
    Batch {
        story: PathBuf,
        #[arg(long, default_value = "live")]
        backend: BackendChoice,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        #[arg(long, default_value_t = 30)]
        max_turns: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "transcripts")]
        out: PathBuf,
    },
    /// Mean ± std over a directory of .json exports.
    Stats { dir: PathBuf },
    /// Start the HTTP service (DL_DATA_DIR, DL_BIND_ADDR).
    Serve {
        #[arg(long, default_value = "live")]
        backend: BackendChoice,
    },
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(cli::EXIT_ERRORS as u8)
        }
    }
}

fn run(args: Args) -> anyhow::Result<i32> {
    let mut stdout = io::stdout().lock();
    match args.command {
        Command::Validate {
            story,
            allow_warnings,
        } => Ok(cli::cmd_validate(&story, allow_warnings, &mut stdout)),
        Command::Run {
            story,
            backend,
            mode,
            max_turns,
            seed,
            out,
        } => {
            let opts = RunOptions {
                mode,
                max_turns,
                seed,
                out_dir: out,
            };
            let mut stdin = io::stdin().lock();
            let result = cli::cmd_run(
                &story,
                &backend,
                &opts,
                &mut stdin as &mut dyn BufRead,
                &mut stdout,
            )?;
            Ok(if cli::run_failed(&result.report) {
                1
            } else {
                0
            })
        }
        Command::Batch {
            story,
            backend,
            count,
            jobs,
            max_turns,
            seed,
            out,
        } => {
            let opts = RunOptions {
                mode: Mode::Autonomous,
                max_turns,
                seed,
                out_dir: out,
            };
            cli::cmd_batch(&story, &backend, count, jobs, &opts, &mut stdout)?;
            Ok(0)
        }
        Command::Stats { dir } => {
            cli::cmd_stats(&dir, &mut stdout)?;
            Ok(0)
        }
        Command::Serve { backend } => {
            let config = ServiceConfig::from_env()?;
            // Built outside the runtime: the blocking HTTP client owns one.
            let (backend, engine): (Arc<dyn CompletionBackend>, _) =
                BackendSource::load(&backend)?.instantiate(None);
            let state = AppState::new(Store::open(&config.data_dir)?, backend, engine);
            eprintln!("listening on {}", config.bind_addr);
            tokio::runtime::Runtime::new()?.block_on(service::serve(config, state))?;
            Ok(0)
        }
    }
}
