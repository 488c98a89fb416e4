use std::process::ExitCode;

use clap::Parser;
use ifid_cli::{commands, Cli, Status, EXIT_AWAITING_DECODE, THREADS_ENV};

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| anyhow::anyhow!("{THREADS_ENV}={raw:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap's own usage-error status (2) would collide with awaiting-decode
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| commands::run(&cli.resolve()?));
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            match outcome.status {
                Status::Done => ExitCode::SUCCESS,
                Status::AwaitingDecode => ExitCode::from(EXIT_AWAITING_DECODE),
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
