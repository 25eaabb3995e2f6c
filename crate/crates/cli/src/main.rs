use clap::Parser;
use spectrapipe::commands::{run, Cli};
use std::process::ExitCode;

/// Caps the rayon pool when `SPECTRAPIPE_THREADS` is set.
fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SPECTRAPIPE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("SPECTRAPIPE_THREADS: expected a positive integer, found `{v}`"))?;
        anyhow::ensure!(n > 0, "SPECTRAPIPE_THREADS must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| run(cli, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
