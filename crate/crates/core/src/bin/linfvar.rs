use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

/// Residual, variational, diffuse-support and profile checks for gridded
/// maps, driven by a single JSON config.
#[derive(Parser)]
#[command(name = "linfvar", version, about)]
struct Args {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Output directory for CSV/JSON reports.
    #[arg(long, default_value = "./out")]
    out: PathBuf,

    /// Print per-check progress to stderr.
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let code = linfvar::runner::run_json_config(&text, &args.out, args.verbose);
    ExitCode::from(code as u8)
}
