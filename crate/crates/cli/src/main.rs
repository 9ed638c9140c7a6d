use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use frac_heat_lab::run::EXIT_INVALID;
use frac_heat_lab::{run, ExperimentConfig, Mode};

/// Runs a fractional heat equation experiment from a JSON config.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// experiment config (JSON)
    config: PathBuf,
    /// overrides the mode in the config
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// output directory (default: the config's `output`, else `out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// worker threads for sweeps
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Some(k) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_INVALID as u8);
        }
    }
    let (mut cfg, bytes) = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID as u8);
        }
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    let out = args.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let cache = std::env::var_os("FRACHEAT_CACHE").map(PathBuf::from);
    match run(&cfg, &args.config, &bytes, &out, cache.as_deref()) {
        Ok(s) => {
            if s.exit_code != 0 {
                eprintln!("numerical failure; see {}", s.out_dir.join("result.json").display());
            }
            ExitCode::from(s.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
