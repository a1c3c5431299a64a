use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use volterra_cli::manifest::{self, MANIFEST_NAME};
use volterra_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "vlab", version, about = "Numerical lab for Volterra Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-execute a manifest and compare artifact hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let err = CliError::Parse(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.status() as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.status() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    let threads = manifest::threads_from_env()?;
    match cmd {
        Cmd::Run { config, seed, out_dir } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let dir = manifest::output_dir(&cfg, out_dir.as_deref());
            let m = manifest::run_to_dir(&cfg, &dir, threads)?;
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
            for a in &m.artifacts {
                println!("{} {}", a.sha256, a.name);
            }
            println!("manifest {}", dir.join(MANIFEST_NAME).display());
            Ok(())
        }
        Cmd::Replay { manifest: path } => {
            let report = manifest::replay(&path, threads)?;
            print!("{}", report.render());
            if report.all_match() {
                Ok(())
            } else {
                let bad: Vec<&str> = report
                    .entries
                    .iter()
                    .filter(|e| !e.matches())
                    .map(|e| e.name.as_str())
                    .collect();
                Err(CliError::Mismatch(bad.join(", ")))
            }
        }
    }
}
