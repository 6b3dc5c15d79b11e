mod config;
mod error;
mod evaluate;
mod fit;
mod io;
mod prior;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Command, FileConfig, Globals};
use error::{CliError, CliResult};

fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let globals = Globals {
        seed: cli.seed.or(file.seed),
        threads: cli.threads.or(file.threads),
        out: cli.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
    };
    if let Some(t) = globals.threads {
        if t == 0 {
            return Err(CliError::validation("threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::validation(e.to_string()))?;
    }
    match cli.command {
        Command::SamplePrior(a) => prior::run(a.merged(&file.sample_prior), &globals),
        Command::Fit(a) => fit::run(a.merged(&file.fit), &globals),
        Command::Simulate(a) => simulate::run(a.merged(&file.simulate), &globals),
        Command::Evaluate(a) => evaluate::run(a.merged(&file.evaluate), &globals),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sbartlett {name}: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
