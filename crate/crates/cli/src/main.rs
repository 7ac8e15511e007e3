use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memos_cli::{pipeline, CliError, Comparison, Method, Run, RunConfig};

#[derive(Parser)]
#[command(name = "memos", version, about = "Spatial EMOS postprocessing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// raw, global, local or memos.
    #[arg(long, global = true)]
    method: Option<Method>,
    /// Directory holding all artifacts of the run.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known coefficient fields.
    Simulate,
    /// Triangulate the stations of the dataset.
    Mesh,
    /// Fit the method on rolling windows for every evaluation day.
    Fit,
    /// Write predictive distributions from the fitted parameters.
    Predict,
    /// Build ECC and independence multivariate ensembles.
    Ecc,
    /// Score all available methods; optionally compare two of them.
    Verify {
        /// Two methods for a Diebold-Mariano test, e.g. `memos local`.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        compare: Option<Vec<String>>,
        /// Score used by the comparison: crps, ae or es.
        #[arg(long, default_value = "crps", requires = "compare")]
        score: String,
        /// Compare daily means over sites instead of single cases.
        #[arg(long, requires = "compare")]
        daily_mean: bool,
    },
}

fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let run = Run::new(config, cli.out);
    let method = || cli.method.ok_or_else(|| CliError::Usage("this command needs --method".into()));
    let report = match cli.command {
        Command::Simulate => pipeline::simulate(&run)?,
        Command::Mesh => pipeline::mesh(&run)?,
        Command::Fit => pipeline::fit(&run, method()?)?,
        Command::Predict => pipeline::predict(&run, method()?)?,
        Command::Ecc => pipeline::ecc(&run, method()?)?,
        Command::Verify {
            compare,
            score,
            daily_mean,
        } => {
            let cmp = compare.map(|v| Comparison {
                a: v[0].clone(),
                b: v[1].clone(),
                score,
                daily_mean,
            });
            pipeline::verify(&run, cmp.as_ref())?
        }
    };
    Ok(report.lines)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
