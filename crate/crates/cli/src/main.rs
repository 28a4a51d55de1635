//! `pfpl`: validate configs, run experiments and sweeps, rebuild reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pfpl_core::config::ExperimentConfig;
use pfpl_core::runner::{self, parse_axis};
use pfpl_core::{Error, Result};

#[derive(Parser)]
#[command(name = "pfpl", version, about = "Personalized federated prototype learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve and check a config, printing the result.
    Validate(ConfigArgs),
    /// Run one experiment and write its artifact tree.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run every point of a parameter grid.
    Sweep {
        /// Grid axis as `key=v1,v2,...`; repeat for a cartesian product.
        #[arg(long = "grid", value_name = "KEY=VALUES", required = true)]
        grid: Vec<String>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Rebuild metrics.csv and summary.json from a finished run.
    Report {
        /// Run directory.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides for any config key, e.g. `--lambda=2 --optim.eta 0.05`.
    #[arg(
        value_name = "--KEY=VALUE",
        trailing_var_arg = true,
        allow_hyphen_values = true,
        num_args = 0..
    )]
    overrides: Vec<String>,
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    force: bool,
}

/// Turn `--key=value` and `--key value` tokens into pairs.
fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut iter = tokens.iter();
    while let Some(tok) = iter.next() {
        let Some(flag) = tok.strip_prefix("--") else {
            return Err(Error::Config {
                key: tok.clone(),
                message: "expected --key=value".into(),
            });
        };
        match flag.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = iter.next().ok_or_else(|| Error::Config {
                    key: flag.to_string(),
                    message: "missing value".into(),
                })?;
                out.push((flag.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::resolve(self.config.as_deref(), &parse_overrides(&self.overrides)?)
    }
}

fn output_dir(args: &OutputArgs, config: &ExperimentConfig) -> Result<PathBuf> {
    args.out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::Config {
            key: "output_dir".into(),
            message: "pass --out or set output_dir".into(),
        })
}

fn print_final(dir: &Path, acc: f64, upload: usize) {
    println!(
        "{}: final macro accuracy {acc:.4}, {upload} scalars uploaded",
        dir.display()
    );
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(args) => {
            print!("{}", args.resolve()?.to_text());
        }
        Command::Run { config, output } => {
            let cfg = config.resolve()?;
            let dir = output_dir(&output, &cfg)?;
            let result = runner::run(&cfg, &dir, output.force)?;
            print_final(&dir, result.final_macro_accuracy, result.upload_total);
        }
        Command::Sweep {
            grid,
            config,
            output,
        } => {
            let cfg = config.resolve()?;
            let axes = grid.iter().map(|g| parse_axis(g)).collect::<Result<Vec<_>>>()?;
            let dir = output_dir(&output, &cfg)?;
            for p in runner::sweep(&cfg, &axes, &dir, output.force)? {
                println!(
                    "p{:03} [{}]: final macro accuracy {:.4}",
                    p.index,
                    p.values.join(", "),
                    p.result.final_macro_accuracy
                );
            }
        }
        Command::Report { dir } => {
            let result = runner::report(&dir)?;
            print_final(&dir, result.final_macro_accuracy, result.upload_total);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
