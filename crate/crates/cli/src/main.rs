use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use labflow::engine::{self, Overrides, Scenario};
use labflow::scheduler::Policy;

/// Orchestrates and simulates an automated nucleic-acid lab.
#[derive(Parser, Debug)]
#[command(name = "labflow", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario config file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Scheduling policy: `serial` or `dynamic`.
    #[arg(long, global = true)]
    policy: Option<Policy>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving one subdirectory per run.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Maximum optimizer iterations.
    #[arg(long, global = true)]
    budget: Option<usize>,
}

impl Common {
    fn scenario(&self) -> Result<&PathBuf> {
        self.scenario.as_ref().context("--scenario is required")
    }

    fn overrides(&self) -> Overrides {
        Overrides {
            policy: self.policy,
            seed: self.seed,
            budget: self.budget,
            out_dir: Some(self.out.clone()),
            payload: None,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run,
    /// Run a batch scenario under both policies and report the difference.
    Compare,
    /// Write a file into strands and read it back.
    #[command(subcommand)]
    Store(Store),
    /// Compile templates and report lint findings.
    Lint {
        /// Only templates of this task.
        #[arg(long)]
        task: Option<String>,
        /// Remove the step at this index before compiling.
        #[arg(long)]
        drop_step: Option<usize>,
    },
    #[command(subcommand)]
    Registry(RegistryCmd),
}

#[derive(Subcommand, Debug)]
enum Store {
    Write {
        file: PathBuf,
    },
    /// Re-sequence and decode the strands of an earlier `store write`.
    Read {
        run_id: String,
    },
}

#[derive(Subcommand, Debug)]
enum RegistryCmd {
    /// Load a registry and verify its capability index.
    Check { path: Option<PathBuf> },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match cli.command {
        Command::Run => {
            let rec = engine::run_scenario(c.scenario()?, &c.overrides())?;
            eprintln!("wrote {}", rec.out_dir.display());
            print!("{}", toml::to_string(&rec)?);
        }
        Command::Compare => {
            let cmp = engine::compare_policies(c.scenario()?, &c.overrides())?;
            print!("{}", cmp.to_toml());
        }
        Command::Store(Store::Write { file }) => {
            let data = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let ov = Overrides {
                payload: Some(data),
                ..c.overrides()
            };
            let rec = engine::run_scenario(c.scenario()?, &ov)?;
            if rec.mode != engine::Mode::Storage {
                bail!("{} is not a storage scenario", rec.scenario);
            }
            eprintln!("wrote {}", rec.out_dir.display());
            print!("{}", toml::to_string(&rec)?);
        }
        Command::Store(Store::Read { run_id }) => {
            let (bytes, path) = engine::store_read(&c.out.join(&run_id))?;
            eprintln!("recovered {} bytes into {}", bytes.len(), path.display());
            println!("{}", path.display());
        }
        Command::Lint { task, drop_step } => {
            let sc = Scenario::load(c.scenario()?)?;
            let (report, errors) = engine::lint_templates(&sc, task.as_deref(), drop_step)?;
            print!("{report}");
            if errors {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Registry(RegistryCmd::Check { path }) => {
            let path = match path {
                Some(p) => p,
                None => {
                    let sc = Scenario::load(c.scenario()?)?;
                    sc.path.parent().unwrap_or(&sc.path).join(&sc.config.registry)
                }
            };
            print!("{}", engine::registry_check(&path)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
