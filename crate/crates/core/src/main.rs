use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use poisrep::harness::{self, ExperimentConfig, HarnessError, Kind};

#[derive(Parser)]
#[command(name = "poisrep", version, about = "Poisson representable random sets: sampling, exact oracles and finitary codings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample X̄ on a window and report site densities.
    Sample(RunArgs),
    /// Exact P(X̄_S ≡ 1) and P(X̄_S ≡ 0), optionally against Monte Carlo.
    Oracle(RunArgs),
    /// δ bounds, the monotone coupling and the dominating IID density.
    Dominate(RunArgs),
    /// Finitary coding of a 1D pair process.
    CodePairs(RunArgs),
    /// Finitary coding on Z or Z² via nets.
    CodeGeneral(RunArgs),
    /// Censored fields and the dyadic refinement.
    Censored(RunArgs),
    /// Crossing-set chain: return times and the W recursion.
    Markov(RunArgs),
    /// Run a bundled scenario.
    Scenario {
        name: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// List bundled scenarios.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Output directory for CSV and JSON artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Spec file or `bundled:<name>`, overriding the config.
    #[arg(long)]
    spec: Option<String>,
    /// Kind parameters as inline JSON, overriding the config.
    #[arg(long)]
    params: Option<String>,
}

impl RunArgs {
    fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.replicas {
            cfg.replicas = r;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(s) = &self.spec {
            cfg.spec = Some(Value::String(s.clone()));
        }
        if let Some(p) = &self.params {
            cfg.params = serde_json::from_str(p)?;
        }
        Ok(cfg)
    }

    fn config(&self, kind: Kind) -> Result<ExperimentConfig, HarnessError> {
        let cfg = match &self.config {
            Some(path) => {
                let cfg = ExperimentConfig::load(path)?;
                if cfg.kind != kind {
                    return Err(HarnessError::Config(format!(
                        "config kind {} does not match subcommand {}",
                        cfg.kind.name(),
                        kind.name()
                    )));
                }
                cfg
            }
            None => ExperimentConfig { kind, spec: None, seed: 0, replicas: 1000, out: None, params: Value::Null },
        };
        self.apply(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    let cfg = match cli.command {
        Command::List => {
            for s in harness::catalog() {
                println!("{:<24} {}", s.name, s.anchor);
            }
            return Ok(());
        }
        Command::Scenario { name, args } => {
            let s = harness::scenario(&name).ok_or_else(|| HarnessError::Config(format!("unknown scenario {name}")))?;
            if args.config.is_some() {
                return Err(HarnessError::Config("scenario takes no --config".into()));
            }
            args.apply(s.config()?)?
        }
        Command::Sample(a) => a.config(Kind::Sample)?,
        Command::Oracle(a) => a.config(Kind::Oracle)?,
        Command::Dominate(a) => a.config(Kind::Dominate)?,
        Command::CodePairs(a) => a.config(Kind::CodePairs)?,
        Command::CodeGeneral(a) => a.config(Kind::CodeGeneral)?,
        Command::Censored(a) => a.config(Kind::Censored)?,
        Command::Markov(a) => a.config(Kind::Markov)?,
    };
    let out = harness::run(&cfg)?;
    for c in &out.checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(dir) = &cfg.out {
        println!("wrote {} files to {}", out.files.len() + 1, dir.display());
    } else {
        println!("{}", serde_json::to_string_pretty(&out.summary)?);
    }
    match out.checks.iter().find(|c| !c.passed) {
        Some(c) => Err(HarnessError::Tolerance(c.name.clone())),
        None => Ok(()),
    }
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
