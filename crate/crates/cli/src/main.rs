use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iit_cli::{cmd_analytic, cmd_gamma, cmd_solve, cmd_verify, CliError, ExperimentConfig, Outcome};

#[derive(Parser)]
#[command(name = "iit", version, about = "Optimal release strategies for Wolbachia population replacement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form quantities and bang-bang policies of the reduced model.
    Analytic(Common),
    /// Direct-transcription solve of the configured problem.
    Solve(Common),
    /// First-order optimality certificate for a reduced-model control.
    Verify {
        #[command(flatten)]
        common: Common,
        /// `report.json` from `solve`; the analytic policy when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Distance between the full and reduced models along an eps ladder.
    Gamma(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `problem.horizon=250`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("run.seed={seed}"));
        }
        let cfg = ExperimentConfig::load(&self.config, &overrides)?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.run.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Analytic(c) => {
            let (cfg, out) = c.load()?;
            cmd_analytic(&cfg, &out)
        }
        Command::Solve(c) => {
            let (cfg, out) = c.load()?;
            cmd_solve(&cfg, &out)
        }
        Command::Verify { common, report } => {
            let (cfg, out) = common.load()?;
            cmd_verify(&cfg, report.as_deref(), &out)
        }
        Command::Gamma(c) => {
            let (cfg, out) = c.load()?;
            cmd_gamma(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            let m = &outcome.manifest;
            println!("{}", serde_json::to_string_pretty(&m.summary).expect("summary serializes"));
            for note in &m.notes {
                eprintln!("note: {note}");
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
