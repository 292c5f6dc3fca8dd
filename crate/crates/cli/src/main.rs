use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pim_collectives_cli::{cmd_ablation, cmd_demo_gnn, cmd_run, CliError, Options};

#[derive(Parser)]
#[command(name = "pimcoll", version, about = "Simulated PIM collective communication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config or a sweep; prints one JSON report per run.
    Run(CommonArgs),
    /// Run each config under baseline, pr, pr+im and full; prints CSV.
    Ablation(CommonArgs),
    /// Alternating-dimension reduce-scatter / all-reduce demo.
    DemoGnn(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file.
    config: PathBuf,
    /// Also write the output to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV instead of JSON lines (run only).
    #[arg(long)]
    csv: bool,
    /// Skip the oracle comparison after each run.
    #[arg(long)]
    no_self_check: bool,
    /// Reject communication groups smaller than 8 PEs.
    #[arg(long)]
    strict_groups: bool,
}

impl CommonArgs {
    fn options(&self) -> Options {
        Options {
            out: self.out.clone(),
            csv: self.csv,
            self_check: !self.no_self_check,
            strict_groups: self.strict_groups,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result: Result<String, CliError> = match &cli.command {
        Command::Run(a) => cmd_run(&a.config, &a.options()),
        Command::Ablation(a) => cmd_ablation(&a.config, &a.options()),
        Command::DemoGnn(a) => cmd_demo_gnn(&a.config, &a.options()),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
