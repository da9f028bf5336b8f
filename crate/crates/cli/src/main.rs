use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vaudit::{cmd_label, cmd_report, cmd_run, cmd_stats, CliError, Overrides};
use vaudit_core::pipeline::RunMode;

#[derive(Parser)]
#[command(name = "vaudit", version, about = "Audit how VLM verifiers judge generated answers")]
struct Cli {
    /// JSON or TOML config file.
    #[arg(long, global = true, default_value = "vaudit.toml")]
    config: PathBuf,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    max_turns: Option<u32>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Run directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reuse finished examples from an interrupted run.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "self")]
    SelfCheck,
    Cross,
    Loop,
}

#[derive(Subcommand)]
enum Command {
    /// Fill in missing task labels by majority vote of three labelers.
    Label,
    /// Single-turn run in the configured mode.
    Run,
    /// Cross-verification run: every generator checked by every verifier.
    Cross,
    /// Generate, verify and revise for up to max_turns rounds.
    Loop,
    /// Fit the mixed models on the records of a run.
    Stats,
    /// Regenerate tables and plot data from a run directory.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mode = match cli.command {
        Command::Cross => Some(RunMode::Cross),
        Command::Loop => Some(RunMode::Loop),
        _ => cli.mode.map(|m| match m {
            Mode::SelfCheck => RunMode::SelfCheck,
            Mode::Cross => RunMode::Cross,
            Mode::Loop => RunMode::Loop,
        }),
    };
    let ov = Overrides {
        mode,
        max_turns: cli.max_turns,
        parallelism: cli.parallelism,
        out: cli.out,
        seed: cli.seed,
        resume: cli.resume,
    };
    let result: Result<String, CliError> = match cli.command {
        Command::Label => cmd_label(&cli.config, &ov).map(|s| serde_json::to_string(&s).unwrap_or_default()),
        Command::Run | Command::Cross | Command::Loop => {
            cmd_run(&cli.config, &ov).map(|s| serde_json::to_string(&s).unwrap_or_default())
        }
        Command::Stats => cmd_stats(&cli.config, &ov).map(|v| v.to_string()),
        Command::Report => cmd_report(&cli.config, &ov).map(|n| serde_json::to_string(&n).unwrap_or_default()),
    };
    match result {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
