use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cascade_sgg::eval::Task;
use cascade_sgg::harness::{
    cmd_evaluate, cmd_generate, cmd_report, cmd_selftest, cmd_train, selftest_profile, EvaluateOptions, HarnessError, RunConfig, Stage,
    TrainOptions,
};
use cascade_sgg::pipeline::Method;

#[derive(Parser)]
#[command(name = "cascade-sgg", version, about = "Toy-scale cascade scene graph generation for oriented-box imagery")]
struct Cli {
    /// TOML run config.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set pipeline.rpcm.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

/// `--set` given after the subcommand. A clap global would keep only the
/// occurrences on one side of the subcommand, so each level has its own list.
#[derive(clap::Args)]
struct Sets {
    /// Dotted-path override applied after any given before the subcommand. Repeatable.
    #[arg(long = "set", id = "sub_set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its train/val/test split.
    Generate {
        #[command(flatten)]
        sets: Sets,
    },
    /// Train a stage and write its checkpoint and loss log.
    Train {
        #[arg(long, default_value = "all")]
        stage: Stage,
        /// Continue from the stage checkpoint if one exists.
        #[arg(long)]
        resume: bool,
        /// Stop after this epoch.
        #[arg(long)]
        until_epoch: Option<u64>,
        #[command(flatten)]
        sets: Sets,
    },
    /// Evaluate trained stages on a split.
    Evaluate {
        /// PredCls, SGCls or SGDet. Repeatable.
        #[arg(long = "task", default_value = "PredCls")]
        tasks: Vec<Task>,
        /// rpcm, frequency or oracle. Repeatable.
        #[arg(long = "method", default_value = "rpcm")]
        methods: Vec<Method>,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        sets: Sets,
    },
    /// Merge evaluation reports into one comparison table with plots.
    Report {
        /// Report JSON files or directories holding them; the report dir when omitted.
        inputs: Vec<PathBuf>,
        /// Output directory; the report dir when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        sets: Sets,
    },
    /// Small deterministic end-to-end run.
    Selftest {
        /// Use the configured sizes instead of the quick profile.
        #[arg(long)]
        full: bool,
        #[command(flatten)]
        sets: Sets,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut overrides = Vec::new();
    if matches!(cli.command, Command::Selftest { full: false, .. }) {
        overrides = selftest_profile();
    }
    overrides.extend(cli.overrides);
    let (Command::Generate { sets }
    | Command::Train { sets, .. }
    | Command::Evaluate { sets, .. }
    | Command::Report { sets, .. }
    | Command::Selftest { sets, .. }) = &cli.command;
    overrides.extend(sets.overrides.iter().cloned());
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Generate { .. } => {
            let m = cmd_generate(&cfg)?;
            for (name, e) in &m.splits {
                println!("{name}: {} scenes -> {}", e.count, cfg.paths.data_dir.join(&e.file).display());
            }
        }
        Command::Train { stage, resume, until_epoch, .. } => {
            for t in cmd_train(&cfg, &TrainOptions { stage, resume, until_epoch })? {
                let loss = t.final_loss.map_or("-".to_string(), |l| format!("{l:.4}"));
                println!("{}: epoch {} loss {loss} -> {}", t.stage, t.epochs_done, t.checkpoint.display());
            }
        }
        Command::Evaluate { tasks, methods, split, .. } => {
            for p in cmd_evaluate(&cfg, &EvaluateOptions { tasks, methods, split })? {
                println!("{}", p.display());
            }
        }
        Command::Report { inputs, out, .. } => {
            let inputs = if inputs.is_empty() { vec![cfg.paths.report_dir.clone()] } else { inputs };
            for p in cmd_report(&inputs, out.as_deref().unwrap_or(&cfg.paths.report_dir))? {
                println!("{}", p.display());
            }
        }
        Command::Selftest { .. } => {
            let (path, text) = cmd_selftest(&cfg)?;
            print!("{text}");
            println!("report: {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("bad usage");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: ").trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
