use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thematic::pipeline::{
    cmd_classify, cmd_distribute, cmd_evaluate, cmd_evaluate_metrics, cmd_ingest, cmd_rank, render_ranking,
    ClassifyOptions, EvalOptions, PipelineError, RunConfig,
};

/// Codebook-driven thematic classification of social-media posts.
#[derive(Debug, Parser)]
#[command(name = "thematic", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed override, e.g. `sampling=7`; keys: sampling, exemplar, bootstrap.
    #[arg(long = "seed", global = true, value_name = "KEY=N")]
    seeds: Vec<String>,
    /// Refuse remote backends.
    #[arg(long, global = true)]
    offline: bool,
    /// Continue an interrupted classification run.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, filter, clean, split and sample the corpus.
    Ingest,
    /// Classify the working corpus with every configured backend.
    Classify {
        /// Stop after this many new records (leaves the run resumable).
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Score stored predictions against the gold labels.
    Evaluate {
        /// Run directory or results file; repeatable. Defaults to the output dir.
        #[arg(long = "store", value_name = "PATH")]
        stores: Vec<PathBuf>,
        /// Report directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Rank an external metrics table instead of scoring stores.
        #[arg(long, value_name = "TABLE", conflicts_with = "stores")]
        metrics: Option<PathBuf>,
    },
    /// Theme distribution of stored predictions.
    Distribute {
        #[arg(long = "store", value_name = "PATH")]
        stores: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Average rank over a metrics table (CSV or TSV).
    Rank { table: PathBuf },
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| PipelineError::Usage("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    for s in &cli.seeds {
        cfg.override_seed(s)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, PipelineError> {
    match &cli.command {
        Command::Ingest => Ok(cmd_ingest(&load_config(cli)?)?.summary.to_string()),
        Command::Classify { stop_after } => {
            let opts = ClassifyOptions { offline: cli.offline, resume: cli.resume, stop_after: *stop_after };
            Ok(cmd_classify(&load_config(cli)?, &opts)?.to_string())
        }
        Command::Evaluate { metrics: Some(table), out, .. } => {
            Ok(cmd_evaluate_metrics(table, out.as_deref())?.render())
        }
        Command::Evaluate { stores, out, .. } => {
            let opts = EvalOptions { stores: stores.clone(), out_dir: out.clone() };
            Ok(cmd_evaluate(&load_config(cli)?, &opts)?.render())
        }
        Command::Distribute { stores, out } => {
            let opts = EvalOptions { stores: stores.clone(), out_dir: out.clone() };
            Ok(cmd_distribute(&load_config(cli)?, &opts)?.render())
        }
        Command::Rank { table } => Ok(render_ranking(&cmd_rank(Path::new(table))?)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
