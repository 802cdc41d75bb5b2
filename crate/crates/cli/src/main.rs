//! `metadialog` — drive the meta-context dialogue pipeline from a flat
//! key-value config: preprocess a corpus, mine topic/query/entity
//! attributes, assemble special-token instances, train and sample a small
//! transformer LM, and score the generations.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metadialog_core::Error;

use config::{expand_grid, parse_config, ConfigFile};
use stages::Ctx;

#[derive(Parser)]
#[command(name = "metadialog", version, about = "Meta-context dialogue pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct StageArgs {
    /// Key-value configuration file; relative paths resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Recompute even when outputs are newer than inputs.
    #[arg(long)]
    force: bool,
    /// Override the configured seed for every stage (grid.seed still wins per run).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ingest and clean the raw corpus into the workdir store.
    Preprocess(StageArgs),
    /// Fit the LDA topic model on the cleaned corpus.
    MineTopics(StageArgs),
    /// Train the query classifier on a labeled utterance set.
    TrainQueryClf(StageArgs),
    /// Build the phrase document-frequency table for entity scoring.
    MineEntities(StageArgs),
    /// Assemble serialized training instances with meta-context attributes.
    Assemble(StageArgs),
    /// Train the BPE tokenizer and the transformer LM.
    TrainLm(StageArgs),
    /// Generate responses for every instance prompt.
    Generate(StageArgs),
    /// Score generations against references and write the report.
    Evaluate(StageArgs),
    /// Run every stage the configured mode needs, in order.
    Pipeline(StageArgs),
}

impl Cmd {
    fn args(&self) -> &StageArgs {
        match self {
            Cmd::Preprocess(a)
            | Cmd::MineTopics(a)
            | Cmd::TrainQueryClf(a)
            | Cmd::MineEntities(a)
            | Cmd::Assemble(a)
            | Cmd::TrainLm(a)
            | Cmd::Generate(a)
            | Cmd::Evaluate(a)
            | Cmd::Pipeline(a) => a,
        }
    }

    fn stage(&self) -> fn(&Ctx<'_>) -> metadialog_core::Result<()> {
        match self {
            Cmd::Preprocess(_) => stages::preprocess,
            Cmd::MineTopics(_) => stages::mine_topics,
            Cmd::TrainQueryClf(_) => stages::train_query_clf,
            Cmd::MineEntities(_) => stages::mine_entities,
            Cmd::Assemble(_) => stages::assemble,
            Cmd::TrainLm(_) => stages::train_lm,
            Cmd::Generate(_) => stages::generate,
            Cmd::Evaluate(_) => stages::evaluate,
            Cmd::Pipeline(_) => stages::pipeline,
        }
    }
}

/// Stable exit code per error class.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::MissingArtifact { .. } => 3,
        Error::Io(_) | Error::Malformed { .. } | Error::Data(_) => 4,
        Error::Diverged(_) => 5,
    }
}

fn run(cmd: &Cmd) -> metadialog_core::Result<()> {
    let args = cmd.args();
    let mut file: ConfigFile = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        file.base.apply_seed(seed);
    }
    if !file.grid.is_empty() && !matches!(cmd, Cmd::Pipeline(_)) {
        return Err(Error::config("grid.* keys apply only to the `pipeline` subcommand"));
    }
    let runs = expand_grid(&file)?;
    let many = runs.len() > 1;
    for (i, run) in runs.iter().enumerate() {
        if many {
            println!("== grid-{} of {}: {} ==", i + 1, runs.len(), run.label);
        }
        let ctx = Ctx { cfg: &run.config, config_path: &args.config, force: args.force };
        cmd.stage()(&ctx)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
