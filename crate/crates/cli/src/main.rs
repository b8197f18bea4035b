use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use newstweet_cli::commands;
use newstweet_cli::config::PipelineConfig;
use newstweet_cli::pipeline::{execute_pipeline, PipelineCtx, Stage};
use newstweet_core::evaluation::MetricName;

#[derive(Parser)]
#[command(
    name = "newstweet",
    about = "Creator-context-aware retrieval of related tweets for news articles",
    version
)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the split, encoder, and training seeds in one knob.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated pipeline stages to run (alternative to a stage
    /// subcommand), e.g. --stages ingest,preprocess,train.
    #[arg(long, global = true, value_delimiter = ',')]
    stages: Option<Vec<String>>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Read input files, mine positive pairs, write the normalized corpus.
    Ingest,
    /// Split the dataset and prepare model-ready texts.
    Preprocess,
    /// Train the configured fusion model on the train split.
    Train,
    /// Encode queries, tweets, and creators with the trained model.
    Embed,
    /// Consolidate embeddings into the dense index artifact.
    Index,
    /// Produce dense and BM25 run files over the test split.
    Retrieve,
    /// Score run files against the qrels and write the metric report.
    Evaluate,
    /// Grid-search the late fusion weight on the dev split.
    TuneAlpha,
    /// Leave-one-attribute-out ablation of the creator context.
    Ablate,
    /// Compare two run files with paired t-tests.
    Compare {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Headline metric: p@1, p@5, r@1000, or mrr.
        #[arg(long, default_value = "mrr")]
        metric: String,
    },
    /// Print the attention-cost table for the configured (n, m) points.
    BenchCost,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, String> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| "--config <path> is required for this command".to_string())?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    Ok(config)
}

fn parse_stages(names: &[String]) -> Result<Vec<Stage>, String> {
    names
        .iter()
        .map(|name| Stage::parse(name.trim()).ok_or_else(|| format!("unknown stage `{name}`")))
        .collect()
}

fn run(mut cli: Cli) -> Result<(), (String, i32)> {
    let fail = |message: String| (message, 1);

    if let Some(stage_names) = &cli.stages {
        let config = load_config(&cli).map_err(fail)?;
        let stages = parse_stages(stage_names).map_err(fail)?;
        return execute_pipeline(&config, &stages).map_err(|e| (e.to_string(), e.exit_code()));
    }

    let Some(command) = cli.command.take() else {
        return Err(fail(
            "nothing to do: pass a subcommand or --stages (see --help)".to_string(),
        ));
    };

    match command {
        Command::Ingest => single_stage(&cli, Stage::Ingest),
        Command::Preprocess => single_stage(&cli, Stage::Preprocess),
        Command::Train => single_stage(&cli, Stage::Train),
        Command::Embed => single_stage(&cli, Stage::Embed),
        Command::Index => single_stage(&cli, Stage::Index),
        Command::Retrieve => single_stage(&cli, Stage::Retrieve),
        Command::Evaluate => single_stage(&cli, Stage::Evaluate),
        Command::TuneAlpha => {
            let config = load_config(&cli).map_err(fail)?;
            config.validate().map_err(fail)?;
            let ctx = PipelineCtx::new(config);
            commands::tune_alpha(&ctx)
                .map(|_| ())
                .map_err(|e| (e.to_string(), e.exit_code()))
        }
        Command::Ablate => {
            let config = load_config(&cli).map_err(fail)?;
            config.validate().map_err(fail)?;
            let ctx = PipelineCtx::new(config);
            commands::ablate(&ctx).map_err(|e| (e.to_string(), e.exit_code()))
        }
        Command::Compare {
            run_a,
            run_b,
            qrels,
            metric,
        } => {
            let metric = MetricName::parse(&metric)
                .ok_or_else(|| fail(format!("unknown metric `{metric}`")))?;
            commands::compare_runs(&run_a, &run_b, &qrels, metric)
                .map(|_| ())
                .map_err(|e| (e.to_string(), e.exit_code()))
        }
        Command::BenchCost => {
            let config = load_config(&cli).map_err(fail)?;
            let ctx = PipelineCtx::new(config);
            commands::bench_cost(&ctx);
            Ok(())
        }
    }
}

fn single_stage(cli: &Cli, stage: Stage) -> Result<(), (String, i32)> {
    let config = load_config(cli).map_err(|m| (m, 1))?;
    execute_pipeline(&config, &[stage]).map_err(|e| (e.to_string(), e.exit_code()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((message, code)) => {
            eprintln!("error: {message}");
            ExitCode::from(code.clamp(0, 255) as u8)
        }
    }
}
