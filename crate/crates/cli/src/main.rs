use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use occutrend::experiment::write_synthetic_project;
use occutrend::{CliError, GroupBy, ModeSelection, Overrides, Pipeline, PipelineConfig, StageOutcome};
use occutrend_core::synth::SynthConfig;

/// Search-trend occupancy features for hourly building energy forecasting.
#[derive(Parser)]
#[command(name = "occutrend", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Which feature sets to train.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeSelection>,
    /// Train one model overall or one per correlation category.
    #[arg(long, global = true, value_enum)]
    group_by: Option<GroupBy>,
    /// GBDT seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides experiment.output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean and impute inputs; standardize trends.
    Ingest,
    /// Extract calendar signals and match each meter to a topic.
    Screen,
    /// Train the selected modes on the training year.
    Train,
    /// Score both modes on the validation year and write the report.
    Evaluate,
    /// Draw SVG charts from screening and evaluation outputs.
    Chart,
    /// Every stage in order, skipping those already up to date.
    RunAll,
    /// Write a synthetic corpus with a planted occupancy topic and a config for it.
    Synth,
}

fn print(outcomes: &[StageOutcome]) {
    for o in outcomes {
        let state = if o.cached { "up to date" } else { "done" };
        println!("{:<16} {:<10} {}", o.stage, state, o.dir.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Synth = cli.command {
        let out = cli
            .out
            .ok_or_else(|| CliError::Config("synth needs --out DIR".into()))?;
        let mut cfg = SynthConfig::default();
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        let config = write_synthetic_project(&out, &cfg)?;
        println!("wrote synthetic corpus; run `occutrend --config {} run-all`", config.display());
        return Ok(());
    }
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let overrides = Overrides {
        mode: cli.mode,
        group_by: cli.group_by,
        seed: cli.seed,
        out: cli.out,
    };
    let cfg = PipelineConfig::load(&path, &overrides)?;
    let pipeline = Pipeline::open(cfg)?;
    let outcomes = match cli.command {
        Command::Ingest => vec![pipeline.ingest()?],
        Command::Screen => vec![pipeline.screen()?],
        Command::Train => pipeline
            .cfg
            .experiment
            .mode
            .modes()
            .into_iter()
            .map(|m| pipeline.train(m))
            .collect::<Result<_, _>>()?,
        Command::Evaluate => vec![pipeline.evaluate()?],
        Command::Chart => vec![pipeline.chart()?],
        Command::RunAll => pipeline.run_all()?,
        Command::Synth => unreachable!(),
    };
    print(&outcomes);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
