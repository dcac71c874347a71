use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ctiqa_core::dissim::AssemblyMode;
use ctiqa_core::pipeline::{
    self, mode_name, ExperimentConfig, Layout, PipelineError, RunOptions, SplitSummary, StageStatus,
};

#[derive(Parser, Debug)]
#[command(name = "ctiqa", version, about = "Low-dose CT quality assessment pipeline")]
struct Cli {
    /// Experiment config (TOML, or JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-derive every stage seed from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Evaluator input assembly; overrides the config.
    #[arg(long, global = true, value_enum)]
    ablation: Option<Ablation>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Ablation {
    #[value(name = "d-biqa")]
    DBiqa,
    #[value(name = "maniqa", alias = "maniqa-ablation")]
    Maniqa,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate phantoms, reconstructions and proxy-MOS labels.
    Simulate,
    /// Train the conditional DDPM on the training split.
    TrainDdpm {
        /// Pause after this many iterations; rerun to resume.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Sample primary content for every image.
    InferPrimary,
    /// Build dissimilarity maps and evaluator inputs.
    Dissim,
    /// Train the quality evaluator.
    TrainEvaluator {
        /// Pause after this many epochs; rerun to resume.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score both splits and write predictions and summaries.
    Evaluate,
    /// Collect evaluated methods into the method × metric table.
    Metrics,
    /// Run every stage for the selected mode.
    Run,
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    match cli.ablation {
        Some(Ablation::DBiqa) => cfg.evaluator.ablation = AssemblyMode::DBiqa,
        Some(Ablation::Maniqa) => cfg.evaluator.ablation = AssemblyMode::ManiqaAblation,
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_status(stage: &str, status: StageStatus) {
    match status {
        StageStatus::Completed => println!("{stage}: done"),
        StageStatus::UpToDate => println!("{stage}: up to date"),
        StageStatus::Paused { done, total } => println!("{stage}: paused at {done}/{total}"),
    }
}

fn print_summaries(rows: &[SplitSummary]) {
    println!("{:<16} {:<6} {:>5} {:>8} {:>8} {:>8} {:>8}", "method", "split", "n", "PLCC", "SROCC", "KROCC", "overall");
    for s in rows {
        println!(
            "{:<16} {:<6} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            s.method,
            s.split.as_str(),
            s.n,
            s.plcc,
            s.srocc,
            s.krocc,
            s.overall
        );
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    let threads = if cli.deterministic { Some(1) } else { cli.workers };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| PipelineError::Internal(e.to_string()))?;
    }
    let layout = Layout::new(&cfg.paths.root);
    let mode = cfg.evaluator.ablation;
    let opts = |stop_after| RunOptions { parallel: !cli.deterministic, stop_after };
    let skip = |stage: &str| println!("{stage}: skipped ({} uses no primary content)", mode_name(mode));
    match &cli.command {
        Command::Simulate => {
            let rows = pipeline::simulate(&cfg, &layout)?;
            println!("simulate: {} images in {}", rows.len(), layout.dataset().display());
        }
        Command::TrainDdpm { stop_after } => {
            report_status("train-ddpm", pipeline::train_ddpm_stage(&cfg, &layout, opts(*stop_after))?)
        }
        Command::InferPrimary if mode == AssemblyMode::ManiqaAblation => skip("infer-primary"),
        Command::InferPrimary => report_status("infer-primary", pipeline::infer_primary(&cfg, &layout, opts(None))?),
        Command::Dissim if mode == AssemblyMode::ManiqaAblation => skip("dissim"),
        Command::Dissim => report_status("dissim", pipeline::write_dissim(&cfg, &layout, opts(None))?),
        Command::TrainEvaluator { stop_after } => {
            report_status("train-evaluator", pipeline::train_evaluator_stage(&cfg, &layout, mode, opts(*stop_after))?)
        }
        Command::Evaluate => print_summaries(&pipeline::evaluate(&cfg, &layout, mode, opts(None))?),
        Command::Metrics => {
            let all = pipeline::metrics_table(&layout)?;
            print_summaries(&all);
            println!("table: {}", layout.table().display());
        }
        Command::Run => {
            pipeline::run_all(&cfg, &layout, mode, opts(None))?;
            print_summaries(&pipeline::metrics_table(&layout)?);
        }
        Command::PrintConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
