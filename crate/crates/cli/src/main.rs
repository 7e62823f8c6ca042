use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dts_core::par;
use dts_core::pipeline::{run, PipelineConfig, PipelineError, RunOptions, Stage, Threads};

const STAGES: &str = "synth, ingest, graph, train-kge, train-gatne, index, recall, carousels, eval, all";

/// Offline pipeline for aspect-headed recommendation carousels.
#[derive(Debug, Parser)]
#[command(name = "dts", version)]
struct Cli {
    /// Stage to run: synth, ingest, graph, train-kge, train-gatne, index,
    /// recall, carousels, eval, or all (every stage after synth).
    stage: String,

    /// Pipeline config (TOML).
    #[arg(long, short)]
    config: PathBuf,

    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads: a count, or "det" for the single-threaded deterministic mode.
    #[arg(long)]
    threads: Option<String>,

    /// Accept upstream artifacts produced under a different config.
    #[arg(long)]
    force: bool,

    /// Attach the best K ranked headers to every carousel.
    #[arg(long, value_name = "K")]
    top_k_headers: Option<usize>,
}

fn stages(name: &str) -> Result<Vec<Stage>, PipelineError> {
    if name == "all" {
        return Ok(Stage::PIPELINE.to_vec());
    }
    Stage::from_name(name)
        .map(|s| vec![s])
        .ok_or_else(|| PipelineError::Config(format!("unknown stage {name:?} (expected one of: {STAGES})")))
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let stages = stages(&cli.stage)?;
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(t) = &cli.threads {
        config.threads = Threads::parse(t)?;
    }
    if let Some(k) = cli.top_k_headers {
        config.recall.top_k_headers = Some(k);
    }
    config.validate()?;
    if let Some(n) = config.threads.count() {
        if !par::init_pool(n) {
            log::warn!("could not size the worker pool to {n} threads");
        }
    }

    let records = run(&stages, &config, RunOptions { force: cli.force })?;
    for (stage, rec) in &records {
        log::info!("{stage}: {} outputs, {:.2}s", rec.outputs.len(), rec.seconds);
    }
    if stages.contains(&Stage::Eval) {
        let path = config.paths.artifacts.join("metrics.json");
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Io { path: path.display().to_string(), source: e })?;
        print!("{text}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DTS_LOG", "info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
