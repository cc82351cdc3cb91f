mod artifacts;
mod cli;
mod config;
mod report;
mod stages;

use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::Parser;

use crate::artifacts::{Store, EFFECTIVE_CONFIG};
use crate::cli::{Cli, Command};
use crate::config::PipelineConfig;

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cli.command.apply(&mut cfg);
    cfg.apply_seed(cli.seed);
    cfg.validate()?;
    let store = Store::new(&cli.out_dir)?;
    store.write_plain_json(EFFECTIVE_CONFIG, &cfg)?;
    let t0 = Instant::now();
    let line = match &cli.command {
        Command::Synth(_) => stages::synth(&store, &cfg)?,
        Command::Split(_) => stages::split(&store, &cfg)?,
        Command::SelectFeatures(_) => stages::select_features(&store, &cfg)?,
        Command::TrainKernel(_) => stages::train_kernel_stage(&store, &cfg)?,
        Command::TuneDp(_) => stages::tune_dp(&store, &cfg)?,
        Command::FindDps(a) => stages::find_dps(&store, a)?,
        Command::Cluster(_) => stages::cluster(&store, &cfg)?,
        Command::Compress(_) => stages::compress(&store, &cfg)?,
        Command::Solve(_) => stages::solve(&store, &cfg)?,
        Command::Evaluate(_) => stages::evaluate(&store, &cfg)?,
        Command::Report(_) => report::report(&store, &cfg)?,
        Command::Pipeline(_) => {
            stages::pipeline(&store, &cfg)?;
            format!("pipeline: done in {:.1}s", t0.elapsed().as_secs_f64())
        }
    };
    println!("{line}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stage = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{stage}]: {e:#}");
            ExitCode::FAILURE
        }
    }
}
