use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use polcoord::harness::{Pipeline, RunConfig};
use polcoord::recommender::Method;

#[derive(Parser)]
#[command(name = "polcoord", version, about = "Political-coordinate news recommendation pipeline")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// 1000 users over 4000 articles.
    #[arg(long, global = true, conflicts_with = "desk")]
    paper_scale: bool,
    /// 50 users, 200 articles, 2 epochs.
    #[arg(long, global = true)]
    desk: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    GenCorpus,
    Simulate,
    TrainDisentangler,
    BuildCpc,
    Recommend {
        #[arg(long, value_parser = parse_method)]
        method: Method,
    },
    Evaluate,
    RunAll,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: polcoord::Error| e.to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if cli.paper_scale {
        config.apply_paper_scale();
    }
    if cli.desk {
        config.apply_desk();
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = cli.out {
        config.out_dir = o;
    }
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring thread pool")?;
    }
    let pipeline = Pipeline::new(config)?;
    match cli.command {
        Command::GenCorpus => {
            pipeline.gen_corpus()?;
        }
        Command::Simulate => {
            pipeline.simulate()?;
        }
        Command::TrainDisentangler => {
            pipeline.train_disentangler()?;
        }
        Command::BuildCpc => {
            pipeline.build_cpc()?;
        }
        Command::Recommend { method } => {
            pipeline.recommend(method)?;
        }
        Command::Evaluate => {
            pipeline.evaluate()?;
        }
        Command::RunAll => {
            pipeline.run_all()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
