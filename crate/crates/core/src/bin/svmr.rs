use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svmr::app::{self, PipelineConfig, QueryArtifacts, QuerySource};
use svmr::benchmark::QuerySet;
use svmr::gradsuite::DEFAULT_SEEDS;

#[derive(Parser)]
#[command(name = "svmr", version, about = "Two-stage semantic video moment retrieval")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw (overrides synth.seed, train1.seed, train2.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra `key=value` config overrides, applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    top_videos: Option<usize>,
    #[arg(long, global = true)]
    soft_nms_sigma: Option<f64>,
    #[arg(long, global = true)]
    tiou_tau: Option<f64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a corpus from annotation files (V1 queries, V2 references).
    BuildCorpus {
        #[arg(long)]
        v1: PathBuf,
        #[arg(long)]
        v2: PathBuf,
    },
    /// Generate a synthetic corpus.
    SynthCorpus,
    TrainStage1 {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Embed the corpus references into a gallery index.
    EmbedGallery {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
    },
    TrainStage2 {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Retrieve moments for one feature file or a whole query split.
    Query {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, conflicts_with = "split")]
        features: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Finite-difference checks of every trainable operator and both losses.
    Gradcheck,
}

fn run(cli: Cli) -> svmr::Result<()> {
    let mut overrides = cli.overrides;
    if let Some(v) = cli.top_videos {
        overrides.push(format!("query.top_videos={v}"));
    }
    if let Some(v) = cli.soft_nms_sigma {
        overrides.push(format!("query.soft_nms_sigma={v}"));
    }
    if let Some(v) = cli.tiou_tau {
        overrides.push(format!("eval.tiou_tau={v}"));
    }
    let cfg = PipelineConfig::resolve(cli.config.as_deref(), &overrides, cli.seed)?;
    let out = &cli.out_dir;
    match cli.command {
        Command::BuildCorpus { v1, v2 } => {
            let c = app::build_corpus_from(&cfg, &v1, &v2, out)?;
            println!("references={} queries={}", c.references.len(), c.queries.len());
        }
        Command::SynthCorpus => {
            let c = app::synth_corpus(&cfg, out)?;
            println!("references={} queries={}", c.references.len(), c.queries.len());
        }
        Command::TrainStage1 { corpus } => {
            let r = app::train_stage1_cmd(&cfg, &corpus, out)?;
            println!("best_epoch={}", r.best_epoch);
        }
        Command::EmbedGallery { corpus, stage1 } => {
            let idx = app::embed_gallery(&stage1, &corpus, out)?;
            println!("indexed={}", idx.len());
        }
        Command::TrainStage2 { corpus } => {
            let r = app::train_stage2_cmd(&cfg, &corpus, out)?;
            println!("best_epoch={}", r.best_epoch);
        }
        Command::Query { corpus, stage1, stage2, index, features, split } => {
            let source = match (features, split) {
                (Some(f), _) => QuerySource::Features(f),
                (None, s) => QuerySource::Split(s.as_deref().unwrap_or("test").parse()?),
            };
            let art = QueryArtifacts { stage1, stage2, index, corpus };
            let o = app::query(&cfg, &art, &source, out)?;
            println!("candidates={} predictions={}", o.candidates.len(), o.predictions.len());
        }
        Command::Evaluate { corpus, predictions, candidates, split } => {
            let set: QuerySet = split.parse()?;
            let ev = app::evaluate(&cfg, &corpus, set, &predictions, &candidates, out)?;
            print!("{}", ev.report.to_text());
        }
        Command::Gradcheck => {
            let seeds = cli.seed.map_or(DEFAULT_SEEDS.to_vec(), |s| vec![s]);
            for c in app::gradcheck(&seeds)? {
                println!("check={} seed={} rel_err={:.3e} tol={:.0e} ok", c.name, c.seed, c.rel_err, c.tol);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error code={} exit={} message={:?}", e.code(), e.exit_code(), e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
