//! Command-line interface.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tailqa_core::filter::LedgerFile;
use tailqa_core::kg::Catalog;
use tailqa_core::rerank::CombineRule;
use tailqa_core::sampler::Candidate;
use tailqa_core::synthetic::SyntheticConfig;
use tailqa_triage::TriageState;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::read_jsonl;
use crate::manifest::{StageManifest, StageStatus};
use crate::report::report;
use crate::stages::{self, CANDIDATES_FILE};
use crate::synth::write_synthetic;

#[derive(Debug, Parser)]
#[command(name = "tailqa", version, about = "Build and evaluate long-tail QA datasets from a knowledge graph")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Pipeline config file.
    #[arg(long, short = 'c', global = true, default_value = "tailqa.toml")]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set rerank.max_depth=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Rerun stages even when their manifest says they are up to date.
    #[arg(long, global = true)]
    pub force: bool,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest triplets and build retrieval indexes.
    BuildIndex,
    /// Degree histogram, answer spaces and bucket populations.
    Stats,
    /// Sample entities per degree bucket and extract candidate triplets.
    Sample,
    /// Screen properties and partition candidates by the ledger.
    #[command(alias = "filter-properties")]
    Filter {
        /// Record heuristic suggestions in the ledger.
        #[arg(long)]
        auto_apply: bool,
    },
    /// Equalize per-property counts across buckets.
    MatchDifficulty {
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Generate one question per matched triplet.
    Generate,
    /// Retrieve passages for every question and compute recall@k.
    Retrieve,
    /// Re-rank retrieved passages with knowledge-graph paths.
    Rerank {
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        max_paths: Option<usize>,
        /// `similarity_only` or `convex`.
        #[arg(long)]
        combine: Option<CombineRule>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Answer every question closed-book and with retrieved context.
    Answer,
    /// Score predictions against gold answers and aliases.
    Evaluate {
        /// Error-category annotations for closed-book misses.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Sample closed-book misses for manual error annotation.
    SampleMisses {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Summarize every stage into report.json and report.md.
    Report,
    /// Run the property triage service in the foreground.
    Serve {
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
    /// Run every stage in order.
    Run,
    /// Write a seeded synthetic graph, corpus and starter config.
    Synth {
        /// Target directory.
        #[arg(long, default_value = ".")]
        dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        entities: usize,
        #[arg(long, default_value_t = 200)]
        distractors: usize,
    },
}

fn toml_path(p: &Path) -> Result<String, CliError> {
    let abs = std::path::absolute(p)?;
    Ok(format!("{:?}", abs.display().to_string()))
}

/// Flag-specific options, expressed as config overrides so they land in the
/// config digest like any other setting.
fn command_overrides(command: &Command) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    match command {
        Command::Filter { auto_apply: true } => out.push("filter.auto_apply=true".into()),
        Command::MatchDifficulty { cap: Some(c) } => out.push(format!("difficulty.cap={c}")),
        Command::Rerank {
            depth,
            max_paths,
            combine,
            alpha,
        } => {
            if let Some(d) = depth {
                out.push(format!("rerank.max_depth={d}"));
            }
            if let Some(m) = max_paths {
                out.push(format!("rerank.max_paths={m}"));
            }
            if let Some(c) = combine {
                let name = match c {
                    CombineRule::SimilarityOnly => "similarity_only",
                    CombineRule::Convex => "convex",
                };
                out.push(format!("rerank.combine=\"{name}\""));
            }
            if let Some(a) = alpha {
                out.push(format!("rerank.alpha={a:?}"));
            }
        }
        Command::Evaluate { annotations: Some(p) } => out.push(format!("paths.annotations={}", toml_path(p)?)),
        Command::SampleMisses { n: Some(n) } => out.push(format!("evaluate.misses_to_sample={n}")),
        Command::Serve { bind: Some(b) } => out.push(format!("triage.bind=\"{b}\"")),
        _ => {}
    }
    Ok(out)
}

fn report_status(stage: &str, status: StageStatus) {
    match status {
        StageStatus::Ran => println!("{stage}: done"),
        StageStatus::UpToDate => println!("{stage}: up to date"),
    }
}

pub fn run_named(cfg: &PipelineConfig, stage: &str, force: bool) -> Result<StageStatus, CliError> {
    match stage {
        "build-index" => stages::build_index(cfg, force),
        "stats" => stages::stats(cfg, force),
        "sample" => stages::sample(cfg, force),
        "filter" => stages::filter(cfg, force),
        "match-difficulty" => stages::match_difficulty(cfg, force),
        "generate" => stages::generate(cfg, force),
        "retrieve" => stages::retrieve(cfg, force),
        "rerank" => stages::rerank_stage(cfg, force),
        "answer" => stages::answer(cfg, force),
        "evaluate" => stages::evaluate(cfg, force),
        "sample-misses" => stages::sample_misses_stage(cfg, None, force),
        "report" => report(cfg, force),
        other => Err(CliError::Usage(format!("unknown stage {other:?}"))),
    }
}

/// Every stage in order; retrieval stages are skipped without a corpus.
pub fn run_all(cfg: &PipelineConfig, force: bool) -> Result<(), CliError> {
    for stage in stages::STAGES {
        let needs_corpus = matches!(*stage, "retrieve" | "rerank");
        if needs_corpus && cfg.paths.corpus.is_none() {
            log::info!("{stage}: skipped, no corpus configured");
            continue;
        }
        report_status(stage, run_named(cfg, stage, force)?);
    }
    Ok(())
}

fn serve(cfg: &PipelineConfig) -> Result<(), CliError> {
    let out = cfg.paths.output.as_path();
    let manifest = StageManifest::load(out, "sample")?
        .ok_or_else(|| CliError::Data("serve needs `sample` to run first".into()))?;
    manifest.verify_outputs(out)?;
    let candidates: Vec<Candidate> = read_jsonl(&out.join(CANDIDATES_FILE))?;
    let mut catalog = Catalog::new();
    catalog.load_entities(&cfg.paths.entities)?;
    catalog.load_properties(&cfg.paths.properties)?;
    let screener = stages::screener(cfg)?;
    let ledger_path = cfg.ledger_path();
    if let Some(parent) = ledger_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let ledger = LedgerFile::open(&ledger_path)?;
    let mut triage = cfg.triage.clone();
    triage.seed = cfg.seeds.triage;
    let state = Arc::new(TriageState::new(&catalog, &candidates, &screener, ledger, triage));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime
        .block_on(tailqa_triage::serve(state))
        .map_err(|e| CliError::Data(e.to_string()))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    if let Command::Synth {
        dir,
        seed,
        entities,
        distractors,
    } = &cli.command
    {
        let cfg = SyntheticConfig {
            seed: *seed,
            entities: *entities,
            distractor_passages: *distractors,
            ..SyntheticConfig::default()
        };
        let s = write_synthetic(dir, &cfg)?;
        println!(
            "wrote {} entities, {} properties, {} triplets, {} passages to {}",
            s.entities,
            s.properties,
            s.triplets,
            s.passages,
            dir.display()
        );
        return Ok(());
    }

    let mut overrides = cli.global.overrides.clone();
    overrides.extend(command_overrides(&cli.command)?);
    let cfg = PipelineConfig::load(&cli.global.config, &overrides)?;
    let force = cli.global.force;
    let one = |stage: &str| run_named(&cfg, stage, force).map(|s| report_status(stage, s));
    match &cli.command {
        Command::BuildIndex => one("build-index"),
        Command::Stats => one("stats"),
        Command::Sample => one("sample"),
        Command::Filter { .. } => one("filter"),
        Command::MatchDifficulty { .. } => one("match-difficulty"),
        Command::Generate => one("generate"),
        Command::Retrieve => one("retrieve"),
        Command::Rerank { .. } => one("rerank"),
        Command::Answer => one("answer"),
        Command::Evaluate { .. } => one("evaluate"),
        Command::SampleMisses { .. } => one("sample-misses"),
        Command::Report => one("report"),
        Command::Serve { .. } => serve(&cfg),
        Command::Run => run_all(&cfg, force),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}
