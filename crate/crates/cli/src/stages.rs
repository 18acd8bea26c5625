//! Stage bodies. Each reads committed upstream outputs and writes its own
//! outputs into the staging directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tailqa_core::backend::{CompletionBackend, EchoGoldBackend, HttpCompletionBackend, MockQuestionBackend};
use tailqa_core::difficulty::{answer_space_report, histogram_rows, match_datasets, property_histogram};
use tailqa_core::eval::{
    answer_dataset, import_error_annotations, sample_misses, score, Annotation, AnswerMode, Context, EvalRecord,
    Prediction, PredictionFlag,
};
use tailqa_core::filter::{
    apply_filter, load_blocklist, Decision, Ledger, LedgerEntry, LedgerFile, Screener, Suggestion,
};
use tailqa_core::generate::{split_outcomes, GenerationFailure, Generator, QaItem};
use tailqa_core::kg::{format_row, Catalog, DegreeBins, EntityId, IngestMode, KnowledgeGraph, PropertyId, Triplet};
use tailqa_core::rerank::{find_paths, rerank, rerank_report, verbalize_all, RerankRecord};
use tailqa_core::retrieval::{
    read_ids, recall_at_k, top1_context, write_vectors, AnswerScanner, Bm25Index, Corpus, DenseIndex,
    EmbeddingProvider, HashingBowProvider, HttpEmbeddingProvider, RankedList, Retriever, VocabularyBowProvider,
};
use tailqa_core::sampler::{extract_candidates, sample_entities, Candidate, EntitySample, SampleSpec};
use tailqa_core::text::derive_seed;

use crate::config::{ContextSource, EmbeddingKind, PipelineConfig};
use crate::error::CliError;
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::manifest::{run_stage, StageContext, StageReport, StageSpec, StageStatus};

pub const GRAPH_FILE: &str = "graph.tsv";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const FILTERED_FILE: &str = "filtered.jsonl";
pub const MATCHED_FILE: &str = "matched.jsonl";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const RERANK_FILE: &str = "rerank.jsonl";
pub const VECTORS_FILE: &str = "vectors.bin";
pub const VECTOR_IDS_FILE: &str = "vectors.ids";
pub const UNTRIAGED_FILE: &str = "untriaged.json";

/// Every stage, in pipeline order.
pub const STAGES: &[&str] = &[
    "build-index",
    "stats",
    "sample",
    "filter",
    "match-difficulty",
    "generate",
    "retrieve",
    "rerank",
    "answer",
    "evaluate",
    "sample-misses",
    "report",
];

pub fn retrieval_file(retriever: &str) -> String {
    format!("retrieval-{retriever}.jsonl")
}

pub fn predictions_file(mode: AnswerMode) -> String {
    format!("predictions-{}.jsonl", mode_name(mode))
}

pub fn mode_name(mode: AnswerMode) -> &'static str {
    match mode {
        AnswerMode::ClosedBook => "closed_book",
        AnswerMode::WithContext => "with_context",
    }
}

fn load_catalog(cfg: &PipelineConfig) -> Result<Catalog, CliError> {
    let mut catalog = Catalog::new();
    catalog.load_entities(&cfg.paths.entities)?;
    catalog.load_properties(&cfg.paths.properties)?;
    Ok(catalog)
}

fn load_graph(ctx: &StageContext<'_>) -> Result<KnowledgeGraph, CliError> {
    let (graph, _) = KnowledgeGraph::ingest(&ctx.upstream(GRAPH_FILE), None, IngestMode::Strict)?;
    Ok(graph)
}

fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus, CliError> {
    let path = cfg
        .paths
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Usage("paths.corpus is required for retrieval stages".into()))?;
    Ok(Corpus::load(path)?)
}

fn load_ledger(cfg: &PipelineConfig) -> Result<Ledger, CliError> {
    let path = cfg.ledger_path();
    if !path.exists() {
        return Ok(Ledger::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::data(path.display(), e))?;
    Ok(Ledger::parse(&text)?)
}

pub fn embedding_provider(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    let e = &cfg.embedding;
    Ok(match e.provider {
        EmbeddingKind::Hashing => Box::new(HashingBowProvider::new(e.dimension)),
        EmbeddingKind::Vocabulary => Box::new(VocabularyBowProvider::from_texts(
            corpus.passages().iter().map(|p| p.text.as_str()),
        )),
        EmbeddingKind::Http => {
            let url = e
                .url
                .clone()
                .ok_or_else(|| CliError::Usage("embedding.url is required for the http provider".into()))?;
            Box::new(HttpEmbeddingProvider::new(
                url,
                e.dimension,
                e.batch_size,
                Duration::from_secs(e.timeout_secs.max(1)),
            )?)
        }
    })
}

fn completion_backend(cfg: &PipelineConfig, name: &str) -> Result<Box<dyn CompletionBackend>, CliError> {
    let profile = cfg
        .backends
        .get(name)
        .ok_or_else(|| CliError::Usage(format!("no [backends.{name}] profile")))?;
    Ok(Box::new(HttpCompletionBackend::new(profile.clone())?))
}

fn vector_paths(cfg: &PipelineConfig, ctx: &StageContext<'_>) -> (PathBuf, PathBuf) {
    match (&cfg.paths.vectors, &cfg.paths.vector_ids) {
        (Some(v), Some(i)) => (v.clone(), i.clone()),
        _ => (ctx.upstream(VECTORS_FILE), ctx.upstream(VECTOR_IDS_FILE)),
    }
}

fn base_inputs(cfg: &PipelineConfig) -> Vec<(String, PathBuf)> {
    vec![
        ("entities".into(), cfg.paths.entities.clone()),
        ("properties".into(), cfg.paths.properties.clone()),
    ]
}

fn corpus_input(cfg: &PipelineConfig) -> Vec<(String, PathBuf)> {
    cfg.paths
        .corpus
        .iter()
        .map(|p| ("corpus".to_string(), p.clone()))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct DegreeRow {
    entity: EntityId,
    degree: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSummary {
    pub triplets: usize,
    pub subjects: usize,
    pub properties: usize,
    pub buckets: Vec<BucketSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketSummary {
    pub name: String,
    pub min_degree: u64,
    pub max_degree: u64,
    pub population: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnswerSpaceRow {
    property_id: PropertyId,
    answer_space: usize,
}

pub fn build_index(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let mut inputs = base_inputs(cfg);
    inputs.push(("triplets".into(), cfg.paths.triplets.clone()));
    inputs.extend(corpus_input(cfg));
    if let (Some(v), Some(i)) = (&cfg.paths.vectors, &cfg.paths.vector_ids) {
        inputs.push(("vectors".into(), v.clone()));
        inputs.push(("vector_ids".into(), i.clone()));
    }
    let spec = StageSpec {
        name: "build-index",
        upstream: vec![],
        inputs,
    };
    run_stage(cfg, spec, force, |ctx| {
        let catalog = load_catalog(cfg)?;
        let (graph, ingest) = KnowledgeGraph::ingest(&cfg.paths.triplets, Some(&catalog), cfg.sample.ingest_mode)?;
        let path = ctx.staged(GRAPH_FILE);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(w, "# subject\tproperty\tobject\tobject_kind")?;
        for t in graph.triplets() {
            writeln!(w, "{}", format_row(&t))?;
        }
        w.flush()?;
        write_jsonl(
            &ctx.staged("degrees.jsonl"),
            graph.subjects().map(|(e, d)| DegreeRow {
                entity: e.clone(),
                degree: d,
            }),
        )?;
        let mut report = StageReport::default()
            .count("rows", ingest.rows)
            .count("stored", ingest.stored)
            .count("duplicates", ingest.duplicates)
            .count("skipped_unresolved", ingest.skipped_unresolved)
            .count("subjects", graph.subject_count())
            .count("entities", catalog.entity_count())
            .count("properties", catalog.property_count());
        if cfg.paths.corpus.is_some() {
            let corpus = load_corpus(cfg)?;
            report = report.count("passages", corpus.len());
            if cfg.retrieval.retrievers.iter().any(|r| r == "bm25") {
                let index = Bm25Index::build(&corpus, cfg.retrieval.bm25);
                let file = std::io::BufWriter::new(std::fs::File::create(ctx.staged("bm25.json"))?);
                serde_json::to_writer(file, &index).map_err(|e| CliError::data("bm25.json", e))?;
            }
            let wants_dense = cfg.retrieval.retrievers.iter().any(|r| r == "dense");
            if wants_dense && cfg.paths.vectors.is_none() {
                let provider = embedding_provider(cfg, &corpus)?;
                let texts: Vec<&str> = corpus.passages().iter().map(|p| p.text.as_str()).collect();
                let vectors = provider.embed(&texts)?;
                write_vectors(&ctx.staged(VECTORS_FILE), provider.dimension(), &vectors)?;
                let ids: String = corpus.passages().iter().map(|p| format!("{}\n", p.id)).collect();
                std::fs::write(ctx.staged(VECTOR_IDS_FILE), ids)?;
                report = report.count("vectors", vectors.len());
            }
        }
        Ok(report)
    })
}

pub fn stats(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let spec = StageSpec {
        name: "stats",
        upstream: vec!["build-index"],
        inputs: vec![],
    };
    run_stage(cfg, spec, force, |ctx| {
        let graph = load_graph(ctx)?;
        let buckets = cfg.bucket_set()?;
        let histogram = graph.degree_histogram(&DegreeBins::default());
        write_jsonl(&ctx.staged("histogram.jsonl"), &histogram)?;
        let spaces = answer_space_report(&graph);
        write_jsonl(
            &ctx.staged("answer_space.jsonl"),
            spaces.iter().map(|(p, n)| AnswerSpaceRow {
                property_id: p.clone(),
                answer_space: *n,
            }),
        )?;
        let summary = GraphSummary {
            triplets: graph.len(),
            subjects: graph.subject_count(),
            properties: graph.property_ids().len(),
            buckets: buckets
                .iter()
                .map(|b| BucketSummary {
                    name: b.name.clone(),
                    min_degree: b.min_degree,
                    max_degree: b.max_degree,
                    population: tailqa_core::sampler::bucket_members(&graph, b).len(),
                })
                .collect(),
        };
        write_json(&ctx.staged("graph_summary.json"), &summary)?;
        Ok(StageReport::default()
            .count("bins", histogram.len())
            .count("triplets", summary.triplets))
    })
}

pub fn sample(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let spec = StageSpec {
        name: "sample",
        upstream: vec!["build-index"],
        inputs: vec![],
    };
    run_stage(cfg, spec, force, |ctx| {
        let graph = load_graph(ctx)?;
        let mut report = StageReport::default().seed(cfg.seeds.sample);
        let mut samples = Vec::new();
        let mut candidates = Vec::new();
        for bucket in cfg.bucket_set()?.iter() {
            let spec = SampleSpec {
                bucket: bucket.clone(),
                entity_count: cfg.sample.entity_count,
                seed: derive_seed(cfg.seeds.sample, &bucket.name),
            };
            let sample = sample_entities(&graph, &spec);
            let found = extract_candidates(&graph, &sample);
            report = report
                .count(&format!("entities_{}", bucket.name), sample.entities.len())
                .count(&format!("candidates_{}", bucket.name), found.len());
            candidates.extend(found);
            samples.push(sample);
        }
        write_jsonl(&ctx.staged(CANDIDATES_FILE), &candidates)?;
        write_jsonl(&ctx.staged("samples.jsonl"), &samples)?;
        Ok(report.count("candidates", candidates.len()))
    })
}

pub fn screener(cfg: &PipelineConfig) -> Result<Screener, CliError> {
    let mut heuristics = cfg.filter.heuristics.clone();
    if let Some(path) = &cfg.paths.blocklist {
        heuristics.blocklist = load_blocklist(path).map_err(|e| CliError::data(path.display(), e))?;
    }
    Ok(Screener::new(heuristics))
}

/// Heuristic suggestions for every property among `candidates`, by id.
pub fn suggestions(screener: &Screener, candidates: &[Candidate], catalog: &Catalog) -> Vec<Suggestion> {
    let mut by_property: BTreeMap<&PropertyId, Vec<Triplet>> = BTreeMap::new();
    for c in candidates {
        by_property.entry(&c.triplet.property).or_default().push(c.triplet.clone());
    }
    by_property
        .into_iter()
        .map(|(p, rows)| {
            let fallback = tailqa_core::kg::Property {
                id: p.clone(),
                label: p.to_string(),
            };
            let property = catalog.property(p).unwrap_or(&fallback);
            screener.screen(property, &rows, catalog)
        })
        .collect()
}

pub fn filter(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let mut inputs = base_inputs(cfg);
    inputs.push(("ledger".into(), cfg.ledger_path()));
    if let Some(b) = &cfg.paths.blocklist {
        inputs.push(("blocklist".into(), b.clone()));
    }
    let spec = StageSpec {
        name: "filter",
        upstream: vec!["sample"],
        inputs,
    };
    run_stage(cfg, spec, force, |ctx| {
        let catalog = load_catalog(cfg)?;
        let candidates: Vec<Candidate> = read_jsonl(&ctx.upstream(CANDIDATES_FILE))?;
        let suggestions = suggestions(&screener(cfg)?, &candidates, &catalog);
        let ledger_path = cfg.ledger_path();
        if let Some(parent) = ledger_path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut ledger = LedgerFile::open(&ledger_path)?;
        let mut appended = 0usize;
        if cfg.filter.auto_apply {
            let now = chrono::Utc::now();
            for s in &suggestions {
                let verdict = s.to_verdict();
                let changed = ledger
                    .ledger()
                    .last_heuristic(&s.property_id)
                    .is_none_or(|e| e.verdict != verdict.decision || e.reason != verdict.reason);
                if changed {
                    ledger.append(LedgerEntry::new(s.property_id.clone(), &verdict, now))?;
                    appended += 1;
                }
            }
        }
        let outcome = apply_filter(&candidates, ledger.ledger());
        write_jsonl(&ctx.staged("suggestions.jsonl"), &suggestions)?;
        write_jsonl(&ctx.staged(FILTERED_FILE), &outcome.kept)?;
        write_jsonl(&ctx.staged("rejected.jsonl"), &outcome.rejected)?;
        write_json(&ctx.staged(UNTRIAGED_FILE), &outcome.untriaged)?;
        let heuristic_rejects = suggestions.iter().filter(|s| s.decision == Decision::Reject).count();
        Ok(StageReport::default()
            .count("kept", outcome.kept.len())
            .count("rejected", outcome.rejected.len())
            .count("untriaged_properties", outcome.untriaged.len())
            .count("heuristic_rejects", heuristic_rejects)
            .count("ledger_appended", appended))
    })
}

pub fn match_difficulty(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let spec = StageSpec {
        name: "match-difficulty",
        upstream: vec!["build-index", "filter"],
        inputs: vec![],
    };
    run_stage(cfg, spec, force, |ctx| {
        let kept: Vec<Candidate> = read_jsonl(&ctx.upstream(FILTERED_FILE))?;
        let buckets = cfg.bucket_set()?;
        let mut groups: BTreeMap<String, Vec<Candidate>> =
            buckets.iter().map(|b| (b.name.clone(), Vec::new())).collect();
        for c in kept {
            if let Some(g) = groups.get_mut(&c.bucket) {
                g.push(c);
            }
        }
        let matched = match_datasets(&groups, cfg.seeds.difficulty, cfg.difficulty.cap);
        let spaces = answer_space_report(&load_graph(ctx)?);
        let mut report = StageReport::default().seed(cfg.seeds.difficulty);
        let mut all = Vec::new();
        for bucket in buckets.iter() {
            let before = property_histogram(&groups[&bucket.name]);
            let after = property_histogram(&matched[&bucket.name]);
            write_jsonl(
                &ctx.staged(&format!("histogram-{}.jsonl", bucket.name)),
                histogram_rows(&before, &after, &spaces),
            )?;
            report = report
                .count(&format!("before_{}", bucket.name), groups[&bucket.name].len())
                .count(&format!("after_{}", bucket.name), matched[&bucket.name].len());
            all.extend(matched[&bucket.name].iter().cloned());
        }
        write_jsonl(&ctx.staged(MATCHED_FILE), &all)?;
        Ok(report.count("matched", all.len()))
    })
}

pub fn generate(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let mut inputs = base_inputs(cfg);
    inputs.push(("ledger".into(), cfg.ledger_path()));
    let spec = StageSpec {
        name: "generate",
        upstream: vec!["filter", "match-difficulty"],
        inputs,
    };
    run_stage(cfg, spec, force, |ctx| {
        let catalog = load_catalog(cfg)?;
        let matched: Vec<Candidate> = read_jsonl(&ctx.upstream(MATCHED_FILE))?;
        let ledger = load_ledger(cfg)?;
        let verdicts = ledger.effective_map();
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut jobs = Vec::new();
        let mut excluded = 0usize;
        for c in &matched {
            let n = seen.entry(c.bucket.as_str()).or_default();
            let qid = tailqa_core::generate::qid_for(&c.bucket, *n);
            *n += 1;
            if verdicts
                .get(&c.triplet.property)
                .is_some_and(|v| v.decision == Decision::Reject)
            {
                excluded += 1;
                continue;
            }
            jobs.push((qid, c));
        }
        let backend: Box<dyn CompletionBackend> = match cfg.generate.backend.as_str() {
            "mock" => Box::new(MockQuestionBackend),
            name => completion_backend(cfg, name)?,
        };
        let generator = Generator {
            template: &cfg.generate.template,
            catalog: &catalog,
            backend: backend.as_ref(),
            attempts: cfg.generate.attempts,
        };
        let (items, failures) = split_outcomes(generator.generate_batch(&jobs));
        if items.is_empty() && !failures.is_empty() {
            return Err(CliError::Backend(format!(
                "every generation request failed; first error: {}",
                failures[0].error
            )));
        }
        write_jsonl(&ctx.staged(DATASET_FILE), &items)?;
        write_jsonl(&ctx.staged("generation_failures.jsonl"), &failures)?;
        let flagged = items.iter().filter(|i| !i.flags.is_empty()).count();
        Ok(StageReport::default()
            .count("items", items.len())
            .count("failures", failures.len())
            .count("flagged", flagged)
            .count("excluded_by_ledger", excluded))
    })
}

fn read_lists(path: &Path) -> Result<HashMap<String, RankedList>, CliError> {
    Ok(read_jsonl::<RankedList>(path)?
        .into_iter()
        .map(|l| (l.qid.clone(), l))
        .collect())
}

fn recall_table(recall: &BTreeMap<usize, f64>) -> BTreeMap<String, f64> {
    recall.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn retrieve(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let spec = StageSpec {
        name: "retrieve",
        upstream: vec!["build-index", "generate"],
        inputs: corpus_input(cfg),
    };
    run_stage(cfg, spec, force, |ctx| {
        let corpus = load_corpus(cfg)?;
        let items: Vec<QaItem> = read_jsonl(&ctx.upstream(DATASET_FILE))?;
        let scanner = AnswerScanner::new(&corpus);
        let k = cfg.retrieval.top_k;
        let mut recall = BTreeMap::new();
        for name in &cfg.retrieval.retrievers {
            let retriever: Box<dyn Retriever> = match name.as_str() {
                "bm25" => {
                    let path = ctx.upstream("bm25.json");
                    Box::new(read_json::<Bm25Index>(&path)?)
                }
                _ => {
                    let (v, i) = vector_paths(cfg, ctx);
                    let provider = embedding_provider(cfg, &corpus)?;
                    let ids = read_ids(&i)?;
                    if let Some(missing) = ids.iter().find(|id| corpus.get(id).is_none()) {
                        return Err(CliError::Data(format!("vector id {missing} is not in the corpus")));
                    }
                    Box::new(DenseIndex::load(&v, &i, provider)?)
                }
            };
            let lists: Vec<RankedList> = items
                .iter()
                .map(|item| {
                    Ok(RankedList {
                        qid: item.qid.clone(),
                        retriever: name.clone(),
                        ranking: retriever.retrieve(&item.question, k)?,
                    })
                })
                .collect::<Result<_, CliError>>()?;
            write_jsonl(&ctx.staged(&retrieval_file(name)), &lists)?;
            let by_qid: HashMap<String, RankedList> = lists.into_iter().map(|l| (l.qid.clone(), l)).collect();
            recall.insert(
                name.clone(),
                recall_table(&recall_at_k(&items, &by_qid, &scanner, &cfg.retrieval.recall_ks)),
            );
        }
        write_json(&ctx.staged("recall.json"), &recall)?;
        Ok(StageReport::default()
            .count("questions", items.len())
            .count("retrievers", cfg.retrieval.retrievers.len()))
    })
}

pub fn rerank_stage(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let mut inputs = base_inputs(cfg);
    inputs.extend(corpus_input(cfg));
    let spec = StageSpec {
        name: "rerank",
        upstream: vec!["build-index", "generate", "retrieve"],
        inputs,
    };
    run_stage(cfg, spec, force, |ctx| {
        let base = &cfg.rerank.base;
        if !cfg.retrieval.retrievers.contains(base) {
            return Err(CliError::Usage(format!("rerank.base {base:?} is not among retrieval.retrievers")));
        }
        let catalog = load_catalog(cfg)?;
        let corpus = load_corpus(cfg)?;
        let items: Vec<QaItem> = read_jsonl(&ctx.upstream(DATASET_FILE))?;
        let before = read_lists(&ctx.upstream(&retrieval_file(base)))?;
        let mut graph = load_graph(ctx)?;
        let holdout: Vec<Triplet> = items.iter().filter_map(QaItem::triplet).collect();
        let removed = graph.remove_holdout(&holdout);
        let provider = embedding_provider(cfg, &corpus)?;
        let params = &cfg.rerank.params;
        let mut records = Vec::with_capacity(items.len());
        let mut skipped = 0usize;
        let mut no_paths = 0usize;
        let mut paths_total = 0usize;
        for item in &items {
            let Some(list) = before.get(&item.qid) else {
                continue;
            };
            let subject = EntityId::new(item.subject.clone())?;
            let paths = find_paths(&graph, &subject, params);
            let (verbalized, bad) = verbalize_all(&paths, &catalog);
            skipped += bad;
            paths_total += verbalized.len();
            let record = rerank(list, &verbalized, &corpus, provider.as_ref(), params)?;
            if !record.flags.is_empty() {
                no_paths += 1;
            }
            records.push(record);
        }
        write_jsonl(&ctx.staged(RERANK_FILE), &records)?;
        let after: HashMap<String, RankedList> = records
            .iter()
            .map(|r| (r.qid.clone(), r.to_ranked_list(&format!("{base}+kg"))))
            .collect();
        let scanner = AnswerScanner::new(&corpus);
        let deltas = rerank_report(&items, &before, &after, &scanner, &cfg.retrieval.recall_ks);
        write_json(&ctx.staged("rerank_recall.json"), &deltas)?;
        Ok(StageReport::default()
            .count("questions", records.len())
            .count("holdout_removed", removed.removed)
            .count("paths", paths_total)
            .count("no_paths", no_paths)
            .count("skipped_verbalizations", skipped))
    })
}

/// Top passage per qid from the configured context source.
fn contexts(
    cfg: &PipelineConfig,
    ctx: &StageContext<'_>,
    items: &[QaItem],
) -> Result<HashMap<String, Option<Context>>, CliError> {
    let corpus = load_corpus(cfg)?;
    let top: HashMap<String, String> = match cfg.answer.context_source {
        ContextSource::Rerank => read_jsonl::<RerankRecord>(&ctx.upstream(RERANK_FILE))?
            .into_iter()
            .filter_map(|r| r.ranking.first().map(|e| (r.qid.clone(), e.passage.clone())))
            .collect(),
        source => read_lists(&ctx.upstream(&retrieval_file(source.as_str())))?
            .into_iter()
            .filter_map(|(q, l)| top1_context(&l).map(|s| (q, s.passage.clone())))
            .collect(),
    };
    Ok(items
        .iter()
        .map(|i| {
            let c = top
                .get(&i.qid)
                .and_then(|id| corpus.get(id))
                .map(|p| (p.id.clone(), p.text.clone()));
            (i.qid.clone(), c)
        })
        .collect())
}

pub fn answer(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let mut upstream = vec!["generate"];
    let mut inputs = Vec::new();
    let with_context = cfg.answer.with_context && cfg.paths.corpus.is_some();
    if cfg.answer.with_context && !with_context {
        log::warn!("answer.with_context is set but paths.corpus is not; answering closed-book only");
    }
    if with_context {
        upstream.push(match cfg.answer.context_source {
            ContextSource::Rerank => "rerank",
            _ => "retrieve",
        });
        inputs.extend(corpus_input(cfg));
    }
    let spec = StageSpec {
        name: "answer",
        upstream,
        inputs,
    };
    run_stage(cfg, spec, force, |ctx| {
        let items: Vec<QaItem> = read_jsonl(&ctx.upstream(DATASET_FILE))?;
        let backend: Box<dyn CompletionBackend> = match cfg.answer.backend.as_str() {
            "echo-gold" => Box::new(EchoGoldBackend::from_items(&items).with_miss_rate(cfg.answer.echo_miss_rate)),
            name => completion_backend(cfg, name)?,
        };
        let mut report = StageReport::default();
        let mut modes = vec![(AnswerMode::ClosedBook, None)];
        if with_context {
            modes.push((AnswerMode::WithContext, Some(contexts(cfg, ctx, &items)?)));
        }
        for (mode, ctxs) in modes {
            let preds = answer_dataset(
                &items,
                backend.as_ref(),
                &cfg.answer.template,
                mode,
                ctxs.as_ref(),
                cfg.answer.attempts,
            );
            let failed = preds
                .iter()
                .filter(|p| p.flags.contains(&PredictionFlag::BackendFailed))
                .count();
            if failed == preds.len() && !preds.is_empty() {
                return Err(CliError::Backend(format!(
                    "every {} answering request failed",
                    mode_name(mode)
                )));
            }
            write_jsonl(&ctx.staged(&predictions_file(mode)), &preds)?;
            report = report
                .count(&format!("{}_predictions", mode_name(mode)), preds.len())
                .count(&format!("{}_backend_failed", mode_name(mode)), failed);
        }
        Ok(report)
    })
}

pub fn evaluate(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let inputs: Vec<(String, PathBuf)> = cfg
        .paths
        .annotations
        .iter()
        .map(|p| ("annotations".to_string(), p.clone()))
        .collect();
    let spec = StageSpec {
        name: "evaluate",
        upstream: vec!["generate", "answer"],
        inputs,
    };
    run_stage(cfg, spec, force, |ctx| {
        let items: Vec<QaItem> = read_jsonl(&ctx.upstream(DATASET_FILE))?;
        let mut report = StageReport::default();
        for mode in [AnswerMode::ClosedBook, AnswerMode::WithContext] {
            let path = ctx.upstream(&predictions_file(mode));
            if !path.exists() {
                continue;
            }
            let preds: Vec<Prediction> = read_jsonl(&path)?;
            let (mut records, _) = score(mode_name(mode), &items, &preds);
            if mode == AnswerMode::ClosedBook {
                if let Some(ann) = &cfg.paths.annotations {
                    let annotations: Vec<Annotation> = read_jsonl(ann)?;
                    import_error_annotations(&mut records, &annotations)?;
                    report = report.count("annotations", annotations.len());
                }
            }
            let accuracy = tailqa_core::eval::report_for(mode_name(mode), &records);
            write_jsonl(&ctx.staged(&format!("eval-{}.jsonl", mode_name(mode))), &records)?;
            write_json(&ctx.staged(&format!("accuracy-{}.json", mode_name(mode))), &accuracy)?;
            report = report.count(&format!("{}_correct", mode_name(mode)), accuracy.correct);
        }
        Ok(report.count("items", items.len()))
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MissToAnnotate {
    pub qid: String,
    pub question: String,
    pub answer: String,
    pub aliases: BTreeSet<String>,
    pub prediction: String,
    pub category: Option<String>,
}

pub fn sample_misses_stage(cfg: &PipelineConfig, n: Option<usize>, force: bool) -> Result<StageStatus, CliError> {
    let spec = StageSpec {
        name: "sample-misses",
        upstream: vec!["generate", "answer", "evaluate"],
        inputs: vec![],
    };
    let n = n.unwrap_or(cfg.evaluate.misses_to_sample);
    run_stage(cfg, spec, force, |ctx| {
        let items: Vec<QaItem> = read_jsonl(&ctx.upstream(DATASET_FILE))?;
        let records: Vec<EvalRecord> = read_jsonl(&ctx.upstream("eval-closed_book.jsonl"))?;
        let preds: HashMap<String, String> = read_jsonl::<Prediction>(&ctx.upstream(&predictions_file(AnswerMode::ClosedBook)))?
            .into_iter()
            .map(|p| (p.qid, p.prediction))
            .collect();
        let by_qid: HashMap<&str, &QaItem> = items.iter().map(|i| (i.qid.as_str(), i)).collect();
        let picked = sample_misses(&records, n, cfg.seeds.misses);
        let rows: Vec<MissToAnnotate> = picked
            .iter()
            .filter_map(|q| by_qid.get(q.as_str()))
            .map(|i| MissToAnnotate {
                qid: i.qid.clone(),
                question: i.question.clone(),
                answer: i.answer.clone(),
                aliases: i.aliases.clone(),
                prediction: preds.get(&i.qid).cloned().unwrap_or_default(),
                category: None,
            })
            .collect();
        write_jsonl(&ctx.staged("misses_to_annotate.jsonl"), &rows)?;
        Ok(StageReport::default().seed(cfg.seeds.misses).count("sampled", rows.len()))
    })
}

/// Generation failures, for the report.
pub fn read_failures(out_dir: &Path) -> Result<Vec<GenerationFailure>, CliError> {
    let path = out_dir.join("generation_failures.jsonl");
    if path.exists() {
        read_jsonl(&path)
    } else {
        Ok(Vec::new())
    }
}

/// Entity samples written by `sample`.
pub fn read_samples(out_dir: &Path) -> Result<Vec<EntitySample>, CliError> {
    read_jsonl(&out_dir.join("samples.jsonl"))
}
