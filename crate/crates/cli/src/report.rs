//! The `report` stage: one JSON and one Markdown document summarizing every
//! stage manifest and the headline numbers of the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tailqa_core::eval::{AccuracyReport, ErrorCategory};
use tailqa_core::generate::QaItem;
use tailqa_core::rerank::RecallDelta;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::{read_json, read_jsonl, write_json};
use crate::manifest::{run_stage, StageManifest, StageReport, StageSpec, StageStatus};
use crate::stages::{read_failures, DATASET_FILE, STAGES, UNTRIAGED_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub seed: Option<u64>,
    pub counts: BTreeMap<String, u64>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub bucket: String,
    pub min_degree: u64,
    pub max_degree: u64,
    pub triplets: usize,
    pub unique_properties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_digest: String,
    pub stages: Vec<StageSummary>,
    pub datasets: Vec<DatasetSummary>,
    pub generation_failures: usize,
    pub accuracy: Vec<AccuracyReport>,
    /// Retriever name to recall@k (keys are k).
    pub recall: BTreeMap<String, BTreeMap<String, f64>>,
    pub rerank: Vec<RecallDelta>,
    /// Properties kept only because nobody has triaged them.
    pub untriaged_properties: Vec<String>,
    /// Dataset items whose property is untriaged.
    pub untriaged_items: usize,
}

pub fn dataset_summaries(cfg: &PipelineConfig, items: &[QaItem]) -> Result<Vec<DatasetSummary>, CliError> {
    Ok(cfg
        .bucket_set()?
        .iter()
        .map(|b| {
            let rows: Vec<&QaItem> = items.iter().filter(|i| i.bucket == b.name).collect();
            DatasetSummary {
                bucket: b.name.clone(),
                min_degree: b.min_degree,
                max_degree: b.max_degree,
                triplets: rows.len(),
                unique_properties: rows.iter().map(|i| i.property.as_str()).collect::<BTreeSet<_>>().len(),
            }
        })
        .collect())
}

fn optional_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, CliError> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn report(cfg: &PipelineConfig, force: bool) -> Result<StageStatus, CliError> {
    let out = cfg.paths.output.as_path();
    let mut upstream = Vec::new();
    for stage in STAGES.iter().copied().filter(|s| *s != "report") {
        if stage == "generate" || StageManifest::path(out, stage).exists() {
            upstream.push(stage);
        }
    }
    let spec = StageSpec {
        name: "report",
        upstream: upstream.clone(),
        inputs: vec![],
    };
    run_stage(cfg, spec, force, |ctx| {
        let mut stages = Vec::new();
        for stage in &upstream {
            if let Some(m) = StageManifest::load(out, stage)? {
                stages.push(StageSummary {
                    stage: m.stage,
                    seed: m.seed,
                    counts: m.counts,
                    outputs: m.outputs,
                });
            }
        }
        let items: Vec<QaItem> = read_jsonl(&ctx.upstream(DATASET_FILE))?;
        let mut accuracy = Vec::new();
        for mode in ["closed_book", "with_context"] {
            if let Some(a) = optional_json::<AccuracyReport>(&ctx.upstream(&format!("accuracy-{mode}.json")))? {
                accuracy.push(a);
            }
        }
        let untriaged: BTreeSet<String> = optional_json::<BTreeSet<String>>(&ctx.upstream(UNTRIAGED_FILE))?
            .unwrap_or_default();
        let untriaged_items = tailqa_core::eval::untriaged_items(&items, &untriaged).len();
        let report = Report {
            config_digest: crate::manifest::config_digest(cfg),
            stages,
            datasets: dataset_summaries(cfg, &items)?,
            generation_failures: read_failures(out)?.len(),
            accuracy,
            recall: optional_json(&ctx.upstream("recall.json"))?.unwrap_or_default(),
            rerank: optional_json(&ctx.upstream("rerank_recall.json"))?.unwrap_or_default(),
            untriaged_properties: untriaged.into_iter().collect(),
            untriaged_items,
        };
        if report.untriaged_items > 0 {
            log::warn!(
                "{} dataset item(s) use {} untriaged propert(ies)",
                report.untriaged_items,
                report.untriaged_properties.len()
            );
        }
        write_json(&ctx.staged("report.json"), &report)?;
        std::fs::write(ctx.staged("report.md"), render_markdown(&report))?;
        Ok(StageReport::default()
            .count("stages", report.stages.len())
            .count("items", items.len()))
    })
}

pub fn render_markdown(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Pipeline report\n");
    let _ = writeln!(s, "Config digest: `{}`\n", &r.config_digest[..16.min(r.config_digest.len())]);

    let _ = writeln!(s, "## Datasets\n");
    let _ = writeln!(s, "| bucket | degree bounds | triplets | unique properties |");
    let _ = writeln!(s, "|---|---|---:|---:|");
    for d in &r.datasets {
        let _ = writeln!(
            s,
            "| {} | [{}, {}] | {} | {} |",
            d.bucket, d.min_degree, d.max_degree, d.triplets, d.unique_properties
        );
    }
    if r.generation_failures > 0 {
        let _ = writeln!(s, "\n{} triplet(s) failed generation.", r.generation_failures);
    }

    if !r.untriaged_properties.is_empty() {
        let _ = writeln!(
            s,
            "\n**Warning:** {} item(s) come from {} property(ies) nobody has triaged: {}.",
            r.untriaged_items,
            r.untriaged_properties.len(),
            r.untriaged_properties.join(", ")
        );
    }

    if !r.accuracy.is_empty() {
        let _ = writeln!(s, "\n## Answer accuracy\n");
        let _ = writeln!(s, "| mode | items | correct | accuracy | per bucket |");
        let _ = writeln!(s, "|---|---:|---:|---:|---|");
        for a in &r.accuracy {
            let buckets: Vec<String> = a
                .per_bucket
                .iter()
                .map(|(b, x)| format!("{b}: {:.1}%", 100.0 * x.accuracy))
                .collect();
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.1}% | {} |",
                a.dataset,
                a.item_count,
                a.correct,
                100.0 * a.accuracy,
                buckets.join(", ")
            );
        }
        for a in r.accuracy.iter().filter(|a| a.error_analysis.annotated > 0) {
            let _ = writeln!(
                s,
                "\n### Error analysis ({}, {} annotated)\n",
                a.dataset, a.error_analysis.annotated
            );
            let _ = writeln!(s, "| category | count | ratio |");
            let _ = writeln!(s, "|---|---:|---:|");
            for c in ErrorCategory::ALL {
                let share = a.error_analysis.categories.get(&c);
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.0}% |",
                    c.as_str(),
                    share.map_or(0, |x| x.count),
                    100.0 * share.map_or(0.0, |x| x.ratio)
                );
            }
        }
    }

    if !r.recall.is_empty() {
        let _ = writeln!(s, "\n## Retrieval recall\n");
        let ks: BTreeSet<usize> = r
            .recall
            .values()
            .flat_map(|m| m.keys().filter_map(|k| k.parse().ok()))
            .collect();
        let header: Vec<String> = ks.iter().map(|k| format!("R@{k}")).collect();
        let _ = writeln!(s, "| retriever | {} |", header.join(" | "));
        let _ = writeln!(s, "|---|{}", "---:|".repeat(ks.len()));
        for (name, m) in &r.recall {
            let cells: Vec<String> = ks
                .iter()
                .map(|k| m.get(&k.to_string()).map_or("-".into(), |v| format!("{:.1}%", 100.0 * v)))
                .collect();
            let _ = writeln!(s, "| {name} | {} |", cells.join(" | "));
        }
    }

    if !r.rerank.is_empty() {
        let _ = writeln!(s, "\n## Re-ranking with graph paths\n");
        let _ = writeln!(s, "| k | before | after | change |");
        let _ = writeln!(s, "|---:|---:|---:|---:|");
        for d in &r.rerank {
            let _ = writeln!(
                s,
                "| {} | {:.1}% | {:.1}% | {:+.1} |",
                d.k,
                100.0 * d.before,
                100.0 * d.after,
                100.0 * d.delta
            );
        }
    }

    let _ = writeln!(s, "\n## Stages\n");
    let _ = writeln!(s, "| stage | seed | counts |");
    let _ = writeln!(s, "|---|---:|---|");
    for st in &r.stages {
        let counts: Vec<String> = st.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            s,
            "| {} | {} | {} |",
            st.stage,
            st.seed.map_or("-".into(), |x| x.to_string()),
            counts.join(", ")
        );
    }
    s
}
