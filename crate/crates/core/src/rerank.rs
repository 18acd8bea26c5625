//! Re-ranking retrieved passages by similarity to verbalized knowledge-graph
//! paths leaving the question's subject entity.
//!
//! Paths are enumerated outward from the subject because the answer entity
//! is unknown at inference time. A passage's KG score is its best cosine
//! against any path verbalization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{PromptError, RetrievalError};
use crate::generate::QaItem;
use crate::kg::{Catalog, Edge, EntityId, KnowledgeGraph, Object};
use crate::retrieval::{cosine, recall_at_k, AnswerScanner, Corpus, EmbeddingProvider, RankedList, ScoredPassage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    /// Order by KG score alone.
    #[default]
    SimilarityOnly,
    /// `alpha * minmax(original) + (1 - alpha) * kg_score`.
    Convex,
}

impl std::str::FromStr for CombineRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "similarity_only" => Ok(CombineRule::SimilarityOnly),
            "convex" => Ok(CombineRule::Convex),
            other => Err(format!("unknown combine rule {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub max_depth: usize,
    pub max_paths: usize,
    pub combine: CombineRule,
    pub alpha: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            max_depth: 2,
            max_paths: 64,
            combine: CombineRule::SimilarityOnly,
            alpha: 0.5,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_depth < 1 {
            return Err("max_depth must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        Ok(())
    }
}

/// A walk from `start` along outgoing edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KgPath {
    pub start: EntityId,
    pub hops: Vec<Edge>,
}

impl KgPath {
    pub fn new(start: EntityId) -> Self {
        Self {
            start,
            hops: Vec::new(),
        }
    }

    /// Entity at the end of the path, or `None` if it ends on a literal.
    pub fn end_entity(&self) -> Option<&EntityId> {
        match self.hops.last() {
            None => Some(&self.start),
            Some((_, o)) => o.as_entity(),
        }
    }

    pub fn visits(&self, e: &EntityId) -> bool {
        &self.start == e || self.hops.iter().any(|(_, o)| o.as_entity() == Some(e))
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }
}

/// Breadth-first enumeration of simple paths of 1..=`max_depth` hops from
/// `subject`, in order of hop count and then lexicographic edge ids, cut off
/// after `max_paths`. Literal objects end a path.
pub fn find_paths(graph: &KnowledgeGraph, subject: &EntityId, cfg: &RerankConfig) -> Vec<KgPath> {
    let mut out = Vec::new();
    if graph.degree(subject) == 0 || cfg.max_paths == 0 {
        return out;
    }
    let mut frontier = vec![KgPath::new(subject.clone())];
    for _ in 0..cfg.max_depth {
        let mut next = Vec::new();
        for path in &frontier {
            let Some(end) = path.end_entity() else {
                continue;
            };
            for (p, o) in graph.edges(end) {
                if let Object::Entity(e) = o {
                    if path.visits(e) {
                        continue;
                    }
                }
                let mut extended = path.clone();
                extended.hops.push((p.clone(), o.clone()));
                out.push(extended.clone());
                if out.len() >= cfg.max_paths {
                    return out;
                }
                next.push(extended);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    out
}

/// Lowercased surface forms of every node and edge on the path, joined by
/// single spaces.
pub fn verbalize(path: &KgPath, catalog: &Catalog) -> Result<String, PromptError> {
    let label_of = |id: &EntityId| {
        catalog
            .entity(id)
            .map(|e| e.label.to_lowercase())
            .ok_or_else(|| PromptError::UnresolvedLabel(id.to_string()))
    };
    let mut parts = vec![label_of(&path.start)?];
    for (p, o) in &path.hops {
        parts.push(
            catalog
                .property(p)
                .map(|p| p.label.to_lowercase())
                .ok_or_else(|| PromptError::UnresolvedLabel(p.to_string()))?,
        );
        parts.push(match o {
            Object::Entity(e) => label_of(e)?,
            Object::Literal(s) => s.to_lowercase(),
        });
    }
    Ok(parts
        .iter()
        .flat_map(|p| p.split_whitespace())
        .collect::<Vec<_>>()
        .join(" "))
}

/// Verbalizes each path, skipping and counting those with missing labels.
pub fn verbalize_all(paths: &[KgPath], catalog: &Catalog) -> (Vec<String>, usize) {
    let mut out = Vec::with_capacity(paths.len());
    let mut skipped = 0;
    for p in paths {
        match verbalize(p, catalog) {
            Ok(v) => out.push(v),
            Err(_) => skipped += 1,
        }
    }
    (out, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankEntry {
    pub passage: String,
    pub orig_score: f64,
    pub kg_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankFlag {
    /// No path verbalizations; the input order was kept.
    NoPaths,
}

/// One line of the rerank output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRecord {
    pub qid: String,
    pub ranking: Vec<RerankEntry>,
    pub paths_used: usize,
    #[serde(default)]
    pub flags: Vec<RerankFlag>,
}

impl RerankRecord {
    /// The reranked order as a ranked list scored by KG similarity.
    pub fn to_ranked_list(&self, retriever: &str) -> RankedList {
        RankedList {
            qid: self.qid.clone(),
            retriever: retriever.to_owned(),
            ranking: self
                .ranking
                .iter()
                .map(|e| ScoredPassage {
                    passage: e.passage.clone(),
                    score: e.kg_score,
                })
                .collect(),
        }
    }
}

fn minmax(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; xs.len()]
    }
}

/// Reorders `ranked` by KG similarity. The output holds exactly the input
/// passages; ties keep their original relative order.
pub fn rerank(
    ranked: &RankedList,
    verbalizations: &[String],
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    cfg: &RerankConfig,
) -> Result<RerankRecord, RetrievalError> {
    if verbalizations.is_empty() || ranked.ranking.is_empty() {
        return Ok(RerankRecord {
            qid: ranked.qid.clone(),
            ranking: ranked
                .ranking
                .iter()
                .map(|s| RerankEntry {
                    passage: s.passage.clone(),
                    orig_score: s.score,
                    kg_score: 0.0,
                })
                .collect(),
            paths_used: 0,
            flags: vec![RerankFlag::NoPaths],
        });
    }
    let path_texts: Vec<&str> = verbalizations.iter().map(String::as_str).collect();
    let path_vecs = provider.embed(&path_texts)?;
    let passage_texts: Vec<&str> = ranked
        .ranking
        .iter()
        .map(|s| corpus.get(&s.passage).map_or("", |p| p.text.as_str()))
        .collect();
    let passage_vecs = provider.embed(&passage_texts)?;
    let kg_scores: Vec<f64> = passage_vecs
        .iter()
        .map(|pv| {
            path_vecs
                .iter()
                .map(|v| cosine(v, pv))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let combined: Vec<f64> = match cfg.combine {
        CombineRule::SimilarityOnly => kg_scores.clone(),
        CombineRule::Convex => {
            let orig: Vec<f64> = ranked.ranking.iter().map(|s| s.score).collect();
            minmax(&orig)
                .into_iter()
                .zip(&kg_scores)
                .map(|(o, k)| cfg.alpha * o + (1.0 - cfg.alpha) * k)
                .collect()
        }
    };
    let mut order: Vec<usize> = (0..ranked.ranking.len()).collect();
    order.sort_by(|&i, &j| combined[j].total_cmp(&combined[i]).then(i.cmp(&j)));
    Ok(RerankRecord {
        qid: ranked.qid.clone(),
        ranking: order
            .into_iter()
            .map(|i| RerankEntry {
                passage: ranked.ranking[i].passage.clone(),
                orig_score: ranked.ranking[i].score,
                kg_score: kg_scores[i],
            })
            .collect(),
        paths_used: verbalizations.len(),
        flags: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallDelta {
    pub k: usize,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

/// recall@k before and after re-ranking.
pub fn rerank_report(
    items: &[QaItem],
    before: &HashMap<String, RankedList>,
    after: &HashMap<String, RankedList>,
    scanner: &AnswerScanner<'_>,
    ks: &[usize],
) -> Vec<RecallDelta> {
    let b = recall_at_k(items, before, scanner, ks);
    let a = recall_at_k(items, after, scanner, ks);
    ks.iter()
        .map(|k| RecallDelta {
            k: *k,
            before: b[k],
            after: a[k],
            delta: a[k] - b[k],
        })
        .collect()
}
