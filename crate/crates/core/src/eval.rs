//! Answering, alias-aware exact-match scoring and error-category reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{complete_with_retry, first_line, map_bounded, CompletionBackend};
use crate::error::EvalError;
use crate::generate::QaItem;
use crate::text::normalize;

/// Returns the gold surface form matched by `pred` after normalization.
pub fn match_surface<'a>(pred: &str, gold: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    let p = normalize(pred);
    gold.into_iter().find(|g| normalize(g) == p)
}

/// True iff the normalized prediction equals the normalized label or any
/// normalized alias.
pub fn exact_match<'a>(pred: &str, gold: impl IntoIterator<Item = &'a str>) -> bool {
    match_surface(pred, gold).is_some()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    #[default]
    ClosedBook,
    WithContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnswerTemplate {
    pub instruction: String,
    /// `question => answer` lines for closed-book prompts.
    pub exemplars: Vec<String>,
    /// Complete `Question:/Document:/Answer:` blocks placed before the
    /// target in with-context prompts.
    pub context_exemplars: Vec<String>,
}

impl Default for AnswerTemplate {
    fn default() -> Self {
        Self {
            instruction: "Answer the given question:".into(),
            exemplars: vec![
                "where was obama born? => hawaii".into(),
                "what color is the sky? => blue".into(),
            ],
            context_exemplars: Vec::new(),
        }
    }
}

impl AnswerTemplate {
    pub fn closed_book(&self, question: &str) -> String {
        let mut lines: Vec<&str> = vec![&self.instruction];
        lines.extend(self.exemplars.iter().map(String::as_str));
        let slot = format!("{} =>", question.trim());
        lines.push(&slot);
        lines.join("\n")
    }

    pub fn with_context(&self, question: &str, document: &str) -> String {
        let mut blocks: Vec<String> = self.context_exemplars.clone();
        blocks.push(format!(
            "Question: {}\nDocument: {}\nAnswer:",
            question.trim(),
            document.trim()
        ));
        blocks.join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionFlag {
    BackendFailed,
    /// With-context answering fell back to closed-book.
    NoContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub qid: String,
    pub prediction: String,
    pub context_passage: Option<String>,
    pub mode: AnswerMode,
    pub backend: String,
    #[serde(default)]
    pub flags: Vec<PredictionFlag>,
}

/// Context passage chosen for a question: `(passage id, text)`.
pub type Context = (String, String);

/// Answers every item. In `WithContext` mode a question without a context
/// entry is answered closed-book and flagged.
pub fn answer_dataset(
    items: &[QaItem],
    backend: &dyn CompletionBackend,
    template: &AnswerTemplate,
    mode: AnswerMode,
    contexts: Option<&HashMap<String, Option<Context>>>,
    attempts: u32,
) -> Vec<Prediction> {
    map_bounded(items, backend.max_in_flight(), |item| {
        let mut flags = Vec::new();
        let context = match mode {
            AnswerMode::ClosedBook => None,
            AnswerMode::WithContext => {
                let c = contexts.and_then(|m| m.get(&item.qid)).and_then(Option::as_ref);
                if c.is_none() {
                    flags.push(PredictionFlag::NoContext);
                }
                c
            }
        };
        let prompt = match context {
            Some((_, text)) => template.with_context(&item.question, text),
            None => template.closed_book(&item.question),
        };
        let prediction = match complete_with_retry(backend, &item.qid, &prompt, attempts) {
            Ok(c) => first_line(&c),
            Err(e) => {
                log::warn!("{}: {e}", item.qid);
                flags.push(PredictionFlag::BackendFailed);
                String::new()
            }
        };
        Prediction {
            qid: item.qid.clone(),
            prediction,
            context_passage: context.map(|(id, _)| id.clone()),
            mode,
            backend: backend.name().to_owned(),
            flags,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Incorrect,
    Granularity,
    IncorrectQuestion,
    ExactMatch,
    MultipleAnswers,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 6] = [
        ErrorCategory::Incorrect,
        ErrorCategory::Granularity,
        ErrorCategory::IncorrectQuestion,
        ErrorCategory::ExactMatch,
        ErrorCategory::MultipleAnswers,
        ErrorCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Incorrect => "incorrect",
            ErrorCategory::Granularity => "granularity",
            ErrorCategory::IncorrectQuestion => "incorrect_question",
            ErrorCategory::ExactMatch => "exact_match",
            ErrorCategory::MultipleAnswers => "multiple_answers",
            ErrorCategory::Other => "other",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| EvalError::UnknownCategory(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qid: String,
    pub bucket: String,
    pub correct: bool,
    /// Gold surface form that matched, if any.
    pub matched: Option<String>,
    /// Set only on incorrect items, from manual annotation.
    pub error_category: Option<ErrorCategory>,
    /// No prediction was supplied for this item.
    #[serde(default)]
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub count: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub annotated: usize,
    pub categories: BTreeMap<ErrorCategory, CategoryShare>,
}

impl ErrorDistribution {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let mut counts: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
        for c in records.iter().filter_map(|r| r.error_category) {
            *counts.entry(c).or_default() += 1;
        }
        let annotated: usize = counts.values().sum();
        let categories = counts
            .into_iter()
            .map(|(c, count)| {
                (
                    c,
                    CategoryShare {
                        count,
                        ratio: count as f64 / annotated as f64,
                    },
                )
            })
            .collect();
        Self {
            annotated,
            categories,
        }
    }

    pub fn ratio(&self, c: ErrorCategory) -> f64 {
        self.categories.get(&c).map_or(0.0, |s| s.ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub dataset: String,
    pub item_count: usize,
    pub correct: usize,
    pub missing: usize,
    pub accuracy: f64,
    pub per_bucket: BTreeMap<String, BucketAccuracy>,
    pub error_analysis: ErrorDistribution,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predictions against the dataset. Items without a prediction count
/// as incorrect; if a qid has several predictions the first is used.
pub fn score(dataset: &str, items: &[QaItem], predictions: &[Prediction]) -> (Vec<EvalRecord>, AccuracyReport) {
    let mut by_qid: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        by_qid.entry(p.qid.as_str()).or_insert(p);
    }
    let records: Vec<EvalRecord> = items
        .iter()
        .map(|item| match by_qid.get(item.qid.as_str()) {
            Some(p) => {
                let matched = match_surface(&p.prediction, item.gold_forms()).map(str::to_owned);
                EvalRecord {
                    qid: item.qid.clone(),
                    bucket: item.bucket.clone(),
                    correct: matched.is_some(),
                    matched,
                    error_category: None,
                    missing: false,
                }
            }
            None => EvalRecord {
                qid: item.qid.clone(),
                bucket: item.bucket.clone(),
                correct: false,
                matched: None,
                error_category: None,
                missing: true,
            },
        })
        .collect();
    let report = report_for(dataset, &records);
    (records, report)
}

/// Aggregates records into a report.
pub fn report_for(dataset: &str, records: &[EvalRecord]) -> AccuracyReport {
    let mut per_bucket: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = per_bucket.entry(r.bucket.clone()).or_default();
        e.0 += 1;
        e.1 += usize::from(r.correct);
    }
    let correct = records.iter().filter(|r| r.correct).count();
    AccuracyReport {
        dataset: dataset.to_owned(),
        item_count: records.len(),
        correct,
        missing: records.iter().filter(|r| r.missing).count(),
        accuracy: ratio(correct, records.len()),
        per_bucket: per_bucket
            .into_iter()
            .map(|(b, (count, correct))| {
                (
                    b,
                    BucketAccuracy {
                        count,
                        correct,
                        accuracy: ratio(correct, count),
                    },
                )
            })
            .collect(),
        error_analysis: ErrorDistribution::from_records(records),
    }
}

/// One line of an annotations file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub qid: String,
    pub category: ErrorCategory,
}

/// Attaches manual error categories to incorrect records and returns the
/// resulting distribution. Annotating a correct or unknown item fails
/// without modifying any record.
pub fn import_error_annotations(
    records: &mut [EvalRecord],
    annotations: &[Annotation],
) -> Result<ErrorDistribution, EvalError> {
    let index: HashMap<String, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.qid.clone(), i))
        .collect();
    let mut updates = Vec::with_capacity(annotations.len());
    for a in annotations {
        let &i = index
            .get(&a.qid)
            .ok_or_else(|| EvalError::UnknownQid(a.qid.clone()))?;
        if records[i].correct {
            return Err(EvalError::AnnotatedCorrect(a.qid.clone()));
        }
        updates.push((i, a.category));
    }
    for (i, c) in updates {
        records[i].error_category = Some(c);
    }
    Ok(ErrorDistribution::from_records(records))
}

/// Seeded sample of up to `n` incorrect qids for manual annotation, sorted.
pub fn sample_misses(records: &[EvalRecord], n: usize, seed: u64) -> Vec<String> {
    let misses: Vec<&str> = records
        .iter()
        .filter(|r| !r.correct)
        .map(|r| r.qid.as_str())
        .collect();
    let mut picked: Vec<String> = if n >= misses.len() {
        misses.iter().map(|s| s.to_string()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, misses.len(), n)
            .into_iter()
            .map(|i| misses[i].to_owned())
            .collect()
    };
    picked.sort();
    picked
}

/// Qids of items whose property is in `untriaged`, for report warnings.
pub fn untriaged_items<'a>(items: &'a [QaItem], untriaged: &BTreeSet<String>) -> Vec<&'a str> {
    items
        .iter()
        .filter(|i| untriaged.contains(&i.property))
        .map(|i| i.qid.as_str())
        .collect()
}
