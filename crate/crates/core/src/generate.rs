//! Question generation: few-shot prompts over triplets, completion through
//! a backend, and validation of the resulting questions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backend::{complete_with_retry, first_line, map_bounded, CompletionBackend};
use crate::error::PromptError;
use crate::kg::{Catalog, Object, ObjectKind, Triplet};
use crate::sampler::Candidate;
use crate::text::{contains_phrase, normalize, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    /// `subject | property | object =>`
    #[default]
    FullTriplet,
    /// `subject | property =>`
    SubjectProperty,
}

/// Instruction line, few-shot exemplar lines rendered verbatim, then the
/// target slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub instruction: String,
    pub exemplars: Vec<String>,
    pub mode: TemplateMode,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instruction: "Generate questions:".into(),
            exemplars: vec![
                "obama | born | hawaii => where was obama born?".into(),
                "sky | color | blue => what color is the sky?".into(),
            ],
            mode: TemplateMode::FullTriplet,
        }
    }
}

/// Lowercased surface forms of a triplet: `(subject, property, object)`.
pub fn surface_labels(t: &Triplet, catalog: &Catalog) -> Result<(String, String, String), PromptError> {
    let subject = catalog
        .entity(&t.subject)
        .ok_or_else(|| PromptError::UnresolvedLabel(t.subject.to_string()))?;
    let property = catalog
        .property(&t.property)
        .ok_or_else(|| PromptError::UnresolvedLabel(t.property.to_string()))?;
    let object = catalog
        .object_label(&t.object)
        .ok_or_else(|| PromptError::UnresolvedLabel(t.object.value().to_owned()))?;
    Ok((
        subject.label.to_lowercase(),
        property.label.to_lowercase(),
        object.to_lowercase(),
    ))
}

pub fn build_prompt(t: &Triplet, tpl: &PromptTemplate, catalog: &Catalog) -> Result<String, PromptError> {
    let (s, p, o) = surface_labels(t, catalog)?;
    let slot = match tpl.mode {
        TemplateMode::FullTriplet => format!("{s} | {p} | {o} =>"),
        TemplateMode::SubjectProperty => format!("{s} | {p} =>"),
    };
    let mut lines = Vec::with_capacity(tpl.exemplars.len() + 2);
    lines.push(tpl.instruction.as_str());
    lines.extend(tpl.exemplars.iter().map(String::as_str));
    lines.push(&slot);
    Ok(lines.join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionFlag {
    Empty,
    MissingSubject,
    AnswerLeak,
    NoQuestionMark,
}

/// One generated question with its gold answer and source triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub qid: String,
    pub question: String,
    pub answer: String,
    pub aliases: BTreeSet<String>,
    pub subject: String,
    pub property: String,
    pub object: String,
    pub object_kind: ObjectKind,
    pub bucket: String,
    pub flags: Vec<QuestionFlag>,
    pub mode: TemplateMode,
    pub backend: String,
}

impl QaItem {
    pub fn triplet(&self) -> Option<Triplet> {
        let record = crate::kg::TripletRecord {
            subject: self.subject.clone(),
            property: self.property.clone(),
            object: self.object.clone(),
            object_kind: self.object_kind,
        };
        Triplet::try_from(record).ok()
    }

    /// Answer label followed by aliases.
    pub fn gold_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.answer.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

/// A triplet whose question could not be generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub qid: String,
    #[serde(flatten)]
    pub candidate: Candidate,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenerationOutcome {
    Generated(QaItem),
    Failed(GenerationFailure),
}

/// Flags problems with a generated question.
///
/// An empty question gets only the `Empty` flag.
pub fn validate_question(question: &str, subject_label: &str, answer: &str) -> Vec<QuestionFlag> {
    let q = question.trim();
    if q.is_empty() {
        return vec![QuestionFlag::Empty];
    }
    let mut flags = Vec::new();
    let q_tokens: BTreeSet<String> = tokenize(q).into_iter().collect();
    let subject_tokens = tokenize(subject_label);
    if !subject_tokens.is_empty() && !subject_tokens.iter().any(|t| q_tokens.contains(t)) {
        flags.push(QuestionFlag::MissingSubject);
    }
    if contains_phrase(&normalize(q), &normalize(answer)) {
        flags.push(QuestionFlag::AnswerLeak);
    }
    if !q.ends_with('?') {
        flags.push(QuestionFlag::NoQuestionMark);
    }
    flags
}

pub fn qid_for(bucket: &str, index: usize) -> String {
    format!("{bucket}-{index:06}")
}

/// Assembles the gold side of an item from the catalog alone.
fn gold_for(t: &Triplet, catalog: &Catalog) -> Result<(String, BTreeSet<String>), PromptError> {
    let answer = catalog
        .object_label(&t.object)
        .ok_or_else(|| PromptError::UnresolvedLabel(t.object.value().to_owned()))?
        .to_owned();
    let aliases = match &t.object {
        Object::Entity(_) => catalog.object_aliases(&t.object),
        Object::Literal(_) => BTreeSet::new(),
    };
    Ok((answer, aliases))
}

pub struct Generator<'a> {
    pub template: &'a PromptTemplate,
    pub catalog: &'a Catalog,
    pub backend: &'a dyn CompletionBackend,
    pub attempts: u32,
}

impl Generator<'_> {
    pub fn generate_question(&self, qid: String, candidate: &Candidate) -> GenerationOutcome {
        let fail = |error: String| {
            GenerationOutcome::Failed(GenerationFailure {
                qid: qid.clone(),
                candidate: candidate.clone(),
                error,
            })
        };
        let t = &candidate.triplet;
        let prompt = match build_prompt(t, self.template, self.catalog) {
            Ok(p) => p,
            Err(e) => return fail(e.to_string()),
        };
        let (answer, aliases) = match gold_for(t, self.catalog) {
            Ok(g) => g,
            Err(e) => return fail(e.to_string()),
        };
        let completion = match complete_with_retry(self.backend, &qid, &prompt, self.attempts) {
            Ok(c) => c,
            Err(e) => return fail(e.to_string()),
        };
        let question = first_line(&completion);
        let subject_label = self
            .catalog
            .entity(&t.subject)
            .map(|e| e.label.as_str())
            .unwrap_or_default();
        let flags = validate_question(&question, subject_label, &answer);
        let record = crate::kg::TripletRecord::from(t.clone());
        GenerationOutcome::Generated(QaItem {
            qid,
            question,
            answer,
            aliases,
            subject: record.subject,
            property: record.property,
            object: record.object,
            object_kind: record.object_kind,
            bucket: candidate.bucket.clone(),
            flags,
            mode: self.template.mode,
            backend: self.backend.name().to_owned(),
        })
    }

    /// Generates one outcome per candidate, in input order. Qids are
    /// `<bucket>-<n>` where `n` counts that bucket's candidates so far.
    pub fn generate_all(&self, candidates: &[Candidate]) -> Vec<GenerationOutcome> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let jobs: Vec<(String, &Candidate)> = candidates
            .iter()
            .map(|c| {
                let n = seen.entry(c.bucket.as_str()).or_default();
                let qid = qid_for(&c.bucket, *n);
                *n += 1;
                (qid, c)
            })
            .collect();
        self.generate_batch(&jobs)
    }

    /// Generates outcomes for explicitly identified candidates.
    pub fn generate_batch(&self, jobs: &[(String, &Candidate)]) -> Vec<GenerationOutcome> {
        map_bounded(jobs, self.backend.max_in_flight(), |(qid, c)| {
            self.generate_question(qid.clone(), c)
        })
    }
}

pub fn split_outcomes(outcomes: Vec<GenerationOutcome>) -> (Vec<QaItem>, Vec<GenerationFailure>) {
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            GenerationOutcome::Generated(q) => items.push(q),
            GenerationOutcome::Failed(f) => failures.push(f),
        }
    }
    (items, failures)
}
