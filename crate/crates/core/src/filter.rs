//! Property screening: automatic heuristics that suggest rejections and an
//! append-only ledger of heuristic and human verdicts.
//!
//! The effective verdict of a property is its last human entry if one
//! exists, otherwise its last heuristic entry. Properties with no entry are
//! untriaged and kept.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::FilterError;
use crate::kg::{Catalog, Object, Property, PropertyId, Triplet};
use crate::text::{contains_phrase, normalize, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictSource {
    Heuristic,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub reason: String,
    pub source: VerdictSource,
}

impl Verdict {
    pub fn new(
        decision: Decision,
        reason: impl Into<String>,
        source: VerdictSource,
    ) -> Result<Self, FilterError> {
        let reason = reason.into();
        if decision == Decision::Reject && reason.trim().is_empty() {
            return Err(FilterError::MissingReason);
        }
        Ok(Self {
            decision,
            reason,
            source,
        })
    }

    pub fn human(decision: Decision, reason: impl Into<String>) -> Result<Self, FilterError> {
        Self::new(decision, reason, VerdictSource::Human)
    }
}

/// Which screening rule fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenRule {
    UrlMedia,
    AnswerLeak,
    Blocklist,
}

impl ScreenRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ScreenRule::UrlMedia => "url_media",
            ScreenRule::AnswerLeak => "answer_leak",
            ScreenRule::Blocklist => "blocklist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub property_id: PropertyId,
    pub decision: Decision,
    pub fired: Vec<ScreenRule>,
    pub reason: String,
}

impl Suggestion {
    pub fn to_verdict(&self) -> Verdict {
        Verdict {
            decision: self.decision,
            reason: self.reason.clone(),
            source: VerdictSource::Heuristic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Fraction of literal samples that must look like URLs or media files.
    pub url_threshold: f64,
    /// Fraction of samples whose object must appear in the subject label.
    pub leak_threshold: f64,
    pub label_keywords: Vec<String>,
    pub media_extensions: Vec<String>,
    pub blocklist: Vec<String>,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            url_threshold: 0.5,
            leak_threshold: 0.5,
            label_keywords: ["url", "image", "logo", "website", "blog"]
                .map(String::from)
                .to_vec(),
            media_extensions: [
                "jpg", "jpeg", "png", "gif", "svg", "tif", "tiff", "webp", "bmp", "ogg", "oga",
                "ogv", "mp3", "mp4", "wav", "flac", "webm", "pdf", "djvu",
            ]
            .map(String::from)
            .to_vec(),
            blocklist: default_blocklist(),
        }
    }
}

/// Structural properties that yield questions too vague to answer.
pub fn default_blocklist() -> Vec<String> {
    ["instance of", "subclass of", "part of"]
        .map(String::from)
        .to_vec()
}

/// Reads a blocklist file: one property label per line, `#` comments.
pub fn load_blocklist(path: &Path) -> std::io::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

/// Screens a property against its sampled triplets.
pub struct Screener {
    config: HeuristicConfig,
    url_pattern: Regex,
    blocklist: BTreeSet<String>,
}

impl Screener {
    pub fn new(config: HeuristicConfig) -> Self {
        let blocklist = config.blocklist.iter().map(|l| normalize(l)).collect();
        Self {
            config,
            url_pattern: Regex::new(r"(?i)^\s*((https?|ftp)://|www\.)\S+").expect("static regex"),
            blocklist,
        }
    }

    fn looks_like_url_or_media(&self, text: &str) -> bool {
        if self.url_pattern.is_match(text) {
            return true;
        }
        let lowered = text.trim().to_lowercase();
        lowered
            .rsplit_once('.')
            .is_some_and(|(stem, ext)| !stem.is_empty() && self.config.media_extensions.iter().any(|m| m == ext))
    }

    /// Suggests `reject` when any rule fires:
    ///
    /// * `url_media`: the label has a URL/media keyword, or at least
    ///   `url_threshold` of the literal objects are URLs or media files;
    /// * `answer_leak`: at least `leak_threshold` of the samples have their
    ///   normalized object inside the normalized subject label;
    /// * `blocklist`: the label is on the structural blocklist.
    pub fn screen(&self, property: &Property, samples: &[Triplet], catalog: &Catalog) -> Suggestion {
        let mut fired = Vec::new();
        let mut reasons = Vec::new();

        let label_tokens = tokenize(&property.label);
        let keyword = self
            .config
            .label_keywords
            .iter()
            .find(|k| label_tokens.iter().any(|t| t == *k));
        let literals: Vec<&str> = samples
            .iter()
            .filter_map(|t| match &t.object {
                Object::Literal(s) => Some(s.as_str()),
                Object::Entity(_) => None,
            })
            .collect();
        let url_like = literals
            .iter()
            .filter(|s| self.looks_like_url_or_media(s))
            .count();
        if let Some(k) = keyword {
            fired.push(ScreenRule::UrlMedia);
            reasons.push(format!("label mentions {k:?}"));
        } else if !literals.is_empty()
            && url_like as f64 >= self.config.url_threshold * literals.len() as f64
        {
            fired.push(ScreenRule::UrlMedia);
            reasons.push(format!(
                "{url_like}/{} literal objects are URLs or media files",
                literals.len()
            ));
        }

        if !samples.is_empty() {
            let leaks = samples
                .iter()
                .filter(|t| {
                    let subject = catalog.entity(&t.subject).map(|e| normalize(&e.label));
                    let object = catalog.object_label(&t.object).map(normalize);
                    match (subject, object) {
                        (Some(s), Some(o)) => contains_phrase(&s, &o),
                        _ => false,
                    }
                })
                .count();
            if leaks as f64 >= self.config.leak_threshold * samples.len() as f64 && leaks > 0 {
                fired.push(ScreenRule::AnswerLeak);
                reasons.push(format!(
                    "{leaks}/{} answers appear in the subject label",
                    samples.len()
                ));
            }
        }

        if self.blocklist.contains(&normalize(&property.label)) {
            fired.push(ScreenRule::Blocklist);
            reasons.push("structural property on the blocklist".to_owned());
        }

        let decision = if fired.is_empty() {
            Decision::Keep
        } else {
            Decision::Reject
        };
        Suggestion {
            property_id: property.id.clone(),
            decision,
            fired,
            reason: if reasons.is_empty() {
                "no rule fired".to_owned()
            } else {
                reasons.join("; ")
            },
        }
    }
}

/// One line of the ledger file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub property_id: PropertyId,
    pub verdict: Decision,
    pub reason: String,
    pub source: VerdictSource,
    pub ts: String,
}

impl LedgerEntry {
    pub fn new(property_id: PropertyId, verdict: &Verdict, ts: DateTime<Utc>) -> Self {
        Self {
            property_id,
            verdict: verdict.decision,
            reason: verdict.reason.clone(),
            source: verdict.source,
            ts: ts.to_rfc3339_opts(SecondsFormat::Millis, true),
        }
    }

    pub fn to_verdict(&self) -> Verdict {
        Verdict {
            decision: self.verdict,
            reason: self.reason.clone(),
            source: self.source,
        }
    }
}

/// In-memory, append-only sequence of ledger entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<LedgerEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a decision for a property that exists in the catalog.
    pub fn record(
        &mut self,
        catalog: &Catalog,
        property: &PropertyId,
        verdict: &Verdict,
        ts: DateTime<Utc>,
    ) -> Result<&LedgerEntry, FilterError> {
        if catalog.property(property).is_none() {
            return Err(FilterError::UnknownProperty(property.to_string()));
        }
        self.push(LedgerEntry::new(property.clone(), verdict, ts))
    }

    /// Appends an entry without a catalog check.
    pub fn push(&mut self, entry: LedgerEntry) -> Result<&LedgerEntry, FilterError> {
        if entry.verdict == Decision::Reject && entry.reason.trim().is_empty() {
            return Err(FilterError::MissingReason);
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Effective verdict for one property.
    pub fn effective(&self, property: &PropertyId) -> Option<Verdict> {
        let mut heuristic = None;
        let mut human = None;
        for e in self.entries.iter().filter(|e| &e.property_id == property) {
            match e.source {
                VerdictSource::Human => human = Some(e),
                VerdictSource::Heuristic => heuristic = Some(e),
            }
        }
        human.or(heuristic).map(LedgerEntry::to_verdict)
    }

    /// Effective verdicts for every property mentioned, as a single fold.
    pub fn effective_map(&self) -> BTreeMap<PropertyId, Verdict> {
        let mut human: BTreeMap<PropertyId, &LedgerEntry> = BTreeMap::new();
        let mut heuristic: BTreeMap<PropertyId, &LedgerEntry> = BTreeMap::new();
        for e in &self.entries {
            let slot = match e.source {
                VerdictSource::Human => &mut human,
                VerdictSource::Heuristic => &mut heuristic,
            };
            slot.insert(e.property_id.clone(), e);
        }
        let mut out: BTreeMap<PropertyId, Verdict> = heuristic
            .into_iter()
            .map(|(p, e)| (p, e.to_verdict()))
            .collect();
        for (p, e) in human {
            out.insert(p, e.to_verdict());
        }
        out
    }

    /// Last heuristic entry for a property, if any.
    pub fn last_heuristic(&self, property: &PropertyId) -> Option<&LedgerEntry> {
        self.entries
            .iter()
            .rev()
            .find(|e| &e.property_id == property && e.source == VerdictSource::Heuristic)
    }

    pub fn parse(text: &str) -> Result<Self, FilterError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: LedgerEntry =
                serde_json::from_str(line).map_err(|e| FilterError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

/// The ledger file plus its in-memory replay. Every append is written and
/// flushed to disk before the in-memory view changes.
#[derive(Debug)]
pub struct LedgerFile {
    path: PathBuf,
    file: File,
    ledger: Ledger,
}

impl LedgerFile {
    /// Opens (creating if missing) and replays the ledger at `path`.
    pub fn open(path: &Path) -> Result<Self, FilterError> {
        let ledger = if path.exists() {
            let mut text = String::new();
            for line in BufReader::new(File::open(path)?).lines() {
                text.push_str(&line?);
                text.push('\n');
            }
            Ledger::parse(&text)?
        } else {
            Ledger::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_owned(),
            file,
            ledger,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn append(&mut self, entry: LedgerEntry) -> Result<&LedgerEntry, FilterError> {
        if entry.verdict == Decision::Reject && entry.reason.trim().is_empty() {
            return Err(FilterError::MissingReason);
        }
        let mut line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()?;
        self.ledger.push(entry)
    }

    pub fn record(
        &mut self,
        catalog: &Catalog,
        property: &PropertyId,
        verdict: &Verdict,
        ts: DateTime<Utc>,
    ) -> Result<&LedgerEntry, FilterError> {
        if catalog.property(property).is_none() {
            return Err(FilterError::UnknownProperty(property.to_string()));
        }
        self.append(LedgerEntry::new(property.clone(), verdict, ts))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterOutcome<T> {
    pub kept: Vec<T>,
    pub rejected: Vec<T>,
    /// Properties kept only because nobody has decided on them yet.
    pub untriaged: BTreeSet<PropertyId>,
}

/// Partitions candidates by the effective verdict of their property.
pub fn apply_filter<T: AsRef<Triplet> + Clone>(candidates: &[T], ledger: &Ledger) -> FilterOutcome<T> {
    let verdicts = ledger.effective_map();
    let mut outcome = FilterOutcome {
        kept: Vec::new(),
        rejected: Vec::new(),
        untriaged: BTreeSet::new(),
    };
    for c in candidates {
        let property = &c.as_ref().property;
        match verdicts.get(property) {
            Some(v) if v.decision == Decision::Reject => outcome.rejected.push(c.clone()),
            Some(_) => outcome.kept.push(c.clone()),
            None => {
                outcome.untriaged.insert(property.clone());
                outcome.kept.push(c.clone());
            }
        }
    }
    if !outcome.untriaged.is_empty() {
        log::warn!(
            "{} properties have no verdict and were kept untriaged",
            outcome.untriaged.len()
        );
    }
    outcome
}
