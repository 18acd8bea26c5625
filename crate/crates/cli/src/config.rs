//! Pipeline configuration: one TOML file, overridable per key from the
//! command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tailqa_core::backend::CompletionProfile;
use tailqa_core::eval::AnswerTemplate;
use tailqa_core::filter::HeuristicConfig;
use tailqa_core::generate::PromptTemplate;
use tailqa_core::kg::IngestMode;
use tailqa_core::rerank::RerankConfig;
use tailqa_core::retrieval::Bm25Params;
use tailqa_core::sampler::{BucketSet, DegreeBucket, EntityCount};
use tailqa_triage::TriageConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub triplets: PathBuf,
    pub entities: PathBuf,
    pub properties: PathBuf,
    pub corpus: Option<PathBuf>,
    /// Precomputed passage vectors; computed by `build-index` when absent.
    pub vectors: Option<PathBuf>,
    pub vector_ids: Option<PathBuf>,
    pub blocklist: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    /// Defaults to `<output>/ledger.jsonl`.
    pub ledger: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub sample: u64,
    pub difficulty: u64,
    pub misses: u64,
    pub triage: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            sample: 1,
            difficulty: 2,
            misses: 3,
            triage: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    pub entity_count: EntityCount,
    pub ingest_mode: IngestMode,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self {
            entity_count: EntityCount::Count(100),
            ingest_mode: IngestMode::Lenient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    /// Record heuristic suggestions in the ledger.
    pub auto_apply: bool,
    pub heuristics: HeuristicConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifficultySettings {
    /// Upper bound on the matched size of each dataset.
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    /// `mock` or the name of a `[backends.*]` profile.
    pub backend: String,
    pub attempts: u32,
    pub template: PromptTemplate,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self {
            backend: "mock".into(),
            attempts: 2,
            template: PromptTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    Bm25,
    Dense,
    Rerank,
}

impl ContextSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextSource::Bm25 => "bm25",
            ContextSource::Dense => "dense",
            ContextSource::Rerank => "rerank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerSettings {
    /// `echo-gold` or the name of a `[backends.*]` profile.
    pub backend: String,
    /// Share of questions the echo-gold backend deliberately misses.
    pub echo_miss_rate: f64,
    pub attempts: u32,
    pub with_context: bool,
    pub context_source: ContextSource,
    pub template: AnswerTemplate,
}

impl Default for AnswerSettings {
    fn default() -> Self {
        Self {
            backend: "echo-gold".into(),
            echo_miss_rate: 0.0,
            attempts: 2,
            with_context: true,
            context_source: ContextSource::Bm25,
            template: AnswerTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Feature-hashed bag of words.
    Hashing,
    /// Exact bag of words over the corpus vocabulary.
    Vocabulary,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub provider: EmbeddingKind,
    pub dimension: usize,
    pub url: Option<String>,
    pub batch_size: usize,
    pub timeout_secs: u64,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            provider: EmbeddingKind::Hashing,
            dimension: 256,
            url: None,
            batch_size: 64,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub retrievers: Vec<String>,
    pub top_k: usize,
    pub recall_ks: Vec<usize>,
    pub bm25: Bm25Params,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            retrievers: vec!["bm25".into(), "dense".into()],
            top_k: 100,
            recall_ks: vec![1, 5, 10, 20, 100],
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankSettings {
    /// Retriever whose lists are re-ranked.
    pub base: String,
    #[serde(flatten)]
    pub params: RerankConfig,
}

impl Default for RerankSettings {
    fn default() -> Self {
        Self {
            base: "bm25".into(),
            params: RerankConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub misses_to_sample: usize,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self { misses_to_sample: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_buckets")]
    pub buckets: Vec<DegreeBucket>,
    #[serde(default)]
    pub sample: SampleSettings,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub difficulty: DifficultySettings,
    #[serde(default)]
    pub generate: GenerateSettings,
    #[serde(default)]
    pub answer: AnswerSettings,
    #[serde(default)]
    pub embedding: EmbeddingSettings,
    #[serde(default)]
    pub retrieval: RetrievalSettings,
    #[serde(default)]
    pub rerank: RerankSettings,
    #[serde(default)]
    pub evaluate: EvaluateSettings,
    #[serde(default)]
    pub triage: TriageConfig,
    #[serde(default)]
    pub backends: BTreeMap<String, CompletionProfile>,
}

fn default_buckets() -> Vec<DegreeBucket> {
    BucketSet::tail_defaults().iter().cloned().collect()
}

impl PipelineConfig {
    /// Reads the file, applies `key=value` overrides, resolves relative
    /// paths against the file's directory and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        if let Some(dir) = &mut cfg.triage.static_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.bucket_set()?;
        self.rerank.params.validate().map_err(CliError::Usage)?;
        if !(0.0..=1.0).contains(&self.answer.echo_miss_rate) {
            return Err(CliError::Usage("answer.echo_miss_rate must lie in [0, 1]".into()));
        }
        if self.retrieval.top_k == 0 {
            return Err(CliError::Usage("retrieval.top_k must be positive".into()));
        }
        if self.retrieval.recall_ks.contains(&0) {
            return Err(CliError::Usage("retrieval.recall_ks must be positive".into()));
        }
        for r in &self.retrieval.retrievers {
            if r != "bm25" && r != "dense" {
                return Err(CliError::Usage(format!("unknown retriever {r:?}")));
            }
        }
        if self.embedding.dimension == 0 {
            return Err(CliError::Usage("embedding.dimension must be positive".into()));
        }
        for (what, name) in [("generate", &self.generate.backend), ("answer", &self.answer.backend)] {
            let builtin = matches!((what, name.as_str()), ("generate", "mock") | ("answer", "echo-gold"));
            if !builtin && !self.backends.contains_key(name) {
                return Err(CliError::Usage(format!("{what}.backend {name:?} has no [backends.{name}] profile")));
            }
        }
        Ok(())
    }

    pub fn bucket_set(&self) -> Result<BucketSet, CliError> {
        BucketSet::new(self.buckets.clone()).map_err(|e| CliError::Usage(format!("buckets: {e}")))
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.paths
            .ledger
            .clone()
            .unwrap_or_else(|| self.paths.output.join("ledger.jsonl"))
    }

    /// Canonical JSON form used for the config digest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.triplets);
        fix(&mut self.entities);
        fix(&mut self.properties);
        fix(&mut self.output);
        for p in [
            &mut self.corpus,
            &mut self.vectors,
            &mut self.vector_ids,
            &mut self.blocklist,
            &mut self.annotations,
            &mut self.ledger,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

/// Sets a dotted key, e.g. `rerank.max_depth=3` or `paths.output="out2"`.
/// The value is parsed as a TOML literal, falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not key=value")))?;
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
triplets = "kg/triplets.tsv"
entities = "kg/entities.jsonl"
properties = "kg/properties.jsonl"
output = "out"
"#;

    fn load(text: &str, overrides: &[&str]) -> Result<PipelineConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tailqa.toml");
        std::fs::write(&path, text).unwrap();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        PipelineConfig::load(&path, &o)
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = load(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.buckets.len(), 2);
        assert_eq!(cfg.rerank.params.max_depth, 2);
        assert_eq!(cfg.generate.backend, "mock");
        assert!(cfg.paths.triplets.ends_with("kg/triplets.tsv"));
        assert!(cfg.paths.triplets.is_absolute());
    }

    #[test]
    fn overrides_apply() {
        let cfg = load(
            MINIMAL,
            &["rerank.max_depth=3", "rerank.combine=convex", "sample.entity_count=all", "seeds.sample=99"],
        )
        .unwrap();
        assert_eq!(cfg.rerank.params.max_depth, 3);
        assert_eq!(cfg.sample.entity_count, EntityCount::All);
        assert_eq!(cfg.seeds.sample, 99);
    }

    #[test]
    fn invalid_settings_are_usage_errors() {
        assert!(matches!(load(MINIMAL, &["rerank.max_depth=0"]), Err(CliError::Usage(_))));
        assert!(matches!(load(MINIMAL, &["generate.backend=gpt"]), Err(CliError::Usage(_))));
        assert!(matches!(load(MINIMAL, &["nonsense.key=1"]), Err(CliError::Usage(_))));
        assert!(matches!(load("not toml [", &[]), Err(CliError::Usage(_))));
        let overlapping = format!(
            "{MINIMAL}\n[[buckets]]\nname = \"a\"\nmin_degree = 1\nmax_degree = 5\n[[buckets]]\nname = \"b\"\nmin_degree = 4\nmax_degree = 9\n"
        );
        assert!(matches!(load(&overlapping, &[]), Err(CliError::Usage(_))));
    }
}
