//! `tailqa synth`: writes a seeded synthetic knowledge graph, catalog,
//! passage corpus and a starter config into a directory.

use std::io::Write;
use std::path::Path;

use tailqa_core::kg::format_row;
use tailqa_core::synthetic::{generate, SyntheticConfig};

use crate::error::CliError;
use crate::io::write_jsonl;

pub const CONFIG_FILE: &str = "tailqa.toml";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthSummary {
    pub entities: usize,
    pub properties: usize,
    pub triplets: usize,
    pub passages: usize,
}

fn starter_config(cfg: &SyntheticConfig) -> String {
    format!(
        r#"# Generated by `tailqa synth --seed {seed} --entities {entities}`.

[paths]
triplets = "triplets.tsv"
entities = "entities.jsonl"
properties = "properties.jsonl"
corpus = "corpus.jsonl"
output = "out"

[seeds]
sample = 1
difficulty = 2
misses = 3
triage = 4

[[buckets]]
name = "fine"
min_degree = 1
max_degree = 2

[[buckets]]
name = "coarse"
min_degree = 15
max_degree = 100

[sample]
entity_count = 100

[filter]
auto_apply = true

[generate]
backend = "mock"

[answer]
backend = "echo-gold"
echo_miss_rate = 0.2
context_source = "bm25"

[embedding]
provider = "hashing"
dimension = 256

[retrieval]
retrievers = ["bm25", "dense"]
top_k = 100
recall_ks = [1, 5, 10, 20, 100]

[rerank]
base = "bm25"
max_depth = 2
max_paths = 64
combine = "similarity_only"
"#,
        seed = cfg.seed,
        entities = cfg.entities,
    )
}

/// Writes `triplets.tsv`, `entities.jsonl`, `properties.jsonl`,
/// `corpus.jsonl` and, unless one exists, `tailqa.toml` under `dir`.
pub fn write_synthetic(dir: &Path, cfg: &SyntheticConfig) -> Result<SynthSummary, CliError> {
    std::fs::create_dir_all(dir)?;
    let kg = generate(cfg);
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("triplets.tsv"))?);
    writeln!(w, "# subject\tproperty\tobject\tobject_kind")?;
    for t in &kg.triplets {
        writeln!(w, "{}", format_row(t))?;
    }
    w.flush()?;
    let entities = write_jsonl(&dir.join("entities.jsonl"), kg.catalog.entities_sorted())?;
    let properties = write_jsonl(&dir.join("properties.jsonl"), kg.catalog.properties_sorted())?;
    let passages = write_jsonl(&dir.join("corpus.jsonl"), &kg.passages)?;
    let config = dir.join(CONFIG_FILE);
    if !config.exists() {
        std::fs::write(&config, starter_config(cfg))?;
    }
    Ok(SynthSummary {
        entities,
        properties,
        triplets: kg.triplets.len(),
        passages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;

    #[test]
    fn starter_config_loads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            entities: 50,
            distractor_passages: 5,
            ..Default::default()
        };
        let s = write_synthetic(dir.path(), &cfg).unwrap();
        assert!(s.triplets > 0);
        let loaded = PipelineConfig::load(&dir.path().join(CONFIG_FILE), &[]).unwrap();
        assert_eq!(loaded.buckets.len(), 2);
        assert!(loaded.paths.triplets.is_absolute() || loaded.paths.triplets.starts_with(dir.path()));
    }
}
