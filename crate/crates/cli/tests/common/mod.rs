#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tailqa::config::PipelineConfig;
use tailqa::io::file_digest;
use tailqa::synth::{write_synthetic, CONFIG_FILE};
use tailqa_core::synthetic::SyntheticConfig;

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    /// A synthetic graph plus the starter config in a fresh directory.
    pub fn new(entities: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            entities,
            distractor_passages: 50,
            ..SyntheticConfig::default()
        };
        write_synthetic(dir.path(), &cfg).unwrap();
        Self { dir }
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.path().join(CONFIG_FILE)
    }

    pub fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    pub fn config(&self, overrides: &[&str]) -> PipelineConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        PipelineConfig::load(&self.config_path(), &o).unwrap()
    }
}

/// Digest of every regular file directly under `dir`.
pub fn digests(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        if e.path().is_file() {
            out.insert(e.file_name().to_string_lossy().into_owned(), file_digest(&e.path()).unwrap());
        }
    }
    out
}
