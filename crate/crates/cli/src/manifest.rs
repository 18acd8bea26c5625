//! Stage manifests and the staged, verified stage runner.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::{file_digest, read_json, sha256_hex, write_json};

pub const MANIFEST_DIR: &str = "manifests";
const STAGING_DIR: &str = ".staging";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    /// Input role (or `stage/file` for upstream outputs) to digest.
    pub inputs: BTreeMap<String, String>,
    /// Output file name, relative to the output directory, to digest.
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub created_at: String,
}

impl StageManifest {
    pub fn path(out_dir: &Path, stage: &str) -> PathBuf {
        out_dir.join(MANIFEST_DIR).join(format!("{stage}.json"))
    }

    pub fn load(out_dir: &Path, stage: &str) -> Result<Option<Self>, CliError> {
        let path = Self::path(out_dir, stage);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    /// Checks that every recorded output still has its recorded digest.
    pub fn verify_outputs(&self, out_dir: &Path) -> Result<(), CliError> {
        for (name, digest) in &self.outputs {
            let path = out_dir.join(name);
            if !path.exists() {
                return Err(CliError::Data(format!(
                    "{name} (written by stage `{}`) is missing; rerun `{}`",
                    self.stage, self.stage
                )));
            }
            let actual = file_digest(&path)?;
            if &actual != digest {
                return Err(CliError::Data(format!(
                    "digest mismatch for {name}: stage `{}` recorded {}, file now has {}; rerun `{}`",
                    self.stage,
                    &digest[..12],
                    &actual[..12],
                    self.stage
                )));
            }
        }
        Ok(())
    }
}

/// What a stage body reports back to the runner.
#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub counts: BTreeMap<String, u64>,
    pub seed: Option<u64>,
}

impl StageReport {
    pub fn count(mut self, key: &str, n: impl TryInto<u64>) -> Self {
        self.counts.insert(key.to_owned(), n.try_into().unwrap_or(u64::MAX));
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Paths available to a running stage.
pub struct StageContext<'a> {
    pub config: &'a PipelineConfig,
    pub out_dir: &'a Path,
    /// Where the stage writes its outputs; moved into `out_dir` on success.
    pub staging: PathBuf,
}

impl StageContext<'_> {
    pub fn staged(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    /// A committed output of an earlier stage.
    pub fn upstream(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

pub struct StageSpec<'a> {
    pub name: &'a str,
    pub upstream: Vec<&'a str>,
    /// External inputs by role. Missing optional files are skipped.
    pub inputs: Vec<(String, PathBuf)>,
}

fn input_digests(
    config: &PipelineConfig,
    out_dir: &Path,
    spec: &StageSpec<'_>,
) -> Result<BTreeMap<String, String>, CliError> {
    let mut inputs = BTreeMap::new();
    for (role, path) in &spec.inputs {
        if path.exists() {
            inputs.insert(role.clone(), file_digest(path)?);
        }
    }
    for up in &spec.upstream {
        let manifest = StageManifest::load(out_dir, up)?.ok_or_else(|| {
            CliError::Data(format!("stage `{}` needs `{up}` to run first", spec.name))
        })?;
        manifest.verify_outputs(out_dir)?;
        if manifest.config_digest != config_digest(config) {
            log::warn!("stage `{up}` ran with a different configuration");
        }
        for (name, digest) in manifest.outputs {
            inputs.insert(format!("{up}/{name}"), digest);
        }
    }
    Ok(inputs)
}

pub fn config_digest(config: &PipelineConfig) -> String {
    sha256_hex(config.canonical_json().as_bytes())
}

/// Runs one stage: verifies upstream manifests, skips if nothing changed,
/// runs the body into a staging directory, moves outputs into place and
/// writes the manifest last.
pub fn run_stage<F>(config: &PipelineConfig, spec: StageSpec<'_>, force: bool, body: F) -> Result<StageStatus, CliError>
where
    F: FnOnce(&StageContext<'_>) -> Result<StageReport, CliError>,
{
    let out_dir = config.paths.output.as_path();
    std::fs::create_dir_all(out_dir.join(MANIFEST_DIR))?;
    let digest = config_digest(config);
    let inputs = input_digests(config, out_dir, &spec)?;

    if !force {
        if let Some(prev) = StageManifest::load(out_dir, spec.name)? {
            if prev.config_digest == digest && prev.inputs == inputs && prev.verify_outputs(out_dir).is_ok() {
                log::info!("{}: up to date", spec.name);
                return Ok(StageStatus::UpToDate);
            }
        }
    }

    let staging = out_dir.join(STAGING_DIR).join(spec.name);
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;
    let ctx = StageContext {
        config,
        out_dir,
        staging: staging.clone(),
    };
    let report = match body(&ctx) {
        Ok(r) => r,
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(e);
        }
    };

    let mut produced: Vec<String> = std::fs::read_dir(&staging)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    produced.sort();
    let mut outputs = BTreeMap::new();
    for name in &produced {
        outputs.insert(name.clone(), file_digest(&staging.join(name))?);
    }
    if let Some(prev) = StageManifest::load(out_dir, spec.name)? {
        for stale in prev.outputs.keys().filter(|k| !outputs.contains_key(*k)) {
            let _ = std::fs::remove_file(out_dir.join(stale));
        }
    }
    for name in &produced {
        std::fs::rename(staging.join(name), out_dir.join(name))?;
    }
    let _ = std::fs::remove_dir_all(&staging);

    // Inputs the body itself appended to (the ledger) are recorded as left.
    let mut final_inputs = inputs;
    for (role, path) in &spec.inputs {
        if path.exists() {
            final_inputs.insert(role.clone(), file_digest(path)?);
        }
    }
    let manifest = StageManifest {
        stage: spec.name.to_owned(),
        config_digest: digest,
        seed: report.seed,
        inputs: final_inputs,
        outputs,
        counts: report.counts,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };
    let path = StageManifest::path(out_dir, spec.name);
    let tmp = path.with_extension("json.tmp");
    write_json(&tmp, &manifest)?;
    std::fs::rename(&tmp, &path)?;
    log::info!("{}: wrote {} file(s)", spec.name, manifest.outputs.len());
    Ok(StageStatus::Ran)
}
