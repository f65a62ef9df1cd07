//! Artifact names, stage sidecars and staleness checks.
//!
//! Every stage writes `<stage>.meta.json` next to its outputs. The sidecar
//! records a hash of the config keys the stage reads, the sha256 of every
//! input file and of every output file. Before a stage uses an upstream
//! artifact it re-hashes the artifact and the upstream inputs and compares
//! with the sidecar, so editing a config key, a data file or an artifact
//! forces the affected stages to be re-run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::io;

pub const SCHEMA_VERSION: u32 = 1;

pub const DATA: &str = "data.csv";
pub const TRUTH: &str = "truth.json";
pub const PREPARED: &str = "prepared.json";
pub const PREPARED_CSV: &str = "prepared.csv";
pub const ORGANIZATION: &str = "organization.json";
pub const IMPUTED_CSV: &str = "imputed.csv";
pub const PSEUDOPOINTS: &str = "pseudopoints.json";
pub const PSEUDOPOINTS_CSV: &str = "pseudopoints.csv";
pub const LABELS: &str = "labels.json";
pub const ENSEMBLE: &str = "ensemble.json";
pub const EMBEDDING: &str = "embedding.json";
pub const EMBEDDING_CSV: &str = "embedding.csv";
pub const STANDARDIZED: &str = "standardized.json";
pub const STANDARDIZED_CSV: &str = "standardized.csv";
pub const VALIDATION: &str = "validation.json";
pub const VALIDATION_DIR: &str = "validation";
pub const EXTENDED_CSV: &str = "extended.csv";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Preprocess,
    Organize,
    Pseudopoints,
    Labels,
    Train,
    Embed,
    Standardize,
    Validate,
    Extend,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Organize => "organize",
            Stage::Pseudopoints => "pseudopoints",
            Stage::Labels => "labels",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Standardize => "standardize",
            Stage::Validate => "validate",
            Stage::Extend => "extend",
            Stage::Report => "report",
        }
    }

    /// Command that (re)creates this stage's artifacts.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Pseudopoints => "pseudopoints export",
            Stage::Labels => "pseudopoints import",
            other => other.name(),
        }
    }

    /// The config keys this stage reads, as JSON.
    pub fn config_subset(self, cfg: &Config) -> Value {
        let p = &cfg.pipeline;
        match self {
            Stage::Synth => json!({ "synth": cfg.synth }),
            Stage::Preprocess => json!({ "eta": p.eta }),
            Stage::Organize => json!({ "tree": p.tree }),
            Stage::Pseudopoints | Stage::Labels => json!({ "level": p.level, "label_range": p.label_range }),
            Stage::Train => json!({ "ensemble": p.ensemble, "exclude_imputed_rows": p.exclude_imputed_rows }),
            Stage::Embed => json!({ "kernel_r": p.kernel_r, "kernel_epsilon": p.kernel_epsilon, "embed_dim": p.embed_dim, "t": p.t }),
            Stage::Standardize => json!({ "whiten_k": p.whiten_k, "pinv_tol": p.pinv_tol }),
            Stage::Validate => json!({ "validate": p.validate }),
            Stage::Extend | Stage::Report => json!({}),
        }
    }

    pub fn config_hash(self, cfg: &Config) -> String {
        sha256_hex(self.config_subset(cfg).to_string().as_bytes())
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Synth | Stage::Preprocess => &[],
            Stage::Organize => &[Stage::Preprocess],
            Stage::Pseudopoints => &[Stage::Organize],
            Stage::Labels => &[Stage::Pseudopoints],
            Stage::Train => &[Stage::Labels],
            Stage::Embed => &[Stage::Train],
            Stage::Standardize => &[Stage::Embed],
            Stage::Validate | Stage::Extend | Stage::Report => &[Stage::Standardize],
        }
    }

    pub fn meta_file(self) -> String {
        format!("{}.meta.json", self.name())
    }
}

/// Contents of a `<stage>.meta.json` sidecar. No timestamps are recorded,
/// so re-running a stage reproduces its sidecar byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub stage: String,
    pub config_hash: String,
    /// Input path (relative to the output directory when inside it) to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to sha256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub info: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&io::read_bytes(path)?))
}

/// The output directory plus the active config.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub cfg: Config,
}

impl Workspace {
    /// Makes the output directory absolute so sidecar keys do not depend on
    /// the working directory.
    pub fn new(mut cfg: Config) -> Result<Self> {
        cfg.paths.out = absolute(&cfg.paths.out)?;
        Ok(Workspace { cfg })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.paths.out
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out().join(name)
    }

    /// Key under which `path` is recorded in sidecars.
    fn key(&self, path: &Path) -> Result<String> {
        let path = absolute(path)?;
        Ok(match path.strip_prefix(self.out()) {
            Ok(rel) => rel.to_string_lossy().into_owned(),
            Err(_) => path.to_string_lossy().into_owned(),
        })
    }

    fn resolve(&self, key: &str) -> PathBuf {
        let p = Path::new(key);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out().join(p)
        }
    }

    /// Writes the sidecar of `stage` after its outputs exist.
    pub fn record(&self, stage: Stage, inputs: &[&Path], outputs: &[&str], info: Value) -> Result<Meta> {
        let inputs = inputs.iter().map(|p| Ok((self.key(p)?, file_hash(p)?))).collect::<Result<_>>()?;
        let outputs = outputs.iter().map(|name| Ok((name.to_string(), file_hash(&self.path(name))?))).collect::<Result<_>>()?;
        let meta = Meta { schema_version: SCHEMA_VERSION, stage: stage.name().to_string(), config_hash: stage.config_hash(&self.cfg), inputs, outputs, info };
        io::write_json(&self.path(&stage.meta_file()), &meta)?;
        Ok(meta)
    }

    /// Confirms that `stage` and every stage upstream of it ran with the
    /// current config and that none of their inputs or outputs changed
    /// since. The most upstream problem is reported.
    pub fn check(&self, stage: Stage) -> Result<Meta> {
        // Missing labels need the labeling instructions whatever else is
        // missing upstream.
        if stage == Stage::Labels && !self.path(&stage.meta_file()).exists() {
            return Err(CliError::MissingLabels { path: self.path(LABELS) });
        }
        for &up in stage.upstream() {
            self.check(up)?;
        }
        self.check_one(stage)
    }

    fn check_one(&self, stage: Stage) -> Result<Meta> {
        let meta_path = self.path(&stage.meta_file());
        if !meta_path.exists() {
            if stage == Stage::Labels {
                return Err(CliError::MissingLabels { path: self.path(LABELS) });
            }
            return Err(CliError::MissingArtifact { path: meta_path, stage: stage.command() });
        }
        let meta: Meta = io::read_json(&meta_path)?;
        let stale = |path: PathBuf, reason: String| CliError::Stale { path, stage: stage.command(), reason };
        if meta.schema_version != SCHEMA_VERSION {
            return Err(stale(meta_path, format!("written with schema version {}, expected {SCHEMA_VERSION}", meta.schema_version)));
        }
        if meta.config_hash != stage.config_hash(&self.cfg) {
            return Err(stale(meta_path, format!("the config keys read by `{}` changed since it ran", stage.command())));
        }
        for (name, hash) in &meta.outputs {
            let p = self.path(name);
            if !p.exists() {
                return Err(stale(p, String::from("the file is missing")));
            }
            if &file_hash(&p)? != hash {
                return Err(stale(p, String::from("the file was modified after it was written")));
            }
        }
        for (key, hash) in &meta.inputs {
            let p = self.resolve(key);
            if !p.exists() || &file_hash(&p)? != hash {
                return Err(stale(self.path(&stage.meta_file()), format!("its input {} changed since it ran", p.display())));
            }
        }
        Ok(meta)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|source| CliError::Io { path: p.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn workspace() -> (tempfile::TempDir, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = Config::default();
        cfg.paths.out = dir.path().to_path_buf();
        (dir, Workspace::new(cfg).unwrap())
    }

    #[test]
    fn edits_to_inputs_outputs_or_config_are_detected() {
        let (dir, mut ws) = workspace();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "a").unwrap();
        std::fs::write(ws.path("out.txt"), "b").unwrap();
        ws.record(Stage::Organize, &[&input], &["out.txt"], Value::Null).unwrap();
        ws.check_one(Stage::Organize).unwrap();

        std::fs::write(ws.path("out.txt"), "c").unwrap();
        assert!(matches!(ws.check_one(Stage::Organize), Err(CliError::Stale { .. })));
        std::fs::write(ws.path("out.txt"), "b").unwrap();

        std::fs::write(&input, "z").unwrap();
        assert!(matches!(ws.check_one(Stage::Organize), Err(CliError::Stale { .. })));
        std::fs::write(&input, "a").unwrap();

        ws.cfg.pipeline.tree.iters += 1;
        assert!(matches!(ws.check_one(Stage::Organize), Err(CliError::Stale { .. })));
        // Keys other stages read do not matter here.
        ws.cfg.pipeline.tree.iters -= 1;
        ws.cfg.pipeline.embed_dim += 1;
        ws.check_one(Stage::Organize).unwrap();
    }

    #[test]
    fn missing_labels_get_their_own_error() {
        let (_dir, ws) = workspace();
        assert!(matches!(ws.check_one(Stage::Labels), Err(CliError::MissingLabels { .. })));
        assert!(matches!(ws.check(Stage::Organize), Err(CliError::MissingArtifact { stage: "preprocess", .. })));
    }
}
