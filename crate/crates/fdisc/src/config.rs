use std::path::{Path, PathBuf};

use fdisc_core::pipeline::PipelineConfig;
use fdisc_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io;

/// Where inputs come from and where artifacts go. Relative paths are taken
/// relative to the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Data CSV; defaults to `data.csv` in the output directory, which is
    /// where `synth` writes.
    pub data: Option<PathBuf>,
    /// Feature groups and weights (JSON).
    pub groups: Option<PathBuf>,
    /// Scored pseudopoint CSV read by `pseudopoints import` when no file is
    /// given on the command line.
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data: None, groups: None, labels: None, out: PathBuf::from("fdisc-out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub pipeline: PipelineConfig,
    pub synth: SynthConfig,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub level: Option<usize>,
    pub k_nets: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let mut cfg: Config = io::read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.paths.resolve(&base);
        Ok(cfg)
    }

    /// `--seed` sets both the data generator seed and the ensemble master
    /// seed.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.synth.seed = seed;
            self.pipeline.ensemble.master_seed = seed;
        }
        if let Some(out) = &o.out {
            self.paths.out = out.clone();
        }
        if let Some(level) = o.level {
            if level == 0 {
                return Err(CliError::Config(String::from("--level must be at least 1 (the root)")));
            }
            self.pipeline.level = level;
        }
        if let Some(k) = o.k_nets {
            if k == 0 {
                return Err(CliError::Config(String::from("--k-nets must be positive")));
            }
            self.pipeline.ensemble.k = k;
        }
        Ok(())
    }

    pub fn data_path(&self) -> PathBuf {
        self.paths.data.clone().unwrap_or_else(|| self.paths.out.join(crate::artifacts::DATA))
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for p in [&mut self.data, &mut self.groups, &mut self.labels].into_iter().flatten() {
            fix(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"paths": {"out": "run"}, "pipeline": {"level": 4}}"#).unwrap();
        let cfg = Config::load(&p).unwrap();
        assert_eq!(cfg.paths.out, dir.path().join("run"));
        assert_eq!(cfg.pipeline.level, 4);
        assert_eq!(cfg.pipeline.ensemble, PipelineConfig::default().ensemble);
        assert_eq!(cfg.data_path(), dir.path().join("run").join("data.csv"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"paths": {"output": "run"}}"#).unwrap();
        assert!(Config::load(&p).is_err());
    }

    #[test]
    fn seed_override_reaches_both_generators() {
        let mut cfg = Config::default();
        cfg.apply(&Overrides { seed: Some(9), k_nets: Some(4), ..Overrides::default() }).unwrap();
        assert_eq!((cfg.synth.seed, cfg.pipeline.ensemble.master_seed, cfg.pipeline.ensemble.k), (9, 9, 4));
    }
}
