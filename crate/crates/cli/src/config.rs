use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use mimicry_core::classifier::ForestConfig;
use mimicry_core::embedder::EmbedderConfig;
use mimicry_core::harness::ProjectConfig;
use mimicry_core::lex::DEFAULT_WINDOW;
use mimicry_core::predictor::PredictorSpec;
use mimicry_core::semantics::VulnerabilityRecord;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn default_k() -> usize {
    5
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_predictor_timeout() -> f64 {
    30.0
}
fn default_folds() -> usize {
    5
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub mask_on_abstracted: bool,
    /// Token window around the annotation in the embedder input.
    #[serde(default = "default_window")]
    pub max_len: usize,
    #[serde(default = "default_predictor_timeout")]
    pub predictor_timeout_s: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            k: default_k(),
            mask_on_abstracted: false,
            max_len: default_window(),
            predictor_timeout_s: default_predictor_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: default_folds(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub project: Option<ProjectConfig>,
    #[serde(default)]
    pub vulnerability: Option<VulnerabilityRecord>,
    #[serde(default)]
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            project: None,
            vulnerability: None,
            predictor: PredictorSpec::default(),
            generator: GeneratorConfig::default(),
            embedder: EmbedderConfig::default(),
            forest: ForestConfig::default(),
            eval: EvalConfig::default(),
            out_dir: default_out(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub predictor: Option<PredictorSpec>,
    pub k: Option<usize>,
}

impl RunConfig {
    /// Parse a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = cfg.project.as_mut() {
            if p.root.is_relative() {
                p.root = base.join(&p.root);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.embedder.seed = seed;
            self.forest.seed = seed;
            self.eval.seed = seed;
        }
        if let Some(p) = &o.predictor {
            self.predictor = p.clone();
        }
        if let Some(k) = o.k {
            self.generator.k = k;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::ConfigInvalid(m));
        if self.generator.k == 0 {
            return bad("generator.k must be at least 1".into());
        }
        if self.generator.max_len == 0 {
            return bad("generator.max_len must be at least 1".into());
        }
        if self.generator.predictor_timeout_s.is_nan() || self.generator.predictor_timeout_s <= 0.0 {
            return bad("generator.predictor_timeout_s must be positive".into());
        }
        if self.eval.folds < 2 {
            return bad("eval.folds must be at least 2".into());
        }
        self.embedder.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        if self.embedder.max_len < self.generator.max_len {
            return bad(format!(
                "embedder.max_len {} is shorter than generator.max_len {}",
                self.embedder.max_len, self.generator.max_len
            ));
        }
        if let Some(p) = &self.project {
            p.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        }
        if let Some(v) = &self.vulnerability {
            v.check().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Project section, checked to point at existing files.
    pub fn project(&self) -> Result<&ProjectConfig, CliError> {
        let p = self
            .project
            .as_ref()
            .ok_or_else(|| CliError::ConfigInvalid("this stage needs a `project` section".into()))?;
        if !p.root.is_dir() {
            return Err(CliError::ConfigInvalid(format!(
                "project root {} is not a directory",
                p.root.display()
            )));
        }
        if p.target_files.is_empty() {
            return Err(CliError::ConfigInvalid("project.target_files is empty".into()));
        }
        for f in &p.target_files {
            if !p.root.join(f).is_file() {
                return Err(CliError::ConfigInvalid(format!("target file {f} does not exist")));
            }
        }
        Ok(p)
    }

    pub fn vulnerability(&self) -> Result<&VulnerabilityRecord, CliError> {
        self.vulnerability
            .as_ref()
            .ok_or_else(|| CliError::ConfigInvalid("this stage needs a `vulnerability` section".into()))
    }

    pub fn predictor_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.generator.predictor_timeout_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let mut cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.generator.k, 5);
        assert_eq!(cfg.eval.folds, 5);
        assert_eq!(cfg.forest.n_trees, 100);
        assert_eq!(cfg.embedder.epochs, 10);
        cfg.apply(&Overrides {
            seed: Some(9),
            k: Some(3),
            predictor: Some("remote=http://localhost:8080".parse().unwrap()),
            out: Some("elsewhere".into()),
        });
        assert_eq!((cfg.embedder.seed, cfg.forest.seed, cfg.eval.seed), (9, 9, 9));
        assert_eq!(cfg.generator.k, 3);
        assert_eq!(cfg.predictor, PredictorSpec::Remote("http://localhost:8080".into()));
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        cfg.validate().unwrap();
    }

    #[test]
    fn predictor_json_forms() {
        let cfg: RunConfig = serde_json::from_str(r#"{"predictor": {"remote": "http://h:1"}}"#).unwrap();
        assert_eq!(cfg.predictor, PredictorSpec::Remote("http://h:1".into()));
        let cfg: RunConfig = serde_json::from_str(r#"{"predictor": "builtin"}"#).unwrap();
        assert_eq!(cfg.predictor, PredictorSpec::Builtin);
    }

    #[test]
    fn rejects_inconsistent_windows() {
        let mut cfg = RunConfig::default();
        cfg.embedder.max_len = 50;
        assert!(matches!(cfg.validate(), Err(CliError::ConfigInvalid(_))));
    }
}
