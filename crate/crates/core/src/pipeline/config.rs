//! TOML experiment files: schema checks with line numbers and key suggestions.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain_translation::TranslationConfig;
use crate::error::{Error, Result};
use crate::eval::{AblationConfig, Metric};
use crate::illum_inference::IllumArch;
use crate::reid_model::ReidArch;
use crate::synth_data::{BenchmarkConfig, MANIFEST_FILE};
use crate::train::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Existing probe/gallery dataset directories standing in for the generated target camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDirs {
    pub probe: PathBuf,
    pub gallery: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReidStage {
    #[serde(default)]
    pub arch: ReidArch,
    #[serde(default = "TrainConfig::default_reid")]
    pub train: TrainConfig,
}

impl Default for ReidStage {
    fn default() -> Self {
        ReidStage { arch: ReidArch::default(), train: TrainConfig::default_reid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IllumStage {
    #[serde(default)]
    pub arch: IllumArch,
    #[serde(default = "TrainConfig::default_illum")]
    pub train: TrainConfig,
}

impl Default for IllumStage {
    fn default() -> Self {
        IllumStage { arch: IllumArch::default(), train: TrainConfig::default_illum() }
    }
}

/// One adaptation run toward one target camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// every stage seed is derived from this one
    pub seed: u64,
    /// experiment directory; relative paths resolve against the config file
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// use these datasets as the target camera instead of the generated one
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetDirs>,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub reid: ReidStage,
    #[serde(default)]
    pub illum: IllumStage,
    #[serde(default)]
    pub translation: TranslationConfig,
    #[serde(default = "TrainConfig::default_finetune")]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub metric: Metric,
}

impl ExperimentConfig {
    /// All defaults, with the given seed.
    pub fn new(seed: u64) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed,
            out: None,
            target: None,
            benchmark: BenchmarkConfig::default(),
            reid: ReidStage::default(),
            illum: IllumStage::default(),
            translation: TranslationConfig::default(),
            finetune: TrainConfig::default_finetune(),
            metric: Metric::default(),
        }
    }

    /// Every optional field present, so its serialization lists all accepted keys.
    fn key_template() -> Self {
        let mut t = ExperimentConfig::new(0);
        t.out = Some(PathBuf::new());
        t.target = Some(TargetDirs { probe: PathBuf::new(), gallery: PathBuf::new() });
        t.benchmark.target_anchor = Some(0);
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(format!("schema_version = {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        self.benchmark.validate()?;
        self.reid.arch.validate()?;
        self.reid.train.validate()?;
        self.illum.train.validate()?;
        self.translation.validate()?;
        self.finetune.validate()?;
        let frame = (self.benchmark.height, self.benchmark.width);
        for (name, hw) in [
            ("reid.arch", (self.reid.arch.height, self.reid.arch.width)),
            ("illum.arch", (self.illum.arch.height, self.illum.arch.width)),
            ("translation.arch", (self.translation.arch.height, self.translation.arch.width)),
        ] {
            if hw != frame {
                return Err(Error::validation(format!("{name} expects {}×{} images but benchmark frames are {}×{}", hw.0, hw.1, frame.0, frame.1)));
            }
        }
        if let Some(t) = &self.target {
            for (name, dir) in [("target.probe", &t.probe), ("target.gallery", &t.gallery)] {
                if !dir.join(MANIFEST_FILE).is_file() {
                    return Err(Error::validation(format!("{name}: no dataset manifest at {}", dir.join(MANIFEST_FILE).display())));
                }
            }
        }
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(o) = &mut self.out {
            fix(o);
        }
        if let Some(t) = &mut self.target {
            fix(&mut t.probe);
            fix(&mut t.gallery);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

impl TrainConfig {
    pub(crate) fn default_reid() -> Self {
        TrainConfig::new(0)
    }

    pub(crate) fn default_illum() -> Self {
        TrainConfig { epochs: 10, ..TrainConfig::new(0) }
    }

    /// a tenth of the joint-training rate: the backbone is adapted, not retrained
    pub(crate) fn default_finetune() -> Self {
        TrainConfig { epochs: 10, learning_rate: 0.001, ..TrainConfig::new(0) }
    }
}

/// Reads, schema-checks and validates an experiment file; relative paths resolve against its directory.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut cfg: ExperimentConfig = parse_config_text(&text, &ExperimentConfig::key_template(), &path.display().to_string())?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

/// Reads an ablation battery file; every key is optional.
pub fn load_ablation_config(path: &Path) -> Result<AblationConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut template = AblationConfig::default();
    template.benchmark.target_anchor = Some(0);
    let cfg: AblationConfig = parse_config_text(&text, &template, &path.display().to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses TOML into `T`, first rejecting keys that `template` does not have.
pub fn parse_config_text<T: Serialize + DeserializeOwned>(text: &str, template: &T, source: &str) -> Result<T> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::validation(format!("{source}: {e}")))?;
    let known = toml::Table::try_from(template).expect("template serializes to a table");
    check_keys(&doc, &known, "", text, source)?;
    toml::from_str(text).map_err(|e| Error::validation(format!("{source}: {e}")))
}

fn check_keys(doc: &toml::Table, known: &toml::Table, prefix: &str, text: &str, source: &str) -> Result<()> {
    for (key, value) in doc {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match known.get(key) {
            None => {
                let line = find_key_line(text, &path).map(|l| format!("line {l}: ")).unwrap_or_default();
                let hint = closest_key(key, known.keys().map(String::as_str)).map(|k| format!("; did you mean `{k}`?")).unwrap_or_default();
                return Err(Error::validation(format!("{source}: {line}unknown key `{path}`{hint}")));
            }
            Some(toml::Value::Table(sub_known)) => {
                if let toml::Value::Table(sub) = value {
                    check_keys(sub, sub_known, &path, text, source)?;
                }
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn closest_key<'a>(key: &str, candidates: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    candidates.map(|c| (strsim::levenshtein(key, c), c)).filter(|&(d, c)| d <= 3.max(c.len() / 3)).min().map(|(_, c)| c)
}

/// 1-based line where a dotted key path is assigned or opened as a table.
fn find_key_line(text: &str, path: &str) -> Option<usize> {
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            section = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if section == path {
                return Some(i + 1);
            }
        } else if let Some((k, _)) = line.split_once('=') {
            let k = k.trim().trim_matches('"');
            let full = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if full == path || path.starts_with(&format!("{full}.")) {
                return Some(i + 1);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_text(text, &ExperimentConfig::key_template(), "exp.toml")
    }

    #[test]
    fn minimal_file_gets_every_default() {
        let cfg = parse("schema_version = 1\nseed = 7\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::new(7));
        cfg.validate().unwrap();
    }

    #[test]
    fn echoed_config_parses_back_to_itself() {
        let mut cfg = ExperimentConfig::new(3);
        cfg.benchmark.target_anchor = Some(4);
        cfg.translation.epochs = 2;
        assert_eq!(parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn missing_seed_is_named() {
        let err = parse("schema_version = 1\n").unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn unknown_key_gets_line_and_suggestion() {
        let err = parse("schema_version = 1\nseed = 0\n\n[benchmark]\nidentites = 5\n").unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
        assert!(err.contains("benchmark.identites") && err.contains("did you mean `identities`"), "{err}");
        let err = parse("schema_version = 1\nsed = 0\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("`seed`"), "{err}");
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = parse("schema_version = 1\nseed = 0\n[translation]\nepochs = 3\n[translation.lambdas]\nmask = 2.0\n").unwrap();
        assert_eq!(cfg.translation.epochs, 3);
        assert_eq!(cfg.translation.lambdas.mask, 2.0);
        assert_eq!(cfg.translation.lambdas.cycle, 10.0);
        assert_eq!(cfg.translation.batch_size, TranslationConfig::default().batch_size);
    }

    #[test]
    fn wrong_types_report_a_line() {
        let err = parse("schema_version = 1\nseed = 0\n[benchmark]\nidentities = \"many\"\n").unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn semantic_checks_run_after_parsing() {
        let mut cfg = ExperimentConfig::new(0);
        cfg.schema_version = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::new(0);
        cfg.reid.arch.height = 32;
        assert!(cfg.validate().unwrap_err().to_string().contains("reid.arch"));
        let mut cfg = ExperimentConfig::new(0);
        cfg.target = Some(TargetDirs { probe: "/nonexistent/p".into(), gallery: "/nonexistent/g".into() });
        assert!(cfg.validate().unwrap_err().to_string().contains("target.probe"));
    }

    #[test]
    fn file_paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        std::fs::write(&p, "schema_version = 1\nseed = 1\nout = \"run\"\n").unwrap();
        let cfg = validate_config(&p).unwrap();
        assert_eq!(cfg.out.unwrap(), dir.path().join("run"));
    }
}
