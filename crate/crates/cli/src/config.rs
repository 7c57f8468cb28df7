use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use graphcliff::analysis::AnalysisConfig;
use graphcliff::cliff::{CliffConfig, ColumnMap, ScaffoldMode};
use graphcliff::fingerprint::FpConfig;
use graphcliff::graphnn::ModelConfig;
use graphcliff::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Cliff thresholds; the fingerprint settings come from the top-level `fp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliffSection {
    pub sim_threshold: f64,
    pub fold: f64,
    pub scaffold: ScaffoldMode,
}

impl Default for CliffSection {
    fn default() -> Self {
        let c = CliffConfig::default();
        CliffSection {
            sim_threshold: c.sim_threshold,
            fold: c.fold,
            scaffold: c.scaffold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub test_frac: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { test_frac: 0.2 }
    }
}

/// Records that `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSubset {
    /// The test split if the file has one, otherwise every record.
    Auto,
    Test,
    Train,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub subset: EvalSubset,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            subset: EvalSubset::Auto,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset CSV, or the benchmark directory for `registry`.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Everything a run depends on. The top-level `seed` is the only source of
/// randomness: it replaces the seeds inside `train` and `analysis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub columns: ColumnMap,
    pub fp: FpConfig,
    pub cliff: CliffSection,
    pub split: SplitSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub analysis: AnalysisConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            columns: ColumnMap::default(),
            fp: FpConfig::default(),
            cliff: CliffSection::default(),
            split: SplitSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            analysis: AnalysisConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Starts from defaults, merges the JSON file if given, then applies
    /// `key.path=value` overrides in order. Values are parsed as JSON and
    /// fall back to plain strings.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file_value: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            merge(&mut value, file_value);
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .with_context(|| format!("override '{o}' is not of the form key=value"))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, parsed)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
        cfg.train.seed = cfg.seed;
        cfg.analysis.hop.seed = cfg.seed;
        cfg.analysis.power.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn cliff_config(&self) -> CliffConfig {
        CliffConfig {
            sim_threshold: self.cliff.sim_threshold,
            fold: self.cliff.fold,
            fp: self.fp,
            scaffold: self.cliff.scaffold,
        }
    }

    pub fn input(&self) -> Result<&Path> {
        match &self.paths.input {
            Some(p) => Ok(p),
            None => bail!(crate::UsageError("no input given (use --input or paths.input)".into())),
        }
    }

    pub fn output(&self) -> Result<&Path> {
        match &self.paths.output {
            Some(p) => Ok(p),
            None => bail!(crate::UsageError("no output directory given (use --out or paths.output)".into())),
        }
    }

    pub fn checkpoint(&self) -> Result<&Path> {
        match &self.paths.checkpoint {
            Some(p) => Ok(p),
            None => bail!(crate::UsageError("no checkpoint given (use --checkpoint or paths.checkpoint)".into())),
        }
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(o) => o,
            _ => bail!(crate::UsageError(format!("'{key}': '{}' is not a section", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                bail!(crate::UsageError(format!("unknown configuration key '{key}'")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .get_mut(*part)
            .with_context(|| crate::UsageError(format!("unknown configuration key '{key}'")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::resolve(None, &["train.epochs=7".into(), "seed=3".into(), "columns.pki=pIC50".into()]).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.columns.pki, "pIC50");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::resolve(None, &["train.epoch=7".into()]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"epochz": 1}}"#).unwrap();
        assert!(RunConfig::resolve(Some(&path), &[]).is_err());
    }

    #[test]
    fn echoed_config_reloads_identically() {
        let cfg = RunConfig::resolve(None, &["model.hidden=16".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        assert_eq!(RunConfig::resolve(Some(&path), &[]).unwrap(), cfg);
    }
}
