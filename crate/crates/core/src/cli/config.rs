use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// JSON pipeline configuration: global settings plus one optional section
/// per subcommand whose keys mirror that subcommand's long flags (with `_`
/// for `-`). Flags given on the command line win over file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub synth_refs: Option<Value>,
    pub distort: Option<Value>,
    pub score: Option<Value>,
    pub normalize: Option<Value>,
    pub features_gap: Option<Value>,
    pub features_handcrafted: Option<Value>,
    pub train_mtl: Option<Value>,
    pub train_regressor: Option<Value>,
    pub evaluate: Option<Value>,
    pub reliability: Option<Value>,
    pub selftest: Option<Value>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(path, format!("malformed config: {e}")))
    }

    pub fn section(&self, name: &str) -> Option<&Value> {
        match name {
            "synth_refs" => self.synth_refs.as_ref(),
            "distort" => self.distort.as_ref(),
            "score" => self.score.as_ref(),
            "normalize" => self.normalize.as_ref(),
            "features_gap" => self.features_gap.as_ref(),
            "features_handcrafted" => self.features_handcrafted.as_ref(),
            "train_mtl" => self.train_mtl.as_ref(),
            "train_regressor" => self.train_regressor.as_ref(),
            "evaluate" => self.evaluate.as_ref(),
            "reliability" => self.reliability.as_ref(),
            "selftest" => self.selftest.as_ref(),
            _ => None,
        }
    }
}

fn without_nulls(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Overlays the flags that were given on top of the config section and
/// deserializes the result back into the argument type.
pub fn resolve<A: Serialize + DeserializeOwned>(flags: &A, section: Option<&Value>, name: &str) -> Result<A> {
    let mut merged = match section {
        None => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(Error::invalid(format!("config section {name:?} must be a JSON object"))),
    };
    merged.extend(without_nulls(serde_json::to_value(flags)?));
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| Error::invalid(format!("config section {name:?}: {e}")))
}

/// What produced an artifact: stored next to (or inside) every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Fully resolved settings of the producing subcommand.
    pub config: Value,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: "iqa".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config: Value::Object(without_nulls(serde_json::to_value(config)?)),
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}

/// `out.csv` → `out.csv.provenance.json`.
pub fn provenance_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_provenance(artifact: &Path, provenance: &Provenance) -> Result<()> {
    write_json(&provenance_path(artifact), provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Flags {
        refs: Option<String>,
        seed: Option<u64>,
        bins: Option<usize>,
    }

    #[test]
    fn flags_override_file_values() {
        let section = serde_json::json!({"refs": "a", "bins": 64});
        let flags = Flags {
            refs: Some("b".into()),
            ..Default::default()
        };
        let r = resolve(&flags, Some(&section), "x").unwrap();
        assert_eq!(
            r,
            Flags {
                refs: Some("b".into()),
                seed: None,
                bins: Some(64)
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let section = serde_json::json!({"refz": "a"});
        let err = resolve(&Flags::default(), Some(&section), "distort").unwrap_err();
        assert!(err.to_string().contains("refz") && err.is_validation(), "{err}");
        let err = resolve(&Flags::default(), Some(&serde_json::json!(3)), "distort").unwrap_err();
        assert!(err.to_string().contains("object"));
    }

    #[test]
    fn config_file_sections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 4, "distort": {"plan": "kadid"}}"#).unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.seed, Some(4));
        assert!(c.section("distort").is_some() && c.section("score").is_none());
        std::fs::write(&path, r#"{"sed": 4}"#).unwrap();
        assert!(PipelineConfig::load(&path).is_err());
    }
}
