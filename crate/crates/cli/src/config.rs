//! Run configuration: a JSON file that may pull in other files through an
//! `include` list, merged depth-first with later values winning. Relative
//! paths are resolved against the directory of the file that names them.

use crate::error::CliError;
use serde::Deserialize;
use serde_json::{Map, Value};
use shotcap_core::pipeline::synth::SynthConfig;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root holding `annotations/`, `modalities/`, `clips/` and `vocab.json`.
    pub data: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub modalities: Option<PathBuf>,
    pub clips: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl PathsConfig {
    fn under(&self, explicit: &Option<PathBuf>, leaf: &str) -> Option<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.data.as_ref().map(|d| d.join(leaf)))
    }

    pub fn annotations(&self) -> Result<PathBuf, CliError> {
        self.under(&self.annotations, "annotations").ok_or_else(|| {
            CliError::Usage("no annotations directory (set paths.data or --data)".into())
        })
    }

    pub fn modalities(&self) -> Result<PathBuf, CliError> {
        self.under(&self.modalities, "modalities").ok_or_else(|| {
            CliError::Usage("no modalities directory (set paths.data or --data)".into())
        })
    }

    pub fn clips(&self) -> Result<PathBuf, CliError> {
        self.under(&self.clips, "clips")
            .ok_or_else(|| CliError::Usage("no clips directory (set paths.data or --data)".into()))
    }

    pub fn vocab(&self) -> Option<PathBuf> {
        self.under(&self.vocab, "vocab.json")
    }

    pub fn out(&self) -> Result<PathBuf, CliError> {
        self.out
            .clone()
            .ok_or_else(|| CliError::Usage("no output directory (set paths.out or --out)".into()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_steps: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 0.0,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TacticsConfig {
    /// Shot type to category table; the bundled one when absent.
    pub mapping: Option<PathBuf>,
    /// Pattern list; the bundled one when absent.
    pub patterns: Option<PathBuf>,
    pub bin_width: f64,
    pub kernel_sigma: f64,
}

impl Default for TacticsConfig {
    fn default() -> Self {
        Self {
            mapping: None,
            patterns: None,
            bin_width: shotcap_core::tactics::DEFAULT_BIN_WIDTH,
            kernel_sigma: shotcap_core::tactics::DEFAULT_KERNEL_SIGMA,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Number of generated captions stored in the evaluation report.
    pub keep_captions: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { keep_captions: 50 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    /// Overrides on top of the desk model configuration.
    pub model: Map<String, Value>,
    pub training: TrainingConfig,
    pub split: (f64, f64, f64),
    pub tactics: TacticsConfig,
    pub metrics: MetricsConfig,
    /// Overrides on top of the default synthetic corpus settings.
    pub synth: Map<String, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            paths: PathsConfig::default(),
            model: Map::new(),
            training: TrainingConfig::default(),
            split: shotcap_core::pipeline::DEFAULT_RATIOS,
            tactics: TacticsConfig::default(),
            metrics: MetricsConfig::default(),
            synth: Map::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let merged = load_value(path, &mut BTreeSet::new())?;
        serde_path_to_error::deserialize(merged)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn synth_config(&self) -> Result<SynthConfig, CliError> {
        overlay(&SynthConfig::default(), &self.synth, "synth")
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::Usage("a seed is required (set \"seed\" or pass --seed)".into())
        })
    }
}

/// `base` with the keys of `overrides` replaced, re-validated through serde.
pub fn overlay<T>(base: &T, overrides: &Map<String, Value>, section: &str) -> Result<T, CliError>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base).expect("config serializes");
    merge(&mut v, Value::Object(overrides.clone()));
    serde_path_to_error::deserialize(v).map_err(|e| CliError::Usage(format!("{section}: {e}")))
}

const PATH_KEYS: [(&str, &[&str]); 2] = [
    (
        "paths",
        &["data", "annotations", "modalities", "clips", "vocab", "out"],
    ),
    ("tactics", &["mapping", "patterns"]),
];

fn load_value(path: &Path, active: &mut BTreeSet<PathBuf>) -> Result<Value, CliError> {
    let canonical = path
        .canonicalize()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if !active.insert(canonical.clone()) {
        return Err(CliError::Usage(format!(
            "include cycle through {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(obj) = &mut value else {
        return Err(CliError::Usage(format!(
            "{}: config must be a JSON object",
            path.display()
        )));
    };
    let base = canonical.parent().unwrap_or(Path::new(".")).to_path_buf();
    resolve_paths(obj, &base);
    let includes = match obj.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(CliError::Usage(format!(
                    "include entries must be strings, got {other}"
                ))),
            })
            .collect::<Result<_, _>>()?,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "include must be a path or list, got {other}"
            )))
        }
    };
    let mut merged = Value::Object(Map::new());
    for inc in includes {
        let inner = load_value(&base.join(inc), active)?;
        merge(&mut merged, inner);
    }
    merge(&mut merged, value);
    active.remove(&canonical);
    Ok(merged)
}

fn resolve_paths(obj: &mut Map<String, Value>, base: &Path) {
    for (section, keys) in PATH_KEYS {
        if let Some(Value::Object(sec)) = obj.get_mut(section) {
            for key in keys {
                if let Some(Value::String(s)) = sec.get_mut(*key) {
                    if Path::new(s.as_str()).is_relative() {
                        *s = base.join(&*s).to_string_lossy().into_owned();
                    }
                }
            }
        }
    }
}

/// Objects merge key by key; anything else in `top` replaces `base`.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, top) => *slot = top,
    }
}
