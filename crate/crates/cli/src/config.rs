//! Run configuration: JSON file, dotted-key overrides, schema checks.
//!
//! Every section and field is optional. Unknown keys anywhere are errors
//! reported with their full key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use trukan_core::analysis::{BenchConfig, BenchModel, BenchShape, EdgeFilter};
use trukan_core::data::{gen_alignment_target, gen_blobs, load_csv, BlobConfig, CsvSchema, Dataset, NormStats, TrainConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// `exp(sin(πx) + y²)` on `[-1, 1]²`.
    #[default]
    Alignment,
    /// Gaussian class blobs.
    Blobs,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizeConfig {
    /// Squash standardized features into this interval; plain
    /// standardization when absent.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub source: Source,
    /// Sample count for the alignment generator.
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub blobs: BlobConfig,
    #[serde(default)]
    pub csv: Option<CsvSource>,
    /// Hold out `1 - train_fraction` of the rows as a test split.
    #[serde(default)]
    pub train_fraction: Option<f64>,
    /// Statistics are fitted on the training split only.
    #[serde(default)]
    pub normalize: Option<NormalizeConfig>,
}

fn d_n() -> usize {
    1000
}

impl Default for DataConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

pub struct Prepared {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub stats: Option<NormStats>,
}

impl DataConfig {
    fn raw(&self) -> Result<Dataset, CliError> {
        Ok(match self.source {
            Source::Alignment => gen_alignment_target(self.n, self.seed)?,
            Source::Blobs => gen_blobs(&self.blobs, self.seed)?,
            Source::Csv => {
                let csv = self.csv.as_ref().ok_or_else(|| CliError::validation("data.csv: required when data.source is \"csv\""))?;
                load_csv(&csv.path, &csv.schema)?
            }
        })
    }

    /// Loads, splits and normalizes. With `stats` given they are applied
    /// instead of fitted.
    pub fn prepare(&self, stats: Option<&NormStats>) -> Result<Prepared, CliError> {
        let full = self.raw()?;
        let (mut train, mut test) = match self.train_fraction {
            Some(f) => {
                let (a, b) = full.split_seeded(f, self.seed)?;
                (a, Some(b))
            }
            None => (full, None),
        };
        let stats = match (stats, &self.normalize) {
            (Some(s), _) => {
                train.apply_stats(s)?;
                if let Some(t) = test.as_mut() {
                    t.apply_stats(s)?;
                }
                Some(s.clone())
            }
            (None, Some(n)) => {
                let mut others: Vec<&mut Dataset> = test.iter_mut().collect();
                Some(train.normalize_with(n.range, &mut others)?)
            }
            (None, None) => None,
        };
        Ok(Prepared { train, test, stats })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    #[serde(default = "d_threshold")]
    pub threshold: f64,
}

fn d_threshold() -> f64 {
    0.3
}

impl Default for PruneSection {
    fn default() -> Self {
        PruneSection { threshold: d_threshold() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesSection {
    #[serde(default = "d_curve_samples")]
    pub n_samples: usize,
    #[serde(default = "d_range")]
    pub range: (f64, f64),
    #[serde(default)]
    pub filter: EdgeFilter,
}

fn d_curve_samples() -> usize {
    201
}

fn d_range() -> (f64, f64) {
    (-1.0, 1.0)
}

impl Default for CurvesSection {
    fn default() -> Self {
        CurvesSection { n_samples: d_curve_samples(), range: d_range(), filter: EdgeFilter::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "d_models")]
    pub models: Vec<BenchModel>,
    #[serde(default)]
    pub shape: BenchShape,
    #[serde(default)]
    pub timing: BenchConfig,
}

fn d_models() -> Vec<BenchModel> {
    BenchModel::ALL.to_vec()
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { models: d_models(), shape: BenchShape::default(), timing: BenchConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_tol")]
    pub tolerance: f64,
}

fn d_trials() -> usize {
    100
}

fn d_tol() -> f64 {
    1e-4
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection { trials: d_trials(), seed: 0, tolerance: d_tol() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvertSection {
    /// Samples per converted layer's grid range in the deviation report.
    #[serde(default = "d_convert_samples")]
    pub n_samples: usize,
}

fn d_convert_samples() -> usize {
    1001
}

impl Default for ConvertSection {
    fn default() -> Self {
        ConvertSection { n_samples: d_convert_samples() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub curves: CurvesSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    #[serde(default)]
    pub convert: ConvertSection,
}

/// Parses `key.path=value`; the value is JSON when it parses as JSON and
/// a string otherwise.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("override '{s}' is not of the form key.path=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::validation(format!("override '{s}' has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

pub fn apply_override(root: &mut Value, path: &[String], value: Value) -> Result<(), CliError> {
    let mut node = root;
    for (depth, seg) in path.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let Value::Object(map) = node else {
            return Err(CliError::validation(format!("{}: not an object", path[..depth].join("."))));
        };
        if depth + 1 == path.len() {
            map.insert(seg.clone(), value);
            return Ok(());
        }
        node = map.entry(seg.clone()).or_insert(Value::Null);
    }
    Ok(())
}

/// Deserializes with the failing key path in the error.
pub fn from_value(v: Value) -> Result<RunConfig, CliError> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        CliError::validation(format!("config error at {path}: {}", e.into_inner()))
    })
}

#[derive(Debug)]
pub struct Loaded {
    pub config: RunConfig,
    /// Every field, defaults filled in.
    pub effective: Value,
    /// Only what the file and overrides set.
    pub explicit: Value,
}

/// Reads `file` (or starts empty), applies `overrides` in order and checks
/// the result against the schema.
pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Loaded, CliError> {
    let mut v = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::validation(format!("config {} is not valid JSON: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !v.is_object() {
        return Err(CliError::validation("config root must be a JSON object"));
    }
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut v, &path, value)?;
    }
    let config = from_value(v.clone())?;
    config.train.validate()?;
    config.bench.timing.validate()?;
    let effective = serde_json::to_value(&config).map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(Loaded { config, effective, explicit: v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_nested_keys() {
        let cfg = load(None, &["train.seed=7".into(), "data.blobs.n=300".into(), "data.source=blobs".into()]).unwrap().config;
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.data.blobs.n, 300);
        assert_eq!(cfg.data.source, Source::Blobs);
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let err = load(None, &["train.sed=7".into()]).unwrap_err();
        assert!(err.to_string().contains("train"), "{err}");
        assert!(err.to_string().contains("sed"), "{err}");
        let err = load(None, &["data.blobs.dims=3".into()]).unwrap_err();
        assert!(err.to_string().contains("data.blobs"), "{err}");
    }

    #[test]
    fn malformed_overrides_rejected() {
        assert!(parse_override("train.seed").is_err());
        assert!(parse_override("train..seed=1").is_err());
        let mut v = serde_json::json!({"train": 3});
        let (p, x) = parse_override("train.seed=1").unwrap();
        assert!(apply_override(&mut v, &p, x).is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let l = load(None, &["train.epochs=30".into()]).unwrap();
        assert_eq!(l.explicit, serde_json::json!({"train": {"epochs": 30}}));
        assert_eq!(from_value(l.effective).unwrap(), l.config);
    }
}
