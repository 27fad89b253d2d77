//! Experiment configuration: one JSON document, then `key=value`
//! overrides, then command-line flags.

use std::path::{Path, PathBuf};

use egg_core::clustering::VgaeConfig;
use egg_core::experiment::{EDGE_FRACTIONS, GRAPH_FRACTIONS};
use egg_core::graph_data::{CitationOptions, TuOptions};
use egg_core::{ModelConfig, PoolKind, RankPolicy, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Graph classification on a TU dataset.
    Classify,
    /// Node clustering on a citation network.
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory holding the dataset files.
    pub path: PathBuf,
    /// File prefix: `<name>_A.txt` for TU sets, `<name>.content` for
    /// citation networks.
    pub name: String,
    pub tu: TuOptions,
    pub citation: CitationOptions,
    /// Replace node features with one-hot degrees capped at this value.
    pub degree_features: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            name: String::new(),
            tu: TuOptions::default(),
            citation: CitationOptions::default(),
            degree_features: None,
        }
    }
}

/// Hyperparameter grid swept by `classify` when present. Empty lists keep
/// the base configuration's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub learning_rates: Vec<f64>,
    /// Energy thresholds for EGG pooling; ignored for other pools.
    pub thresholds: Vec<f64>,
    pub hidden: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            learning_rates: vec![5e-3, 1e-3, 5e-4],
            thresholds: vec![0.5, 0.8],
            hidden: vec![32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Cases per suite.
    pub trials: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { trials: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: DatasetConfig,
    /// Master seed. Copied into `train.seed` and `vgae.seed`.
    pub seed: u64,
    pub repetitions: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: Option<GridConfig>,
    pub graph_fractions: [f64; 3],
    pub vgae: VgaeConfig,
    pub edge_fractions: [f64; 3],
    /// Clustering variants; `null` is plain k-means on the latent means.
    pub policies: Vec<Option<RankPolicy>>,
    /// Energy thresholds swept by `sensitivity`.
    pub thresholds: Vec<f64>,
    /// Rank policy of node-level embeddings written by `embed`.
    pub embed_policy: RankPolicy,
    pub gradcheck: GradcheckConfig,
    /// Parent of the per-run output directories.
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Classify,
            dataset: DatasetConfig::default(),
            seed: 0,
            repetitions: 10,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            grid: None,
            graph_fractions: GRAPH_FRACTIONS,
            vgae: VgaeConfig::default(),
            edge_fractions: EDGE_FRACTIONS,
            policies: vec![
                None,
                Some(RankPolicy::FixedRatio(0.2)),
                Some(RankPolicy::FixedRatio(0.5)),
                Some(RankPolicy::FixedRatio(0.8)),
            ],
            thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            embed_policy: RankPolicy::FixedRatio(0.8),
            gradcheck: GradcheckConfig::default(),
            output: PathBuf::from("runs"),
        }
    }
}

/// Parses `key=value` where `key` is a dotted path. The value is read as
/// JSON when it parses and as a plain string otherwise.
pub fn parse_override(raw: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{raw}` is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(format!("override `{raw}` has an empty key segment")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.split('.').map(String::from).collect(), value))
}

fn set_path(doc: &mut Value, path: &[String], value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    for (i, seg) in path.iter().enumerate() {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("cannot set `{}`: `{}` is not an object", path.join("."), path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(seg.clone(), value);
            return Ok(());
        }
        cur = obj.entry(seg.clone()).or_insert(Value::Null);
    }
    unreachable!("override paths are non-empty")
}

impl ExperimentConfig {
    /// File (if any) with overrides applied, then validated. Missing keys
    /// take their defaults.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for raw in overrides {
            let (path, value) = parse_override(raw)?;
            set_path(&mut doc, &path, value)?;
        }
        serde_json::from_value(doc).map_err(|e| CliError::config(e.to_string()))
    }

    /// Copies the master seed into the component configurations.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.vgae.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: egg_core::EggError| CliError::config(e.to_string());
        self.model.validate().map_err(bad)?;
        self.train.validate().map_err(bad)?;
        for p in self.policies.iter().flatten() {
            p.validate().map_err(bad)?;
        }
        self.embed_policy.validate().map_err(bad)?;
        for &r in &self.thresholds {
            RankPolicy::EnergyThreshold(r).validate().map_err(bad)?;
        }
        if self.repetitions == 0 {
            return Err(CliError::config("repetitions must be at least 1"));
        }
        for (what, f) in [("graph_fractions", self.graph_fractions), ("edge_fractions", self.edge_fractions)] {
            if f.iter().any(|v| !(*v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(CliError::config(format!("{what} {f:?} must be non-negative and sum to 1")));
            }
        }
        if let Some(grid) = &self.grid {
            for &lr in &grid.learning_rates {
                TrainConfig { learning_rate: lr, ..self.train.clone() }.validate().map_err(bad)?;
            }
            for &r in &grid.thresholds {
                RankPolicy::EnergyThreshold(r).validate().map_err(bad)?;
            }
            if grid.hidden.contains(&0) {
                return Err(CliError::config("grid hidden widths must be positive"));
            }
        }
        if self.vgae.hidden == 0 || self.vgae.latent == 0 || self.vgae.epochs == 0 || !(self.vgae.learning_rate > 0.0) {
            return Err(CliError::config("vgae widths, epochs and learning rate must be positive"));
        }
        Ok(())
    }

    /// The dataset directory, which commands that load data require.
    pub fn dataset_dir(&self) -> Result<&Path, CliError> {
        if self.dataset.path.as_os_str().is_empty() || self.dataset.name.is_empty() {
            return Err(CliError::config("dataset.path and dataset.name are required"));
        }
        Ok(&self.dataset.path)
    }
}

/// One classification setting of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    pub label: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn egg_with(model: &ModelConfig, r: f64) -> ModelConfig {
    ModelConfig {
        pool: PoolKind::Egg {
            policy: RankPolicy::EnergyThreshold(r),
        },
        ..model.clone()
    }
}

impl ExperimentConfig {
    /// The base setting, or the grid's cartesian product.
    pub fn classify_variants(&self) -> Vec<Variant> {
        let Some(grid) = &self.grid else {
            return vec![Variant {
                label: "base".into(),
                model: self.model.clone(),
                train: self.train.clone(),
            }];
        };
        let lrs = if grid.learning_rates.is_empty() { vec![self.train.learning_rate] } else { grid.learning_rates.clone() };
        let hidden = if grid.hidden.is_empty() { vec![self.model.hidden] } else { grid.hidden.clone() };
        let thresholds: Vec<Option<f64>> = match self.model.pool {
            PoolKind::Egg { .. } if !grid.thresholds.is_empty() => grid.thresholds.iter().copied().map(Some).collect(),
            _ => vec![None],
        };
        let mut out = Vec::new();
        for &lr in &lrs {
            for &r in &thresholds {
                for &h in &hidden {
                    let mut model = match r {
                        Some(r) => egg_with(&self.model, r),
                        None => self.model.clone(),
                    };
                    model.hidden = h;
                    let mut label = format!("lr{lr}");
                    if let Some(r) = r {
                        label.push_str(&format!("_r{r}"));
                    }
                    label.push_str(&format!("_h{h}"));
                    out.push(Variant {
                        label,
                        model,
                        train: TrainConfig { learning_rate: lr, ..self.train.clone() },
                    });
                }
            }
        }
        out
    }

    /// One setting per swept energy threshold, EGG pooling forced on.
    pub fn sensitivity_variants(&self) -> Vec<Variant> {
        self.thresholds
            .iter()
            .map(|&r| Variant {
                label: format!("r{r}"),
                model: egg_with(&self.model, r),
                train: self.train.clone(),
            })
            .collect()
    }
}

/// Short name of a clustering variant.
pub fn policy_label(policy: Option<RankPolicy>) -> String {
    match policy {
        None => "kmeans".into(),
        Some(RankPolicy::EnergyThreshold(r)) => format!("egg-r{r}"),
        Some(RankPolicy::FixedRatio(x)) => format!("egg-x{x}"),
        Some(RankPolicy::FixedCount(p)) => format!("egg-p{p}"),
        Some(RankPolicy::PerValueThreshold(t)) => format!("egg-t{t}"),
    }
}
