use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ColumnMapping, DatasetTag, SyntheticSpec};
use crate::metrics::{EScope, EpsilonMode, MetricConfig, Task};
use crate::predictors::{GridSearchPlan, PredictorSpec};
use crate::preprocess::{PipelineConfig, Profile, RangeRule};

/// One benchmark run, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub task: Task,
    /// Where outputs go. Not echoed into the manifest, which lives inside it.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub predictors: Vec<PredictorSpec>,
    #[serde(default)]
    pub grids: Vec<GridSearchPlan>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<CsvSource>,
    pub synthetic: Option<SyntheticSpec>,
    /// Generation seed for synthetic data; defaults to the run seed.
    pub synthetic_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingPreset {
    /// The canonical long-form export written by this crate.
    Canonical,
    Tjh,
    CdslFlat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    pub preset: Option<MappingPreset>,
    pub mapping: Option<ColumnMapping>,
}

impl CsvSource {
    pub fn column_mapping(&self) -> Result<ColumnMapping> {
        match (&self.mapping, self.preset) {
            (Some(m), None) => Ok(m.clone()),
            (None, Some(MappingPreset::Canonical)) => Ok(ColumnMapping::canonical(DatasetTag::Generic)),
            (None, Some(MappingPreset::Tjh)) => Ok(ColumnMapping::tjh()),
            (None, Some(MappingPreset::CdslFlat)) => Ok(ColumnMapping::cdsl_flat()),
            (None, None) => Err(Error::Config("data.csv needs a `preset` or a `mapping`".into())),
            (Some(_), Some(_)) => Err(Error::Config("data.csv takes either `preset` or `mapping`, not both".into())),
        }
    }
}

/// A profile plus per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub profile: Profile,
    pub domain_rules: Option<Vec<RangeRule>>,
    pub non_negative: Option<bool>,
    pub drop_constant: Option<bool>,
    pub three_sigma: Option<bool>,
    pub merge_daily: Option<bool>,
    pub sparse_threshold: Option<f64>,
    pub fit_on_train: Option<bool>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            profile: Profile::Identity,
            domain_rules: None,
            non_negative: None,
            drop_constant: None,
            three_sigma: None,
            merge_daily: None,
            sparse_threshold: None,
            fit_on_train: None,
        }
    }
}

impl PipelineSection {
    pub fn resolve(&self) -> PipelineConfig {
        let mut c = PipelineConfig::profile(self.profile);
        if let Some(r) = &self.domain_rules {
            c.domain_rules = r.clone();
        }
        c.non_negative = self.non_negative.unwrap_or(c.non_negative);
        c.drop_constant = self.drop_constant.unwrap_or(c.drop_constant);
        c.three_sigma = self.three_sigma.unwrap_or(c.three_sigma);
        c.merge_daily = self.merge_daily.unwrap_or(c.merge_daily);
        if self.sparse_threshold.is_some() {
            c.sparse_threshold = self.sparse_threshold;
        }
        c.fit_on_train = self.fit_on_train.unwrap_or(c.fit_on_train);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    Kfold {
        k: usize,
    },
    Holdout {
        ratios: [f64; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EvaluationTable", into = "EvaluationTable")]
pub struct EvaluationConfig {
    pub protocol: Protocol,
    /// Independent repetitions with fresh split and model seeds.
    pub repeats: usize,
    /// Train:validation ratio inside each k-fold training portion.
    pub train_val: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProtocolName {
    Kfold,
    Holdout,
}

/// `[evaluation]` as written. Flat, so unknown keys are rejected.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluationTable {
    protocol: ProtocolName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ratios: Option<[f64; 3]>,
    #[serde(default = "one")]
    repeats: usize,
    #[serde(default = "default_train_val")]
    train_val: [f64; 2],
}

impl TryFrom<EvaluationTable> for EvaluationConfig {
    type Error = String;

    fn try_from(t: EvaluationTable) -> std::result::Result<Self, String> {
        let protocol = match (t.protocol, t.k, t.ratios) {
            (ProtocolName::Kfold, Some(k), None) => Protocol::Kfold { k },
            (ProtocolName::Holdout, None, Some(ratios)) => Protocol::Holdout { ratios },
            (ProtocolName::Kfold, _, _) => return Err("the kfold protocol takes `k` and no `ratios`".into()),
            (ProtocolName::Holdout, _, _) => return Err("the holdout protocol takes `ratios` and no `k`".into()),
        };
        Ok(EvaluationConfig {
            protocol,
            repeats: t.repeats,
            train_val: t.train_val,
        })
    }
}

impl From<EvaluationConfig> for EvaluationTable {
    fn from(c: EvaluationConfig) -> Self {
        let (protocol, k, ratios) = match c.protocol {
            Protocol::Kfold { k } => (ProtocolName::Kfold, Some(k), None),
            Protocol::Holdout { ratios } => (ProtocolName::Holdout, None, Some(ratios)),
        };
        EvaluationTable {
            protocol,
            k,
            ratios,
            repeats: c.repeats,
            train_val: c.train_val,
        }
    }
}

fn one() -> usize {
    1
}

fn default_train_val() -> [f64; 2] {
    [8.0, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub gamma: u32,
    pub classification_threshold: f64,
    pub epsilon: EpsilonMode,
    pub e_scope: EScope,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let d = MetricConfig::default();
        MetricsSection {
            gamma: d.gamma,
            classification_threshold: d.classification_threshold,
            epsilon: d.epsilon,
            e_scope: EScope::default(),
        }
    }
}

impl MetricsSection {
    pub fn with_e(&self, e: f64) -> MetricConfig {
        MetricConfig {
            gamma: self.gamma,
            e,
            classification_threshold: self.classification_threshold,
            epsilon: self.epsilon,
        }
    }
}

/// A bare synthetic-cohort table in TOML.
pub fn parse_synthetic_spec(text: &str) -> Result<SyntheticSpec> {
    let spec: SyntheticSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(csv), Some(dir)) = (cfg.data.csv.as_mut(), path.parent()) {
            if csv.path.is_relative() {
                csv.path = dir.join(&csv.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks internal consistency.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        match (&self.data.csv, &self.data.synthetic) {
            (Some(c), None) => {
                c.column_mapping()?;
            }
            (None, Some(s)) => s.validate().map_err(|e| Error::Config(e.to_string()))?,
            _ => return err("exactly one of `data.csv` and `data.synthetic` must be given".into()),
        }
        match self.evaluation.protocol {
            Protocol::Kfold { k } if k < 2 => return err(format!("k-fold needs k >= 2, got {k}")),
            Protocol::Holdout { ratios } if ratios.iter().any(|r| !(*r > 0.0)) => {
                return err(format!("holdout ratios must be positive, got {ratios:?}"))
            }
            _ => {}
        }
        if self.evaluation.repeats == 0 {
            return err("evaluation.repeats must be at least 1".into());
        }
        if self.evaluation.train_val.iter().any(|r| !(*r > 0.0)) {
            return err("evaluation.train_val ratios must be positive".into());
        }
        let t = self.metrics.classification_threshold;
        if !(t > 0.0 && t < 1.0) {
            return err(format!("metrics.classification_threshold must be in (0, 1), got {t}"));
        }
        if self.predictors.is_empty() && self.grids.is_empty() {
            return err("no predictors or grids configured".into());
        }
        let modes = self
            .predictors
            .iter()
            .map(|p| (p.label(), p.task_mode))
            .chain(self.grids.iter().map(|g| (format!("grid {}", g.family.name()), g.task_mode)));
        for (label, mode) in modes {
            let ok = match self.task {
                Task::EarlyMortality => mode.predicts_outcome(),
                Task::OutcomeSpecificLos => mode.predicts_outcome() && mode.predicts_los(),
            };
            if !ok {
                return err(format!(
                    "{label} cannot serve the {:?} task with task mode {mode:?}",
                    self.task
                ));
            }
        }
        for p in &self.predictors {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        for g in &self.grids {
            g.candidates().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Display labels for every predictor and grid, unique within the run.
    pub fn entry_labels(&self) -> Vec<String> {
        let raw = self
            .predictors
            .iter()
            .map(PredictorSpec::label)
            .chain(self.grids.iter().map(|g| {
                format!("grid:{}", PredictorSpec::new(g.family, g.task_mode).label())
            }));
        let mut seen = BTreeSet::new();
        raw.map(|l| {
            let mut label = l.clone();
            let mut n = 2;
            while !seen.insert(label.clone()) {
                label = format!("{l}#{n}");
                n += 1;
            }
            label
        })
        .collect()
    }
}
