use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::ingest::RawEventTable;
use crate::preprocess::clean::{
    clean_domain_rules, clean_three_sigma, drop_constant_features, drop_sparse_features,
    merge_daily, RangeRule,
};
use crate::preprocess::series::{build_series, derive_labels, Cohort, ProvenanceStep};
use crate::preprocess::stats::{compute_feature_stats, FeatureStats};
use crate::preprocess::transform::FittedTransform;

/// Oxygen saturation column name expected in flattened CDSL exports.
pub const CDSL_SPO2: &str = "SAT_O2";
/// Maximum blood pressure column name expected in flattened CDSL exports.
pub const CDSL_MAX_BP: &str = "MAX_BLOOD_PRESSURE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Tjh,
    Cdsl,
    Identity,
}

/// Which cleaning steps run and with what parameters. Steps always execute in the order
/// domain rules, constant drop, three-sigma, daily merge, sparse drop, labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub domain_rules: Vec<RangeRule>,
    /// Adds a `[0, inf)` rule for every dynamic feature.
    pub non_negative: bool,
    pub drop_constant: bool,
    pub three_sigma: bool,
    pub merge_daily: bool,
    pub sparse_threshold: Option<f64>,
    /// Leave normalization/imputation to per-split fitting. When `false` the whole cohort is
    /// fitted and transformed here.
    pub fit_on_train: bool,
}

impl PipelineConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Tjh => PipelineConfig {
                domain_rules: Vec::new(),
                non_negative: true,
                drop_constant: true,
                three_sigma: true,
                merge_daily: true,
                sparse_threshold: None,
                fit_on_train: true,
            },
            Profile::Cdsl => PipelineConfig {
                domain_rules: vec![
                    RangeRule {
                        feature: CDSL_SPO2.into(),
                        min: Some(0.0),
                        max: Some(100.0),
                    },
                    RangeRule {
                        feature: CDSL_MAX_BP.into(),
                        min: Some(0.0),
                        max: Some(220.0),
                    },
                ],
                non_negative: false,
                drop_constant: false,
                three_sigma: false,
                merge_daily: true,
                sparse_threshold: Some(0.9),
                fit_on_train: true,
            },
            Profile::Identity => PipelineConfig {
                domain_rules: Vec::new(),
                non_negative: false,
                drop_constant: false,
                three_sigma: false,
                merge_daily: false,
                sparse_threshold: None,
                fit_on_train: true,
            },
        }
    }

    /// Reconstructs the configuration that produced a provenance log.
    pub fn from_provenance(steps: &[ProvenanceStep]) -> Result<Self> {
        let mut cfg = PipelineConfig::profile(Profile::Identity);
        cfg.fit_on_train = true;
        for s in steps {
            match s.step.as_str() {
                "domain_rules" => {
                    cfg.domain_rules = serde_json::from_value(s.params["rules"].clone())?;
                    cfg.non_negative = s.params["non_negative"].as_bool().unwrap_or(false);
                }
                "drop_constant" => cfg.drop_constant = true,
                "three_sigma" => cfg.three_sigma = true,
                "merge_daily" => cfg.merge_daily = true,
                "drop_sparse" => {
                    cfg.sparse_threshold = Some(s.params["threshold"].as_f64().ok_or_else(
                        || Error::Pipeline("drop_sparse provenance lacks a threshold".into()),
                    )?)
                }
                "normalize_impute" => cfg.fit_on_train = false,
                "derive_labels" => {}
                other => {
                    return Err(Error::Pipeline(format!("unknown provenance step `{other}`")))
                }
            }
        }
        Ok(cfg)
    }
}

/// Runs the cleaning pipeline and builds the labelled cohort.
pub fn run_pipeline(table: RawEventTable, config: &PipelineConfig) -> Result<Cohort> {
    if table.rows.is_empty() {
        return Err(Error::Pipeline("input table has no events".into()));
    }
    let mut provenance = Vec::new();
    let mut table = table;

    if !config.domain_rules.is_empty() || config.non_negative {
        let mut rules = config.domain_rules.clone();
        if config.non_negative {
            rules.extend(table.dynamic_features().into_iter().map(|f| RangeRule {
                feature: f,
                min: Some(0.0),
                max: None,
            }));
        }
        let (t, counts) = clean_domain_rules(table, &rules)?;
        table = t;
        let replaced: usize = counts.iter().map(|c| c.replaced).sum();
        provenance.push(ProvenanceStep::new(
            "domain_rules",
            json!({
                "rules": config.domain_rules,
                "non_negative": config.non_negative,
                "replaced": replaced,
                "skipped_rules": counts.iter().filter(|c| c.skipped).map(|c| &c.feature).collect::<Vec<_>>(),
            }),
        ));
    }
    if config.drop_constant {
        let (t, dropped) = drop_constant_features(table);
        table = t;
        provenance.push(ProvenanceStep::new("drop_constant", json!({ "dropped": dropped })));
    }
    if config.three_sigma {
        let (t, report) = clean_three_sigma(table);
        table = t;
        provenance.push(ProvenanceStep::new(
            "three_sigma",
            json!({ "removed": report.removed, "skipped": report.skipped }),
        ));
    }
    if config.merge_daily {
        table = merge_daily(table);
        provenance.push(ProvenanceStep::new("merge_daily", json!({})));
    }
    if let Some(threshold) = config.sparse_threshold {
        let (t, dropped) = drop_sparse_features(table, threshold)?;
        table = t;
        provenance.push(ProvenanceStep::new(
            "drop_sparse",
            json!({ "threshold": threshold, "dropped": dropped }),
        ));
    }

    let all_stats = compute_feature_stats(&table);
    let (series, feature_names, static_names, build) = build_series(&table)?;
    let mut patients = Vec::with_capacity(series.len());
    let mut inconsistent = Vec::new();
    for s in series {
        let id = s.patient_id.clone();
        match derive_labels(s) {
            Ok(s) => patients.push(s),
            Err(e) => {
                log::warn!("{e}; patient dropped");
                inconsistent.push(id);
            }
        }
    }
    provenance.push(ProvenanceStep::new(
        "derive_labels",
        json!({
            "dropped_without_outcome": build.without_outcome,
            "dropped_without_records": build.without_records,
            "dropped_records_after_discharge": inconsistent,
        }),
    ));
    if patients.is_empty() {
        return Err(Error::Pipeline("no patients survive preprocessing".into()));
    }

    // dynamic stats first, then statics, matching the cohort's column order
    let stat_for = |name: &String| {
        all_stats
            .iter()
            .find(|s| &s.name == name)
            .cloned()
            .expect("stats cover every feature")
    };
    let feature_stats: Vec<FeatureStats> = feature_names
        .iter()
        .chain(static_names.iter())
        .map(stat_for)
        .collect();

    let cohort = Cohort {
        patients,
        feature_names,
        static_names,
        feature_stats,
        provenance,
        transform: None,
    };
    if config.fit_on_train {
        return Ok(cohort);
    }
    let all: Vec<_> = cohort.patients.iter().collect();
    let transform = FittedTransform::fit(&cohort, &all, "all")?;
    cohort.apply_transform(&transform)
}

/// Re-runs the steps recorded in `provenance` on `table`.
pub fn replay(table: RawEventTable, provenance: &[ProvenanceStep]) -> Result<Cohort> {
    run_pipeline(table, &PipelineConfig::from_provenance(provenance)?)
}
