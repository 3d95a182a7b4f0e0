use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ingest::RawEventTable;
use crate::numeric::{mean, population_std, quantile_sorted};

/// Lower and upper quantiles bounding the values used for normalization statistics.
pub const TRIM_QUANTILES: (f64, f64) = (0.05, 0.95);

/// Descriptive statistics of one feature. `trimmed_mean`/`trimmed_std` are computed over the
/// observed values inside the feature's 5-95% quantile range and drive z-score normalization.
/// A never-observed feature has `observed == 0`, all moments zero and `missing_rate == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub missing_rate: f64,
    pub trimmed_mean: f64,
    pub trimmed_std: f64,
    pub observed: usize,
}

impl FeatureStats {
    /// `total` is the number of records the feature could have been observed in.
    pub fn from_values(name: impl Into<String>, values: &[f64], total: usize) -> Self {
        let name = name.into();
        let missing_rate = if total == 0 {
            1.0
        } else {
            (1.0 - values.len() as f64 / total as f64).clamp(0.0, 1.0)
        };
        if values.is_empty() {
            return FeatureStats {
                name,
                mean: 0.0,
                std: 0.0,
                min: 0.0,
                max: 0.0,
                median: 0.0,
                missing_rate,
                trimmed_mean: 0.0,
                trimmed_std: 0.0,
                observed: 0,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&sorted, TRIM_QUANTILES.0).expect("non-empty");
        let hi = quantile_sorted(&sorted, TRIM_QUANTILES.1).expect("non-empty");
        let trimmed: Vec<f64> = sorted
            .iter()
            .copied()
            .filter(|v| *v >= lo && *v <= hi)
            .collect();
        FeatureStats {
            mean: mean(&sorted).expect("non-empty"),
            std: population_std(&sorted).expect("non-empty"),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            median: quantile_sorted(&sorted, 0.5).expect("non-empty"),
            missing_rate,
            // the trim interval always contains the interpolated median, so it is non-empty
            trimmed_mean: mean(&trimmed).unwrap_or(0.0),
            trimmed_std: population_std(&trimmed).unwrap_or(0.0),
            observed: sorted.len(),
            name,
        }
    }
}

/// Statistics for every feature in the table. Dynamic features count missingness over
/// (patient, time) records; static features over patients.
pub fn compute_feature_stats(table: &RawEventTable) -> Vec<FeatureStats> {
    let statics: HashSet<String> = table.static_features().into_iter().collect();
    let mut records: HashSet<(&str, u64)> = HashSet::new();
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ev in &table.rows {
        if !ev.is_static {
            records.insert((&ev.patient_id, ev.timestamp.to_bits()));
        }
        if let Some(v) = ev.value {
            values.entry(&ev.feature).or_default().push(v);
        }
    }
    let n_patients = table.patient_ids().len();
    table
        .feature_names
        .iter()
        .map(|name| {
            let vals = values.get(name.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let total = if statics.contains(name) {
                n_patients
            } else {
                records.len()
            };
            FeatureStats::from_values(name.clone(), vals, total)
        })
        .collect()
}
