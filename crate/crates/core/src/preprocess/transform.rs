//! Z-score normalization on trimmed statistics and forward-fill imputation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::RawEventTable;
use crate::numeric::quantile;
use crate::preprocess::series::{Cohort, PatientSeries};
use crate::preprocess::stats::FeatureStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    pub fn from_stats(stats: &FeatureStats) -> Self {
        ZScore {
            mean: stats.trimmed_mean,
            std: stats.trimmed_std,
        }
    }

    /// Zero-spread features map to 0.
    pub fn apply(&self, x: f64) -> f64 {
        if self.std > 0.0 {
            (x - self.mean) / self.std
        } else {
            0.0
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Replaces each observed value of a feature that has statistics with
/// `(x - trimmed_mean) / trimmed_std`. Features without statistics are left untouched.
pub fn normalize_zscore(mut table: RawEventTable, stats: &[FeatureStats]) -> RawEventTable {
    let by_name: std::collections::HashMap<&str, ZScore> = stats
        .iter()
        .map(|s| {
            if s.trimmed_std == 0.0 {
                log::warn!("feature `{}` has zero trimmed spread; normalized to 0", s.name);
            }
            (s.name.as_str(), ZScore::from_stats(s))
        })
        .collect();
    for ev in &mut table.rows {
        if let (Some(v), Some(z)) = (ev.value, by_name.get(ev.feature.as_str())) {
            ev.value = Some(z.apply(v));
        }
    }
    table
}

/// Last observation carried forward within the patient; cells with no earlier observation
/// take the global median. `mask` is untouched.
pub fn impute_forward_fill(
    mut series: PatientSeries,
    global_medians: &[Option<f64>],
) -> Result<PatientSeries> {
    let n_features = series.n_features();
    if global_medians.len() != n_features {
        return Err(Error::Argument(format!(
            "{} medians for {n_features} features",
            global_medians.len()
        )));
    }
    for j in 0..n_features {
        let mut last: Option<f64> = None;
        for row in series.matrix.iter_mut() {
            let v = row[j];
            if v.is_nan() {
                row[j] = match last.or(global_medians[j]) {
                    Some(fill) => fill,
                    None => {
                        return Err(Error::Pipeline(format!(
                            "feature {j} has no global median to impute patient `{}`",
                            series.patient_id
                        )))
                    }
                };
            } else {
                last = Some(v);
            }
        }
    }
    Ok(series)
}

/// Which patients a transform was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitScope {
    pub label: String,
    pub patients: usize,
    /// SHA-256 over the sorted patient ids.
    pub ids_digest: String,
}

impl FitScope {
    pub fn new(label: impl Into<String>, ids: &[String]) -> Self {
        let mut sorted: Vec<&String> = ids.iter().collect();
        sorted.sort();
        let mut h = Sha256::new();
        for id in sorted {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        FitScope {
            label: label.into(),
            patients: ids.len(),
            ids_digest: format!("{:x}", h.finalize()),
        }
    }
}

/// Normalization and imputation statistics fitted on one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    pub features: Vec<ZScore>,
    /// `None` for binary statics, which are kept as 0/1.
    pub statics: Vec<Option<ZScore>>,
    /// Normalization of the remaining-LOS regression target.
    pub los: ZScore,
    /// Medians of the normalized observed values.
    pub feature_medians: Vec<Option<f64>>,
    pub static_medians: Vec<Option<f64>>,
    pub fitted_on: FitScope,
}

impl FittedTransform {
    /// Fits on the given patients, which must have labels derived.
    pub fn fit(cohort: &Cohort, fit_patients: &[&PatientSeries], label: &str) -> Result<Self> {
        if fit_patients.is_empty() {
            return Err(Error::Argument("cannot fit a transform on zero patients".into()));
        }
        let nf = cohort.feature_names.len();
        let ns = cohort.static_names.len();
        let mut feature_values = vec![Vec::new(); nf];
        let mut static_values = vec![Vec::new(); ns];
        let mut los_values = Vec::new();
        let mut records = 0usize;
        for p in fit_patients {
            records += p.n_days();
            for (row, mask) in p.matrix.iter().zip(&p.mask) {
                for j in 0..nf {
                    if mask[j] {
                        feature_values[j].push(row[j]);
                    }
                }
            }
            for j in 0..ns {
                if p.static_mask[j] {
                    static_values[j].push(p.statics[j]);
                }
            }
            los_values.extend_from_slice(&p.remaining_los);
        }

        let fit = |name: &str, values: &[f64], total: usize| {
            ZScore::from_stats(&FeatureStats::from_values(name, values, total))
        };
        let median_of = |values: &[f64], z: Option<ZScore>| {
            let normed: Vec<f64> = values
                .iter()
                .map(|&v| z.map_or(v, |z| z.apply(v)))
                .collect();
            quantile(&normed, 0.5)
        };

        let features: Vec<ZScore> = (0..nf)
            .map(|j| fit(&cohort.feature_names[j], &feature_values[j], records))
            .collect();
        let statics: Vec<Option<ZScore>> = (0..ns)
            .map(|j| {
                let vals = &static_values[j];
                let binary = vals.iter().all(|&v| v == 0.0 || v == 1.0);
                (!binary).then(|| fit(&cohort.static_names[j], vals, fit_patients.len()))
            })
            .collect();
        let feature_medians = (0..nf)
            .map(|j| median_of(&feature_values[j], Some(features[j])))
            .collect();
        let static_medians = (0..ns)
            .map(|j| median_of(&static_values[j], statics[j]))
            .collect();
        let ids: Vec<String> = fit_patients.iter().map(|p| p.patient_id.clone()).collect();
        Ok(FittedTransform {
            features,
            statics,
            los: fit("remaining_los", &los_values, los_values.len()),
            feature_medians,
            static_medians,
            fitted_on: FitScope::new(label, &ids),
        })
    }

    /// Normalizes observed cells, then imputes.
    pub fn apply(&self, series: &PatientSeries) -> Result<PatientSeries> {
        if series.n_features() != self.features.len() && series.n_days() > 0 {
            return Err(Error::Argument(format!(
                "patient `{}` has {} features, transform expects {}",
                series.patient_id,
                series.n_features(),
                self.features.len()
            )));
        }
        let mut s = series.clone();
        for row in s.matrix.iter_mut() {
            for (v, z) in row.iter_mut().zip(&self.features) {
                if !v.is_nan() {
                    *v = z.apply(*v);
                }
            }
        }
        for (j, v) in s.statics.iter_mut().enumerate() {
            if v.is_nan() {
                *v = self.static_medians[j].ok_or_else(|| {
                    Error::Pipeline(format!(
                        "static {j} has no global median to impute patient `{}`",
                        series.patient_id
                    ))
                })?;
            } else if let Some(z) = self.statics[j] {
                *v = z.apply(*v);
            }
        }
        impute_forward_fill(s, &self.feature_medians)
    }
}
