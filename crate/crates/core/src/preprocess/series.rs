use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{RawEventTable, TimeBase};
use crate::preprocess::stats::FeatureStats;
use crate::preprocess::transform::FittedTransform;

/// One patient's day-level feature matrix. Missing cells hold `NaN` until imputation;
/// `mask` records what was observed before imputation and is never modified afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientSeries {
    pub patient_id: String,
    /// Strictly increasing 1-based day indices.
    pub days: Vec<u32>,
    /// `days.len()` rows of `n_features` values.
    pub matrix: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub statics: Vec<f64>,
    pub static_mask: Vec<bool>,
    /// `true` = death.
    pub outcome: bool,
    /// Total length of stay `L` in whole days.
    pub total_los: u32,
    /// `L - t` for every recorded day `t`; empty until [`derive_labels`] runs.
    pub remaining_los: Vec<f64>,
}

impl PatientSeries {
    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn n_features(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    /// Per-timestep mortality target: the end-of-stay outcome at every recorded day.
    pub fn mortality_targets(&self) -> Vec<f64> {
        vec![if self.outcome { 1.0 } else { 0.0 }; self.days.len()]
    }

    /// The first `len` recorded days.
    pub fn prefix(&self, len: usize) -> PatientSeries {
        let len = len.min(self.days.len());
        PatientSeries {
            days: self.days[..len].to_vec(),
            matrix: self.matrix[..len].to_vec(),
            mask: self.mask[..len].to_vec(),
            remaining_los: self.remaining_los.iter().take(len).copied().collect(),
            ..self.clone()
        }
    }

    pub fn is_complete(&self) -> bool {
        self.matrix.iter().flatten().all(|v| !v.is_nan()) && self.statics.iter().all(|v| !v.is_nan())
    }
}

/// Sets `remaining_los[t] = L - t` for each recorded day.
pub fn derive_labels(mut series: PatientSeries) -> Result<PatientSeries> {
    if let Some(&last) = series.days.last() {
        if last > series.total_los {
            return Err(Error::Data(format!(
                "patient `{}` has a record on day {last} after its length of stay {}",
                series.patient_id, series.total_los
            )));
        }
    }
    series.remaining_los = series
        .days
        .iter()
        .map(|&t| f64::from(series.total_los - t))
        .collect();
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub step: String,
    pub params: serde_json::Value,
}

impl ProvenanceStep {
    pub fn new(step: impl Into<String>, params: serde_json::Value) -> Self {
        ProvenanceStep {
            step: step.into(),
            params,
        }
    }
}

/// Patients plus feature metadata. `feature_stats` are descriptive statistics over the whole
/// cohort (dynamic features first, then statics); per-split fitting lives in
/// [`FittedTransform`].
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientSeries>,
    pub feature_names: Vec<String>,
    pub static_names: Vec<String>,
    pub feature_stats: Vec<FeatureStats>,
    pub provenance: Vec<ProvenanceStep>,
    /// Set once normalization and imputation have been applied.
    pub transform: Option<FittedTransform>,
}

impl Cohort {
    pub fn n_records(&self) -> usize {
        self.patients.iter().map(PatientSeries::n_days).sum()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id.clone()).collect()
    }

    pub fn outcome_counts(&self) -> (usize, usize) {
        let dead = self.patients.iter().filter(|p| p.outcome).count();
        (self.patients.len() - dead, dead)
    }

    /// Patients whose ids are in `ids`, in cohort order.
    pub fn subset(&self, ids: &BTreeSet<String>) -> Cohort {
        Cohort {
            patients: self
                .patients
                .iter()
                .filter(|p| ids.contains(&p.patient_id))
                .cloned()
                .collect(),
            ..self.without_patients()
        }
    }

    fn without_patients(&self) -> Cohort {
        Cohort {
            patients: Vec::new(),
            feature_names: self.feature_names.clone(),
            static_names: self.static_names.clone(),
            feature_stats: self.feature_stats.clone(),
            provenance: self.provenance.clone(),
            transform: self.transform.clone(),
        }
    }

    /// Normalizes and imputes every patient with `transform`, recording it in provenance.
    pub fn apply_transform(&self, transform: &FittedTransform) -> Result<Cohort> {
        if self.transform.is_some() {
            return Err(Error::Pipeline("cohort is already normalized".into()));
        }
        let patients = self
            .patients
            .iter()
            .map(|p| transform.apply(p))
            .collect::<Result<Vec<_>>>()?;
        let mut provenance = self.provenance.clone();
        provenance.push(ProvenanceStep::new(
            "normalize_impute",
            serde_json::json!({ "fitted_on": transform.fitted_on }),
        ));
        Ok(Cohort {
            patients,
            provenance,
            transform: Some(transform.clone()),
            ..self.without_patients()
        })
    }

    pub fn los_values(&self) -> Vec<f64> {
        self.patients.iter().map(|p| f64::from(p.total_los)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub without_outcome: Vec<String>,
    pub without_records: Vec<String>,
}

/// Assembles per-patient day matrices from a day-level table. Labels are not derived here.
pub fn build_series(
    table: &RawEventTable,
) -> Result<(Vec<PatientSeries>, Vec<String>, Vec<String>, BuildReport)> {
    let static_names = table.static_features();
    let feature_names = table.dynamic_features();
    let f_index: HashMap<&str, usize> = feature_names
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();
    let s_index: HashMap<&str, usize> = static_names
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();

    struct Acc {
        cells: BTreeMap<u32, Vec<Option<f64>>>,
        statics: Vec<Option<f64>>,
        outcome: Option<bool>,
        los: Option<f64>,
    }
    let ids = table.patient_ids();
    let mut accs: HashMap<&str, Acc> = ids
        .iter()
        .map(|id| {
            (
                id.as_str(),
                Acc {
                    cells: BTreeMap::new(),
                    statics: vec![None; static_names.len()],
                    outcome: None,
                    los: None,
                },
            )
        })
        .collect();

    for ev in &table.rows {
        let acc = accs.get_mut(ev.patient_id.as_str()).expect("id collected");
        acc.outcome = acc.outcome.or(ev.outcome);
        acc.los = acc.los.or(ev.total_los);
        if ev.is_static {
            acc.statics[s_index[ev.feature.as_str()]] = ev.value;
            continue;
        }
        let day = match table.time_base {
            TimeBase::DayIndex => ev.timestamp as u32,
            TimeBase::DaysSinceFirst => ev.timestamp.floor() as u32 + 1,
        };
        let row = acc
            .cells
            .entry(day)
            .or_insert_with(|| vec![None; feature_names.len()]);
        let slot = &mut row[f_index[ev.feature.as_str()]];
        if slot.is_some() && ev.value.is_some() {
            return Err(Error::Pipeline(format!(
                "patient `{}` has several `{}` values on day {day}; merge to day level first",
                ev.patient_id, ev.feature
            )));
        }
        if ev.value.is_some() {
            *slot = ev.value;
        }
    }

    let mut report = BuildReport::default();
    let mut series = Vec::with_capacity(ids.len());
    for id in &ids {
        let acc = accs.remove(id.as_str()).expect("id collected");
        let Some(outcome) = acc.outcome else {
            report.without_outcome.push(id.clone());
            continue;
        };
        if acc.cells.is_empty() {
            report.without_records.push(id.clone());
            continue;
        }
        let days: Vec<u32> = acc.cells.keys().copied().collect();
        let last = *days.last().expect("non-empty");
        let total_los = match acc.los {
            Some(l) => (l.ceil() as u32).max(1),
            None => last,
        };
        let (matrix, mask): (Vec<Vec<f64>>, Vec<Vec<bool>>) = acc
            .cells
            .into_values()
            .map(|row| {
                let mask = row.iter().map(Option::is_some).collect();
                let vals = row.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
                (vals, mask)
            })
            .unzip();
        series.push(PatientSeries {
            patient_id: id.clone(),
            days,
            matrix,
            mask,
            static_mask: acc.statics.iter().map(Option::is_some).collect(),
            statics: acc.statics.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            outcome,
            total_los,
            remaining_los: Vec::new(),
        });
    }
    Ok((series, feature_names, static_names, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(days: Vec<u32>, los: u32, outcome: bool) -> PatientSeries {
        let n = days.len();
        PatientSeries {
            patient_id: "p".into(),
            days,
            matrix: vec![vec![0.0]; n],
            mask: vec![vec![true]; n],
            statics: vec![],
            static_mask: vec![],
            outcome,
            total_los: los,
            remaining_los: vec![],
        }
    }

    #[test]
    fn remaining_los_counts_down_to_discharge() {
        let s = derive_labels(series(vec![1, 3, 10], 10, false)).unwrap();
        assert_eq!(s.remaining_los, vec![9.0, 7.0, 0.0]);
        assert_eq!(s.mortality_targets(), vec![0.0; 3]);
    }

    #[test]
    fn dead_patient_targets_are_all_positive() {
        let s = derive_labels(series(vec![1, 2, 3, 4], 6, true)).unwrap();
        assert_eq!(s.mortality_targets(), vec![1.0; 4]);
    }

    #[test]
    fn record_after_discharge_is_a_data_error() {
        assert!(matches!(
            derive_labels(series(vec![1, 12], 10, true)),
            Err(Error::Data(_))
        ));
    }
}
