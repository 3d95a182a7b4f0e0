//! Row-level cleaning steps on the long-form event table.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{RawEvent, RawEventTable, TimeBase};
use crate::numeric::{compensated_sum, mean, population_std};

/// Closed validity interval for one feature; `None` bounds are open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeRule {
    pub feature: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl RangeRule {
    pub fn new(feature: impl Into<String>, min: Option<f64>, max: Option<f64>) -> Result<Self> {
        let rule = RangeRule {
            feature: feature.into(),
            min,
            max,
        };
        rule.check()?;
        Ok(rule)
    }

    fn check(&self) -> Result<()> {
        let bad = |b: Option<f64>| b.is_some_and(f64::is_nan);
        if bad(self.min) || bad(self.max) {
            return Err(Error::Argument(format!("rule for `{}` has a NaN bound", self.feature)));
        }
        if let (Some(lo), Some(hi)) = (self.min, self.max) {
            if lo > hi {
                return Err(Error::Argument(format!(
                    "rule for `{}` has empty interval [{lo}, {hi}]",
                    self.feature
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min.map_or(true, |lo| v >= lo) && self.max.map_or(true, |hi| v <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCount {
    pub feature: String,
    pub replaced: usize,
    /// The rule named a feature absent from the table.
    pub skipped: bool,
}

/// Replaces out-of-range values with missing.
pub fn clean_domain_rules(
    mut table: RawEventTable,
    rules: &[RangeRule],
) -> Result<(RawEventTable, Vec<RuleCount>)> {
    for r in rules {
        r.check()?;
    }
    let known: HashSet<&str> = table.feature_names.iter().map(String::as_str).collect();
    let mut counts = Vec::with_capacity(rules.len());
    let mut by_feature: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, r) in rules.iter().enumerate() {
        let skipped = !known.contains(r.feature.as_str());
        if skipped {
            log::warn!("range rule names unknown feature `{}`; skipped", r.feature);
        } else {
            by_feature.entry(r.feature.clone()).or_default().push(i);
        }
        counts.push(RuleCount {
            feature: r.feature.clone(),
            replaced: 0,
            skipped,
        });
    }
    for ev in &mut table.rows {
        let Some(idxs) = by_feature.get(&ev.feature) else {
            continue;
        };
        let Some(v) = ev.value else { continue };
        // first violated rule gets the count
        if let Some(&i) = idxs.iter().find(|&&i| !rules[i].contains(v)) {
            ev.value = None;
            counts[i].replaced += 1;
        }
    }
    Ok((table, counts))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThreeSigmaReport {
    pub removed: usize,
    /// Features with fewer than two observations or zero spread.
    pub skipped: Vec<String>,
}

/// Replaces dynamic values whose z-score (untrimmed mean, population std over all observed
/// events of the feature) exceeds 3 in absolute value.
pub fn clean_three_sigma(mut table: RawEventTable) -> (RawEventTable, ThreeSigmaReport) {
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ev in table.rows.iter().filter(|e| !e.is_static) {
        if let Some(v) = ev.value {
            values.entry(ev.feature.as_str()).or_default().push(v);
        }
    }
    let mut report = ThreeSigmaReport::default();
    let mut bounds: HashMap<String, (f64, f64)> = HashMap::new();
    for name in table.dynamic_features() {
        let vals = values.get(name.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        match (vals.len() >= 2, mean(vals), population_std(vals)) {
            (true, Some(m), Some(s)) if s > 0.0 => {
                bounds.insert(name, (m, s));
            }
            _ => {
                log::info!("three-sigma: feature `{name}` skipped (degenerate)");
                report.skipped.push(name);
            }
        }
    }
    for ev in table.rows.iter_mut().filter(|e| !e.is_static) {
        if let (Some(v), Some(&(m, s))) = (ev.value, bounds.get(&ev.feature)) {
            if ((v - m) / s).abs() > 3.0 {
                ev.value = None;
                report.removed += 1;
            }
        }
    }
    (table, report)
}

/// Removes dynamic features whose observed values are all identical (or that are never
/// observed).
pub fn drop_constant_features(table: RawEventTable) -> (RawEventTable, Vec<String>) {
    let mut first: HashMap<&str, f64> = HashMap::new();
    let mut varying: HashSet<&str> = HashSet::new();
    for ev in table.rows.iter().filter(|e| !e.is_static) {
        if let Some(v) = ev.value {
            match first.get(ev.feature.as_str()) {
                None => {
                    first.insert(&ev.feature, v);
                }
                Some(&f) if f != v => {
                    varying.insert(&ev.feature);
                }
                _ => {}
            }
        }
    }
    let dropped: Vec<String> = table
        .dynamic_features()
        .into_iter()
        .filter(|f| !varying.contains(f.as_str()))
        .collect();
    let drop: HashSet<String> = dropped.iter().cloned().collect();
    (table.without_features(&drop), dropped)
}

fn day_index(table: &RawEventTable, ts: f64) -> u32 {
    match table.time_base {
        TimeBase::DayIndex => ts as u32,
        TimeBase::DaysSinceFirst => ts.floor() as u32 + 1,
    }
}

/// Collapses dynamic events to one per (patient, feature, day) holding the mean of the
/// observed values; day indices are 1-based. Rows are grouped by patient in order of first
/// appearance, statics first.
pub fn merge_daily(table: RawEventTable) -> RawEventTable {
    let patient_order: HashMap<String, usize> = table
        .patient_ids()
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, i))
        .collect();
    let feature_order: HashMap<&str, usize> = table
        .feature_names
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();

    struct Cell<'a> {
        template: &'a RawEvent,
        observed: Vec<f64>,
    }
    let mut cells: BTreeMap<(usize, u32, usize), Cell> = BTreeMap::new();
    let mut statics: Vec<Vec<RawEvent>> = vec![Vec::new(); patient_order.len()];
    for ev in &table.rows {
        let p = patient_order[&ev.patient_id];
        if ev.is_static {
            statics[p].push(ev.clone());
            continue;
        }
        let key = (p, day_index(&table, ev.timestamp), feature_order[ev.feature.as_str()]);
        let cell = cells.entry(key).or_insert_with(|| Cell {
            template: ev,
            observed: Vec::new(),
        });
        if let Some(v) = ev.value {
            cell.observed.push(v);
        }
    }
    // each patient's statics, then its cells by day and feature
    let mut rows = Vec::with_capacity(table.rows.len());
    let mut cells = cells.into_iter().peekable();
    for (p, patient_statics) in statics.into_iter().enumerate() {
        rows.extend(patient_statics);
        while let Some(((_, day, _), cell)) = cells.next_if(|((q, _, _), _)| *q == p) {
            let value = (!cell.observed.is_empty())
                .then(|| compensated_sum(cell.observed.iter().copied()) / cell.observed.len() as f64);
            rows.push(RawEvent {
                timestamp: f64::from(day),
                value,
                ..cell.template.clone()
            });
        }
    }
    RawEventTable {
        rows,
        feature_names: table.feature_names,
        dataset_tag: table.dataset_tag,
        time_base: TimeBase::DayIndex,
    }
}

/// Fraction of (patient, time) records in which each dynamic feature is not observed.
pub fn record_missing_rates(table: &RawEventTable) -> BTreeMap<String, f64> {
    let mut records: HashSet<(&str, u64)> = HashSet::new();
    let mut observed: HashMap<&str, HashSet<(&str, u64)>> = HashMap::new();
    for ev in table.rows.iter().filter(|e| !e.is_static) {
        let key = (ev.patient_id.as_str(), ev.timestamp.to_bits());
        records.insert(key);
        if ev.value.is_some() {
            observed.entry(ev.feature.as_str()).or_default().insert(key);
        }
    }
    let total = records.len();
    table
        .dynamic_features()
        .into_iter()
        .map(|f| {
            let seen = observed.get(f.as_str()).map_or(0, HashSet::len);
            let rate = if total == 0 {
                1.0
            } else {
                1.0 - seen as f64 / total as f64
            };
            (f, rate)
        })
        .collect()
}

/// Removes dynamic features whose record-level missing rate exceeds `threshold`.
pub fn drop_sparse_features(
    table: RawEventTable,
    threshold: f64,
) -> Result<(RawEventTable, Vec<String>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Argument(format!(
            "sparse threshold must be in (0, 1], got {threshold}"
        )));
    }
    let rates = record_missing_rates(&table);
    let dropped: Vec<String> = table
        .dynamic_features()
        .into_iter()
        .filter(|f| rates[f] > threshold)
        .collect();
    if !rates.is_empty() && dropped.len() == rates.len() {
        return Err(Error::Pipeline(format!(
            "every feature exceeds the {threshold} missing-rate threshold"
        )));
    }
    let drop: HashSet<String> = dropped.iter().cloned().collect();
    Ok((table.without_features(&drop), dropped))
}
