//! Raw event ingestion: CSV adapters (wide and long layouts) and a seeded synthetic cohort
//! generator. Everything downstream works on the long-form [`RawEventTable`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    TjhLike,
    CdslLike,
    #[default]
    Generic,
}

/// What a table's timestamps mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBase {
    /// Real-valued days since the patient's first record.
    #[default]
    DaysSinceFirst,
    /// Integer, 1-based day index produced by daily merging.
    DayIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub patient_id: String,
    pub timestamp: f64,
    pub feature: String,
    pub value: Option<f64>,
    /// `true` = death.
    pub outcome: Option<bool>,
    /// Total length of stay in days, measured from the first record.
    pub total_los: Option<f64>,
    pub is_static: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEventTable {
    pub rows: Vec<RawEvent>,
    pub feature_names: Vec<String>,
    pub dataset_tag: DatasetTag,
    #[serde(default)]
    pub time_base: TimeBase,
}

impl RawEventTable {
    /// Builds a table and checks its invariants.
    pub fn new(
        rows: Vec<RawEvent>,
        feature_names: Vec<String>,
        dataset_tag: DatasetTag,
        time_base: TimeBase,
    ) -> Result<Self> {
        let table = RawEventTable {
            rows,
            feature_names,
            dataset_tag,
            time_base,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let known: HashSet<&str> = self.feature_names.iter().map(String::as_str).collect();
        let mut outcomes: HashMap<&str, bool> = HashMap::new();
        let mut statics: HashSet<(&str, &str)> = HashSet::new();
        for (i, ev) in self.rows.iter().enumerate() {
            if !known.contains(ev.feature.as_str()) {
                return Err(Error::Schema(format!(
                    "event {i} references unknown feature `{}`",
                    ev.feature
                )));
            }
            if !ev.timestamp.is_finite() || ev.timestamp < 0.0 {
                return Err(Error::Schema(format!(
                    "event {i} of patient `{}` has invalid timestamp {}",
                    ev.patient_id, ev.timestamp
                )));
            }
            if let Some(o) = ev.outcome {
                if let Some(prev) = outcomes.insert(&ev.patient_id, o) {
                    if prev != o {
                        return Err(Error::Schema(format!(
                            "patient `{}` has conflicting outcomes",
                            ev.patient_id
                        )));
                    }
                }
            }
            if ev.is_static && !statics.insert((&ev.patient_id, &ev.feature)) {
                return Err(Error::Schema(format!(
                    "patient `{}` has more than one value for static feature `{}`",
                    ev.patient_id, ev.feature
                )));
            }
        }
        Ok(())
    }

    /// Patient ids in order of first appearance.
    pub fn patient_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut ids = Vec::new();
        for ev in &self.rows {
            if seen.insert(ev.patient_id.as_str()) {
                ids.push(ev.patient_id.clone());
            }
        }
        ids
    }

    pub fn static_features(&self) -> Vec<String> {
        let statics: HashSet<&str> = self
            .rows
            .iter()
            .filter(|e| e.is_static)
            .map(|e| e.feature.as_str())
            .collect();
        self.feature_names
            .iter()
            .filter(|f| statics.contains(f.as_str()))
            .cloned()
            .collect()
    }

    /// Features that are not static. Never-observed features count as dynamic.
    pub fn dynamic_features(&self) -> Vec<String> {
        let statics: HashSet<String> = self.static_features().into_iter().collect();
        self.feature_names
            .iter()
            .filter(|f| !statics.contains(*f))
            .cloned()
            .collect()
    }

    /// Drops the named features and all their events.
    pub fn without_features(mut self, drop: &HashSet<String>) -> Self {
        self.rows.retain(|e| !drop.contains(&e.feature));
        self.feature_names.retain(|f| !drop.contains(f));
        self
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    /// Writes the canonical long layout read back by [`ColumnMapping::canonical`].
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CANONICAL_HEADER)?;
        for ev in &self.rows {
            w.write_record([
                ev.patient_id.clone(),
                ev.timestamp.to_string(),
                ev.feature.clone(),
                ev.value.map(|v| v.to_string()).unwrap_or_default(),
                ev.outcome.map(|o| u8::from(o).to_string()).unwrap_or_default(),
                ev.total_los.map(|v| v.to_string()).unwrap_or_default(),
                u8::from(ev.is_static).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

const CANONICAL_HEADER: [&str; 7] = [
    "patient_id",
    "timestamp",
    "feature",
    "value",
    "outcome",
    "total_los",
    "is_static",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    Days,
    Hours,
    Datetime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One column per feature, one row per measurement time.
    #[default]
    Wide,
    /// One row per (time, feature) with name and value columns.
    Long,
}

fn default_datetime_format() -> String {
    "%Y-%m-%d %H:%M:%S".to_string()
}

/// Maps CSV columns onto event fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub patient_id: String,
    pub timestamp: String,
    #[serde(default)]
    pub time_unit: TimeUnit,
    #[serde(default = "default_datetime_format")]
    pub datetime_format: String,
    #[serde(default)]
    pub outcome: Option<String>,
    /// Column holding total length of stay in days (from the first record).
    #[serde(default)]
    pub los: Option<String>,
    /// Column holding the discharge/outcome time, in the same unit as `timestamp`.
    #[serde(default)]
    pub discharge: Option<String>,
    /// Static (demographic) columns in wide layout, or static feature names in long layout.
    #[serde(default)]
    pub statics: Vec<String>,
    #[serde(default)]
    pub layout: Layout,
    /// Wide layout: feature columns. `None` takes every column not otherwise mapped or ignored.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub ignore: Vec<String>,
    #[serde(default)]
    pub feature_column: Option<String>,
    #[serde(default)]
    pub value_column: Option<String>,
    /// Long layout: optional 0/1 column flagging static events.
    #[serde(default)]
    pub static_column: Option<String>,
    /// Carry the last non-empty patient id into rows where it is blank.
    #[serde(default)]
    pub fill_patient_id: bool,
    #[serde(default)]
    pub dataset_tag: DatasetTag,
}

impl ColumnMapping {
    /// Long layout written by [`RawEventTable::write_csv`].
    pub fn canonical(tag: DatasetTag) -> Self {
        ColumnMapping {
            patient_id: "patient_id".into(),
            timestamp: "timestamp".into(),
            time_unit: TimeUnit::Days,
            datetime_format: default_datetime_format(),
            outcome: Some("outcome".into()),
            los: Some("total_los".into()),
            discharge: None,
            statics: Vec::new(),
            layout: Layout::Long,
            features: None,
            ignore: Vec::new(),
            feature_column: Some("feature".into()),
            value_column: Some("value".into()),
            static_column: Some("is_static".into()),
            fill_patient_id: false,
            dataset_tag: tag,
        }
    }

    /// The public TJH time-series export: one wide row per lab draw, patient id only on the
    /// first row of each patient block, datetimes for record and discharge times.
    pub fn tjh() -> Self {
        ColumnMapping {
            patient_id: "PATIENT_ID".into(),
            timestamp: "RE_DATE".into(),
            time_unit: TimeUnit::Datetime,
            datetime_format: default_datetime_format(),
            outcome: Some("outcome".into()),
            los: None,
            discharge: Some("Discharge time".into()),
            statics: vec!["age".into(), "gender".into()],
            layout: Layout::Wide,
            features: None,
            ignore: vec!["Admission time".into()],
            feature_column: None,
            value_column: None,
            static_column: None,
            fill_patient_id: true,
            dataset_tag: DatasetTag::TjhLike,
        }
    }

    /// CDSL has no public flat export; this expects a pre-flattened wide CSV with
    /// `PATIENT_ID`, `RECORD_TIME` in days, `OUTCOME`, `LOS`, `AGE` and `SEX`.
    pub fn cdsl_flat() -> Self {
        ColumnMapping {
            patient_id: "PATIENT_ID".into(),
            timestamp: "RECORD_TIME".into(),
            time_unit: TimeUnit::Days,
            datetime_format: default_datetime_format(),
            outcome: Some("OUTCOME".into()),
            los: Some("LOS".into()),
            discharge: None,
            statics: vec!["AGE".into(), "SEX".into()],
            layout: Layout::Wide,
            features: None,
            ignore: Vec::new(),
            feature_column: None,
            value_column: None,
            static_column: None,
            fill_patient_id: false,
            dataset_tag: DatasetTag::CdslLike,
        }
    }

    fn mapped_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.patient_id.as_str(), self.timestamp.as_str()];
        for c in [
            &self.outcome,
            &self.los,
            &self.discharge,
            &self.feature_column,
            &self.value_column,
            &self.static_column,
        ]
        .into_iter()
        .flatten()
        {
            cols.push(c.as_str());
        }
        if self.layout == Layout::Wide {
            cols.extend(self.statics.iter().map(String::as_str));
        }
        cols
    }
}

enum Cell {
    Missing,
    Number(f64),
    Text,
}

fn parse_cell(raw: &str) -> Cell {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Cell::Missing;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Number(v),
        _ => Cell::Text,
    }
}

fn parse_time(raw: &str, mapping: &ColumnMapping) -> std::result::Result<Option<f64>, String> {
    let s = raw.trim();
    if let Cell::Missing = parse_cell(s) {
        return Ok(None);
    }
    match mapping.time_unit {
        TimeUnit::Days | TimeUnit::Hours => {
            let v: f64 = s
                .parse()
                .map_err(|_| format!("timestamp `{s}` is not a number"))?;
            if !v.is_finite() {
                return Err(format!("timestamp `{s}` is not finite"));
            }
            Ok(Some(if mapping.time_unit == TimeUnit::Hours {
                v / 24.0
            } else {
                v
            }))
        }
        TimeUnit::Datetime => {
            let dt = NaiveDateTime::parse_from_str(s, &mapping.datetime_format)
                .or_else(|_| {
                    NaiveDate::parse_from_str(s, "%Y-%m-%d")
                        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight is valid"))
                })
                .map_err(|e| format!("timestamp `{s}`: {e}"))?;
            Ok(Some(dt.and_utc().timestamp() as f64 / 86_400.0))
        }
    }
}

fn parse_outcome(raw: &str) -> std::result::Result<Option<bool>, String> {
    match parse_cell(raw) {
        Cell::Missing => Ok(None),
        Cell::Number(v) if v == 0.0 => Ok(Some(false)),
        Cell::Number(v) if v == 1.0 => Ok(Some(true)),
        _ => Err(format!("outcome `{}` is not 0/1", raw.trim())),
    }
}

/// Per-patient values gathered while reading, before timestamps are rebased.
#[derive(Default)]
struct PatientAcc {
    outcome: Option<bool>,
    los: Option<f64>,
    discharge: Option<f64>,
    first_time: Option<f64>,
}

pub fn load_csv(path: &Path, mapping: &ColumnMapping) -> Result<RawEventTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_from(file, mapping)
}

/// Reads a CSV into a long-form table. Timestamps are rebased to days since each patient's
/// first non-static record; empty, `NA` and `NaN` cells produce no event in wide layout.
pub fn load_csv_from<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<RawEventTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_parse_error(e, 1))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();

    let missing: Vec<&str> = mapping
        .mapped_columns()
        .into_iter()
        .chain(mapping.features.iter().flatten().map(String::as_str))
        .filter(|c| !index.contains_key(c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "column(s) not found in CSV header: {}",
            missing.join(", ")
        )));
    }
    let col = |name: &str| index[name];
    let pid_col = col(&mapping.patient_id);
    let ts_col = col(&mapping.timestamp);
    let outcome_col = mapping.outcome.as_deref().map(col);
    let los_col = mapping.los.as_deref().map(col);
    let discharge_col = mapping.discharge.as_deref().map(col);

    let (feature_cols, static_cols, long_cols) = match mapping.layout {
        Layout::Wide => {
            let mapped: HashSet<&str> = mapping
                .mapped_columns()
                .into_iter()
                .chain(mapping.ignore.iter().map(String::as_str))
                .collect();
            let features: Vec<(usize, String)> = match &mapping.features {
                Some(list) => list.iter().map(|f| (col(f), f.clone())).collect(),
                None => headers
                    .iter()
                    .enumerate()
                    .filter(|(_, h)| !mapped.contains(h.as_str()))
                    .map(|(i, h)| (i, h.clone()))
                    .collect(),
            };
            let statics: Vec<(usize, String)> =
                mapping.statics.iter().map(|s| (col(s), s.clone())).collect();
            (features, statics, None)
        }
        Layout::Long => {
            let (Some(fc), Some(vc)) = (&mapping.feature_column, &mapping.value_column) else {
                return Err(Error::Schema(
                    "long layout needs `feature_column` and `value_column`".into(),
                ));
            };
            let sc = mapping.static_column.as_deref().map(col);
            (Vec::new(), Vec::new(), Some((col(fc), col(vc), sc)))
        }
    };

    let static_names: HashSet<&str> = mapping.statics.iter().map(String::as_str).collect();
    let mut feature_names: Vec<String> = match mapping.layout {
        Layout::Wide => static_cols
            .iter()
            .chain(feature_cols.iter())
            .map(|(_, n)| n.clone())
            .collect(),
        Layout::Long => Vec::new(),
    };
    let mut known_features: HashSet<String> = feature_names.iter().cloned().collect();

    let mut rows: Vec<RawEvent> = Vec::new();
    let mut patients: BTreeMap<String, PatientAcc> = BTreeMap::new();
    let mut static_seen: HashMap<(String, String), f64> = HashMap::new();
    let mut last_pid: Option<String> = None;
    let mut skipped_no_time = 0usize;
    let mut dropped_text = 0usize;

    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_parse_error(e, line))?;
        let parse_err = |message: String| Error::Parse { row: line, message };

        let pid_raw = record.get(pid_col).unwrap_or("").trim();
        let pid = if pid_raw.is_empty() {
            match (&last_pid, mapping.fill_patient_id) {
                (Some(p), true) => p.clone(),
                _ => return Err(parse_err("empty patient id".into())),
            }
        } else {
            pid_raw.to_string()
        };
        last_pid = Some(pid.clone());
        let acc = patients.entry(pid.clone()).or_default();

        if let Some(c) = outcome_col {
            if let Some(o) = parse_outcome(&record[c]).map_err(parse_err)? {
                match acc.outcome {
                    Some(prev) if prev != o => {
                        return Err(Error::Schema(format!(
                            "patient `{pid}` has conflicting outcomes (row {line})"
                        )))
                    }
                    _ => acc.outcome = Some(o),
                }
            }
        }
        if let Some(c) = los_col {
            if let Cell::Number(v) = parse_cell(&record[c]) {
                acc.los.get_or_insert(v);
            }
        }
        if let Some(c) = discharge_col {
            if let Some(t) = parse_time(&record[c], mapping).map_err(parse_err)? {
                acc.discharge.get_or_insert(t);
            }
        }

        for (c, name) in &static_cols {
            if let Cell::Number(v) = parse_cell(&record[*c]) {
                let key = (pid.clone(), name.clone());
                match static_seen.get(&key) {
                    Some(prev) if *prev != v => log::warn!(
                        "patient `{pid}`: static `{name}` changes from {prev} to {v}; keeping the first value"
                    ),
                    Some(_) => {}
                    None => {
                        static_seen.insert(key, v);
                        rows.push(RawEvent {
                            patient_id: pid.clone(),
                            timestamp: 0.0,
                            feature: name.clone(),
                            value: Some(v),
                            outcome: None,
                            total_los: None,
                            is_static: true,
                        });
                    }
                }
            }
        }

        let time = parse_time(&record[ts_col], mapping).map_err(parse_err)?;

        if let Some((fc, vc, sc)) = long_cols {
            let name = record[fc].trim().to_string();
            if name.is_empty() {
                return Err(parse_err("empty feature name".into()));
            }
            let is_static = match sc {
                Some(sc) => matches!(parse_cell(&record[sc]), Cell::Number(v) if v != 0.0),
                None => static_names.contains(name.as_str()),
            };
            let value = match parse_cell(&record[vc]) {
                Cell::Missing => None,
                Cell::Number(v) => Some(v),
                Cell::Text => {
                    dropped_text += 1;
                    continue;
                }
            };
            if is_static {
                let key = (pid.clone(), name.clone());
                if static_seen.contains_key(&key) {
                    continue;
                }
                static_seen.insert(key, value.unwrap_or(f64::NAN));
            } else if time.is_none() {
                skipped_no_time += 1;
                continue;
            }
            if known_features.insert(name.clone()) {
                feature_names.push(name.clone());
            }
            rows.push(RawEvent {
                patient_id: pid,
                timestamp: if is_static { 0.0 } else { time.unwrap_or(0.0) },
                feature: name,
                value,
                outcome: None,
                total_los: None,
                is_static,
            });
            continue;
        }

        let Some(time) = time else {
            skipped_no_time += 1;
            continue;
        };
        let mut produced = false;
        for (c, name) in &feature_cols {
            match parse_cell(&record[*c]) {
                Cell::Missing => {}
                Cell::Text => dropped_text += 1,
                Cell::Number(v) => {
                    produced = true;
                    rows.push(RawEvent {
                        patient_id: pid.clone(),
                        timestamp: time,
                        feature: name.clone(),
                        value: Some(v),
                        outcome: None,
                        total_los: None,
                        is_static: false,
                    });
                }
            }
        }
        if produced {
            let acc = patients.get_mut(&pid).expect("inserted above");
            acc.first_time = Some(acc.first_time.map_or(time, |t| t.min(time)));
        }
    }

    if skipped_no_time > 0 {
        log::warn!("skipped {skipped_no_time} row(s) without a timestamp");
    }
    if dropped_text > 0 {
        log::warn!("dropped {dropped_text} non-numeric feature value(s)");
    }

    // Long layout tracks first times here since rows are per feature.
    if long_cols.is_some() {
        for ev in rows.iter().filter(|e| !e.is_static) {
            let acc = patients.get_mut(&ev.patient_id).expect("patient registered");
            acc.first_time = Some(acc.first_time.map_or(ev.timestamp, |t| t.min(ev.timestamp)));
        }
    }

    for ev in &mut rows {
        let acc = &patients[&ev.patient_id];
        ev.outcome = acc.outcome;
        let first = acc.first_time.unwrap_or(0.0);
        ev.total_los = acc.los.or_else(|| acc.discharge.map(|d| (d - first).max(0.0)));
        if !ev.is_static {
            ev.timestamp -= first;
        }
    }

    RawEventTable::new(rows, feature_names, mapping.dataset_tag, TimeBase::DaysSinceFirst)
}

fn csv_parse_error(e: csv::Error, fallback_row: usize) -> Error {
    let row = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_row);
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

/// Name of the feature that carries the planted mortality signal in synthetic cohorts.
pub const SIGNAL_FEATURE: &str = "x0";
/// Name of the feature that tracks remaining length of stay in synthetic cohorts.
pub const LOS_MARKER_FEATURE: &str = "x1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub n_features: usize,
    /// Probability that a (day, feature) cell is missing.
    pub missing_rate: f64,
    pub los_min: u32,
    pub los_max: u32,
    pub mortality_rate: f64,
    /// Mean shift (in noise standard deviations) of the signal feature between outcomes.
    pub signal_strength: f64,
    /// Probability that a day after the first carries a record.
    pub record_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_patients: 300,
            n_features: 5,
            missing_rate: 0.2,
            los_min: 2,
            los_max: 20,
            mortality_rate: 0.4,
            signal_strength: 1.5,
            record_rate: 0.7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.n_features == 0 {
            return Err(Error::Argument(
                "synthetic cohort needs at least one patient and one feature".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Argument(format!(
                "missing_rate must be in [0, 1), got {}",
                self.missing_rate
            )));
        }
        if self.los_min == 0 || self.los_max < self.los_min {
            return Err(Error::Argument(format!(
                "invalid LOS range [{}, {}]",
                self.los_min, self.los_max
            )));
        }
        for (name, p) in [
            ("mortality_rate", self.mortality_rate),
            ("record_rate", self.record_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !self.signal_strength.is_finite() || self.signal_strength < 0.0 {
            return Err(Error::Argument("signal_strength must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Generates a cohort with a planted, monotone mortality signal on [`SIGNAL_FEATURE`]: its
/// mean rises with the outcome by `signal_strength` and drifts further apart over the stay.
/// [`LOS_MARKER_FEATURE`] (when `n_features >= 2`) tracks the remaining days.
pub fn synthesize_cohort(spec: &SyntheticSpec, seed: u64) -> Result<RawEventTable> {
    spec.validate()?;
    let mut rng = seeded(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut feature_names = vec!["age".to_string(), "gender".to_string()];
    feature_names.extend((0..spec.n_features).map(|j| format!("x{j}")));
    let width = spec.n_patients.to_string().len().max(4);

    let mut rows = Vec::new();
    for p in 0..spec.n_patients {
        let pid = format!("P{:0width$}", p + 1);
        let dead = rng.gen_bool(spec.mortality_rate);
        let los = rng.gen_range(spec.los_min..=spec.los_max);
        let sign = if dead { 1.0 } else { -1.0 };
        let s = spec.signal_strength;
        let patient_effect: Vec<f64> = (0..spec.n_features)
            .map(|_| 0.5 * noise.sample(&mut rng))
            .collect();

        let event = |feature: String, timestamp: f64, value: Option<f64>, is_static: bool| RawEvent {
            patient_id: pid.clone(),
            timestamp,
            feature,
            value,
            outcome: Some(dead),
            total_los: Some(f64::from(los)),
            is_static,
        };

        let age = 60.0 + 4.0 * s * sign + 12.0 * noise.sample(&mut rng);
        let gender = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        rows.push(event("age".into(), 0.0, Some(age.clamp(18.0, 100.0)), true));
        rows.push(event("gender".into(), 0.0, Some(gender), true));

        for day in 1..=los {
            if day > 1 && !rng.gen_bool(spec.record_rate) {
                continue;
            }
            let offset = if day == 1 { 0.0 } else { rng.gen_range(0.0..0.5) };
            let ts = f64::from(day - 1) + offset;
            let progress = f64::from(day) / f64::from(los);
            for j in 0..spec.n_features {
                let base = patient_effect[j] + noise.sample(&mut rng);
                let v = match j {
                    0 => base + s * sign * (0.5 + 0.5 * progress),
                    1 => base + 0.3 * f64::from(los - day),
                    _ => base,
                };
                let observed = !rng.gen_bool(spec.missing_rate);
                rows.push(event(format!("x{j}"), ts, observed.then_some(v), false));
            }
        }
    }
    RawEventTable::new(rows, feature_names, DatasetTag::Generic, TimeBase::DaysSinceFirst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wide_mapping() -> ColumnMapping {
        ColumnMapping {
            patient_id: "pid".into(),
            timestamp: "t".into(),
            time_unit: TimeUnit::Days,
            datetime_format: default_datetime_format(),
            outcome: Some("dead".into()),
            los: None,
            discharge: None,
            statics: vec![],
            layout: Layout::Wide,
            features: None,
            ignore: vec![],
            feature_column: None,
            value_column: None,
            static_column: None,
            fill_patient_id: false,
            dataset_tag: DatasetTag::Generic,
        }
    }

    #[test]
    fn wide_rows_unpivot_to_non_empty_cells() {
        let csv = "pid,t,dead,a,b,c\n1,0,0,1.0,2.0,3.0\n1,1,0,4.0,,6.0\n";
        let table = load_csv_from(csv.as_bytes(), &wide_mapping()).unwrap();
        assert_eq!(table.rows.len(), 5);
        assert_eq!(table.feature_names, vec!["a", "b", "c"]);
        assert!(table.rows.iter().all(|e| e.outcome == Some(false)));
    }

    #[test]
    fn na_and_nan_are_missing_and_text_is_dropped() {
        let csv = "pid,t,dead,a,b\n1,0,1,NA,nan\n1,1,1,positive,2\n";
        let table = load_csv_from(csv.as_bytes(), &wide_mapping()).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].value, Some(2.0));
        // only record day rebases to zero
        assert_eq!(table.rows[0].timestamp, 0.0);
    }

    #[test]
    fn conflicting_outcome_is_a_schema_error() {
        let csv = "pid,t,dead,a\n1,0,0,1\n1,1,1,2\n";
        let err = load_csv_from(csv.as_bytes(), &wide_mapping()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn unknown_mapped_column_is_a_schema_error() {
        let mut m = wide_mapping();
        m.outcome = Some("outcome".into());
        let err = load_csv_from("pid,t,a\n1,0,1\n".as_bytes(), &m).unwrap_err();
        assert!(matches!(err, Error::Schema(ref s) if s.contains("outcome")), "{err}");
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let csv = "pid,t,dead,a\n1,0,0,1\n1,1,0\n";
        match load_csv_from(csv.as_bytes(), &wide_mapping()).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn timestamps_rebase_per_patient_and_statics_dedupe() {
        let mut m = wide_mapping();
        m.statics = vec!["age".into()];
        m.los = Some("los".into());
        let csv = "pid,t,dead,los,age,a\n1,5.5,0,4,50,1\n1,6.5,0,4,50,2\n2,2,1,3,70,3\n";
        let t = load_csv_from(csv.as_bytes(), &m).unwrap();
        let p1: Vec<f64> = t
            .rows
            .iter()
            .filter(|e| e.patient_id == "1" && !e.is_static)
            .map(|e| e.timestamp)
            .collect();
        assert_eq!(p1, vec![0.0, 1.0]);
        assert_eq!(t.rows.iter().filter(|e| e.is_static).count(), 2);
        assert_eq!(t.static_features(), vec!["age"]);
        assert_eq!(t.dynamic_features(), vec!["a"]);
        assert!(t.rows.iter().all(|e| e.total_los.is_some()));
    }

    #[test]
    fn datetime_and_discharge_give_los_in_days() {
        let mut m = wide_mapping();
        m.time_unit = TimeUnit::Datetime;
        m.discharge = Some("out".into());
        m.fill_patient_id = true;
        let csv = "pid,t,dead,out,a\n\
                   7,2020-01-01 06:00:00,1,2020-01-04 18:00:00,1\n\
                   ,2020-01-02 06:00:00,1,2020-01-04 18:00:00,2\n";
        let t = load_csv_from(csv.as_bytes(), &m).unwrap();
        assert_eq!(t.patient_ids(), vec!["7"]);
        assert_eq!(t.rows[1].timestamp, 1.0);
        assert_eq!(t.rows[0].total_los, Some(3.5));
    }

    #[test]
    fn synthetic_spec_rejects_zero_counts() {
        let spec = SyntheticSpec {
            n_patients: 0,
            ..Default::default()
        };
        assert!(matches!(synthesize_cohort(&spec, 1), Err(Error::Argument(_))));
        let spec = SyntheticSpec {
            n_features: 0,
            ..Default::default()
        };
        assert!(matches!(synthesize_cohort(&spec, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn synthetic_without_missingness_has_no_missing_values() {
        let spec = SyntheticSpec {
            n_patients: 40,
            missing_rate: 0.0,
            ..Default::default()
        };
        let t = synthesize_cohort(&spec, 3).unwrap();
        assert!(t.rows.iter().all(|e| e.value.is_some()));
    }
}
