use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Recorded day index.
    pub t: u32,
    /// Mortality probability; `None` when the model has no outcome head.
    pub risk: Option<f64>,
    /// Predicted remaining LOS in raw days; `None` when the model has no LOS head.
    pub predicted_los: Option<f64>,
}

/// One patient's per-timestep predictions together with the ground truth they are scored
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub patient_id: String,
    pub steps: Vec<TraceStep>,
    pub outcome: bool,
    pub total_los: u32,
    /// True remaining LOS at each step.
    pub remaining_los: Vec<f64>,
}

impl PredictionTrace {
    pub fn validate(&self) -> Result<()> {
        if self.steps.len() != self.remaining_los.len() {
            return Err(Error::Argument(format!(
                "trace for `{}` has {} steps but {} LOS labels",
                self.patient_id,
                self.steps.len(),
                self.remaining_los.len()
            )));
        }
        for s in &self.steps {
            if let Some(r) = s.risk {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::Argument(format!(
                        "trace for `{}` has risk {r} outside [0, 1] at t={}",
                        self.patient_id, s.t
                    )));
                }
            }
            if s.predicted_los.is_some_and(|l| !l.is_finite() || l < 0.0) {
                return Err(Error::Argument(format!(
                    "trace for `{}` has invalid predicted LOS at t={}",
                    self.patient_id, s.t
                )));
            }
        }
        Ok(())
    }
}

/// A row of the exchange CSV (`patient_id,t,risk,predicted_los`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub patient_id: String,
    pub t: u32,
    pub risk: Option<f64>,
    pub predicted_los: Option<f64>,
}

pub fn write_traces<W: Write>(traces: &[PredictionTrace], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "t", "risk", "predicted_los"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for tr in traces {
        for s in &tr.steps {
            w.write_record([
                tr.patient_id.clone(),
                s.t.to_string(),
                opt(s.risk),
                opt(s.predicted_los),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<trace writer>", e))?;
    Ok(())
}

pub fn write_traces_file(traces: &[PredictionTrace], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_traces(traces, f)
}

/// Reads exchange rows grouped by patient, in file order within each patient.
pub fn read_trace_rows<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<TraceRow>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["patient_id", "t", "risk", "predicted_los"];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(Error::Schema(format!(
            "trace CSV header must be `{}`, got `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: BTreeMap<String, Vec<TraceRow>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |message: String| Error::Parse { row, message };
        let opt = |s: &str| -> Result<Option<f64>> {
            let s = s.trim();
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| bad(format!("`{s}` is not a number")))
            }
        };
        let t = rec[1]
            .trim()
            .parse::<u32>()
            .map_err(|_| bad(format!("t `{}` is not a day index", &rec[1])))?;
        let tr = TraceRow {
            patient_id: rec[0].trim().to_string(),
            t,
            risk: opt(&rec[2])?,
            predicted_los: opt(&rec[3])?,
        };
        out.entry(tr.patient_id.clone()).or_default().push(tr);
    }
    Ok(out)
}

pub fn read_trace_rows_file(path: &Path) -> Result<BTreeMap<String, Vec<TraceRow>>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace_rows(f)
}
