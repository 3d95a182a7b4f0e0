//! On-disk cohort layout:
//!
//! ```text
//! <dir>/metadata.json          feature names, stats, provenance, transform, per-patient labels
//! <dir>/patients/<NNNNN>.csv   day,remaining_los,<features...>; empty cell = missing
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::series::{Cohort, PatientSeries, ProvenanceStep};
use crate::preprocess::stats::FeatureStats;
use crate::preprocess::transform::FittedTransform;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PatientMeta {
    patient_id: String,
    file: String,
    outcome: bool,
    total_los: u32,
    statics: Vec<Option<f64>>,
    static_mask: Vec<bool>,
    mask: Vec<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    feature_names: Vec<String>,
    static_names: Vec<String>,
    feature_stats: Vec<FeatureStats>,
    provenance: Vec<ProvenanceStep>,
    transform: Option<FittedTransform>,
    patients: Vec<PatientMeta>,
}

fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    let pdir = dir.join("patients");
    fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut metas = Vec::with_capacity(cohort.patients.len());
    for (i, p) in cohort.patients.iter().enumerate() {
        let file = format!("{:05}.csv", i + 1);
        let path = pdir.join(&file);
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["day".to_string(), "remaining_los".to_string()];
        header.extend(cohort.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (k, row) in p.matrix.iter().enumerate() {
            let mut rec = vec![
                p.days[k].to_string(),
                p.remaining_los.get(k).map(|v| v.to_string()).unwrap_or_default(),
            ];
            rec.extend(row.iter().map(|&v| fmt_cell(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        metas.push(PatientMeta {
            patient_id: p.patient_id.clone(),
            file,
            outcome: p.outcome,
            total_los: p.total_los,
            statics: p.statics.iter().map(|v| (!v.is_nan()).then_some(*v)).collect(),
            static_mask: p.static_mask.clone(),
            mask: p.mask.clone(),
        });
    }
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        feature_names: cohort.feature_names.clone(),
        static_names: cohort.static_names.clone(),
        feature_stats: cohort.feature_stats.clone(),
        provenance: cohort.provenance.clone(),
        transform: cohort.transform.clone(),
        patients: metas,
    };
    let path = dir.join("metadata.json");
    fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

pub fn read_cohort(dir: &Path) -> Result<Cohort> {
    let path = dir.join("metadata.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Metadata = serde_json::from_slice(&bytes)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "cohort format version {} is not supported",
            meta.format_version
        )));
    }
    let nf = meta.feature_names.len();
    let mut patients = Vec::with_capacity(meta.patients.len());
    for pm in meta.patients {
        let path = dir.join("patients").join(&pm.file);
        let mut rdr = csv::Reader::from_path(&path)?;
        let (mut days, mut matrix, mut remaining) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |msg: &str| Error::Parse {
                row: line + 2,
                message: format!("{}: {msg}", path.display()),
            };
            if rec.len() != nf + 2 {
                return Err(bad("wrong number of columns"));
            }
            days.push(rec[0].parse::<u32>().map_err(|_| bad("bad day"))?);
            if !rec[1].is_empty() {
                remaining.push(rec[1].parse::<f64>().map_err(|_| bad("bad remaining_los"))?);
            }
            let row = (2..nf + 2)
                .map(|j| {
                    if rec[j].is_empty() {
                        Ok(f64::NAN)
                    } else {
                        rec[j].parse::<f64>().map_err(|_| bad("bad value"))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            matrix.push(row);
        }
        patients.push(PatientSeries {
            patient_id: pm.patient_id,
            days,
            matrix,
            mask: pm.mask,
            statics: pm.statics.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            static_mask: pm.static_mask,
            outcome: pm.outcome,
            total_los: pm.total_los,
            remaining_los: remaining,
        });
    }
    Ok(Cohort {
        patients,
        feature_names: meta.feature_names,
        static_names: meta.static_names,
        feature_stats: meta.feature_stats,
        provenance: meta.provenance,
        transform: meta.transform,
    })
}
