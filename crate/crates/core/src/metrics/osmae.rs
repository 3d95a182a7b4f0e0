//! Outcome-specific MAE.
//!
//! For a record at day `t` of a stay of length `L`:
//!
//! ```text
//! OSMAE = eps * (max(E - yhat_l, 0) + max(E - y_l, 0))   if the predicted outcome is wrong
//!         eps * |yhat_l - y_l|                           otherwise
//! eps   = t / (E - L + gamma)    for 0 < t <= L - gamma  (clamped to <= 1 by default)
//!         1                      for t > L - gamma
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricConfig, PredictionTrace};
use crate::numeric::{compensated_sum, quantile};

/// How the early-branch penalty is bounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// `eps = min(t / (E - L + gamma), 1)`.
    #[default]
    Clamped,
    /// The raw ratio, which can exceed 1 when `L - gamma > E - L + gamma`.
    Unclamped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub value: f64,
    /// `E - L + gamma <= 0` in the early branch; the penalty was forced to 1.
    pub degenerate: bool,
}

/// The reference horizon `E`: 95th percentile (linear interpolation) of total LOS.
pub fn compute_e(los: &[f64]) -> Result<f64> {
    quantile(los, 0.95).ok_or_else(|| Error::Argument("cannot compute E from no stays".into()))
}

pub fn penalty(t: u32, total_los: u32, cfg: &MetricConfig) -> Penalty {
    let late = i64::from(t) > i64::from(total_los) - i64::from(cfg.gamma);
    if late {
        return Penalty {
            value: 1.0,
            degenerate: false,
        };
    }
    let denom = cfg.e - f64::from(total_los) + f64::from(cfg.gamma);
    if denom <= 0.0 {
        return Penalty {
            value: 1.0,
            degenerate: true,
        };
    }
    let ratio = f64::from(t) / denom;
    let value = match cfg.epsilon {
        EpsilonMode::Clamped => ratio.min(1.0),
        EpsilonMode::Unclamped => ratio,
    };
    Penalty {
        value,
        degenerate: false,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn osmae_record(
    predicted_death: bool,
    death: bool,
    predicted_los: f64,
    los: f64,
    t: u32,
    total_los: u32,
    cfg: &MetricConfig,
) -> f64 {
    let eps = penalty(t, total_los, cfg).value;
    if predicted_death != death {
        eps * ((cfg.e - predicted_los).max(0.0) + (cfg.e - los).max(0.0))
    } else {
        eps * (predicted_los - los).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsmaeSummary {
    pub value: f64,
    pub records: usize,
    pub degenerate: usize,
}

/// Record-level mean of [`osmae_record`] over every (patient, timestep).
pub fn osmae_aggregate(traces: &[PredictionTrace], cfg: &MetricConfig) -> Result<OsmaeSummary> {
    cfg.validate()?;
    let mut values = Vec::new();
    let mut degenerate = 0;
    for tr in traces {
        tr.validate()?;
        for (s, &y_l) in tr.steps.iter().zip(&tr.remaining_los) {
            let (Some(risk), Some(pred_los)) = (s.risk, s.predicted_los) else {
                return Err(Error::Metric(format!(
                    "OSMAE needs both risk and LOS predictions (patient `{}`, t={})",
                    tr.patient_id, s.t
                )));
            };
            if s.t == 0 || s.t > tr.total_los {
                return Err(Error::Metric(format!(
                    "patient `{}`: timestep {} outside 1..={}",
                    tr.patient_id, s.t, tr.total_los
                )));
            }
            if penalty(s.t, tr.total_los, cfg).degenerate {
                degenerate += 1;
            }
            values.push(osmae_record(
                cfg.predicts_death(risk),
                tr.outcome,
                pred_los,
                y_l,
                s.t,
                tr.total_los,
                cfg,
            ));
        }
    }
    if values.is_empty() {
        return Err(Error::Metric("OSMAE over zero records".into()));
    }
    if degenerate > 0 {
        log::warn!("{degenerate} record(s) had E - L + gamma <= 0; penalty forced to 1");
    }
    Ok(OsmaeSummary {
        value: compensated_sum(values.iter().copied()) / values.len() as f64,
        records: values.len(),
        degenerate,
    })
}
