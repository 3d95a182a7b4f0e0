//! Early prediction score for positive (died) patients.
//!
//! Each timestep of a positive patient is a true positive or a false negative. True
//! positives earn a per-step reward and false negatives a per-step penalty; the per-patient
//! total is normalized by the total of a perfect predictor and floored at -1. Negative
//! patients carry no score. The per-step shape lives behind [`EarlyScoring`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricConfig, PredictionTrace};
use crate::numeric::compensated_sum;

/// Per-timestep reward/penalty. `step` is 1-based and `len` is the number of recorded
/// timesteps of the patient.
pub trait EarlyScoring {
    fn true_positive(&self, step: usize, len: usize, gamma: u32) -> f64;
    fn false_negative(&self, step: usize, len: usize, gamma: u32) -> f64;
}

/// Full reward until the last `gamma` steps, then linear decay to 0 at the final step;
/// misses are free until the last `gamma` steps, then cost linearly more, reaching -1 at the
/// final step. `gamma = 0` takes the limit `gamma -> 0+`, which coincides with `gamma = 1`:
/// the final step still carries the late-miss penalty of -1 and no reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearDecay;

impl LinearDecay {
    /// Position inside the decay window: `(len - step) / gamma`, or `None` before it.
    fn remaining_fraction(step: usize, len: usize, gamma: u32) -> Option<f64> {
        let g = gamma.max(1) as usize;
        (step + g > len).then(|| (len - step) as f64 / g as f64)
    }
}

impl EarlyScoring for LinearDecay {
    fn true_positive(&self, step: usize, len: usize, gamma: u32) -> f64 {
        Self::remaining_fraction(step, len, gamma).unwrap_or(1.0)
    }

    fn false_negative(&self, step: usize, len: usize, gamma: u32) -> f64 {
        Self::remaining_fraction(step, len, gamma).map_or(0.0, |f| f - 1.0)
    }
}

/// [`LinearDecay`] for `gamma >= 1`. At `gamma = 0` every true positive earns 1 and only a
/// miss at the final step is penalized (-1). Unlike the limit convention this is not
/// monotone in `gamma`: a patient missed only at the final step scores higher at `gamma = 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatAtZero;

impl EarlyScoring for FlatAtZero {
    fn true_positive(&self, step: usize, len: usize, gamma: u32) -> f64 {
        if gamma == 0 {
            1.0
        } else {
            LinearDecay.true_positive(step, len, gamma)
        }
    }

    fn false_negative(&self, step: usize, len: usize, gamma: u32) -> f64 {
        if gamma == 0 {
            if step == len {
                -1.0
            } else {
                0.0
            }
        } else {
            LinearDecay.false_negative(step, len, gamma)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EsOutcome {
    /// Negative patient: no score.
    NotApplicable,
    /// Positive patient whose perfect-predictor total is not positive.
    Excluded,
    Score(f64),
}

pub fn es_patient_with<S: EarlyScoring>(
    trace: &PredictionTrace,
    cfg: &MetricConfig,
    scoring: &S,
) -> Result<EsOutcome> {
    if !trace.outcome {
        return Ok(EsOutcome::NotApplicable);
    }
    let len = trace.steps.len();
    let mut total = Vec::with_capacity(len);
    let mut optimal = Vec::with_capacity(len);
    for (i, s) in trace.steps.iter().enumerate() {
        let step = i + 1;
        let risk = s.risk.ok_or_else(|| {
            Error::Metric(format!("ES needs risk predictions (patient `{}`)", trace.patient_id))
        })?;
        let tp = scoring.true_positive(step, len, cfg.gamma);
        optimal.push(tp);
        total.push(if cfg.predicts_death(risk) {
            tp
        } else {
            scoring.false_negative(step, len, cfg.gamma)
        });
    }
    let optimal = compensated_sum(optimal);
    if optimal <= 0.0 {
        return Ok(EsOutcome::Excluded);
    }
    Ok(EsOutcome::Score((compensated_sum(total) / optimal).max(-1.0)))
}

/// Normalized score of one positive patient under [`LinearDecay`]; `None` for negative or
/// excluded patients.
pub fn es_patient(trace: &PredictionTrace, cfg: &MetricConfig) -> Result<Option<f64>> {
    Ok(match es_patient_with(trace, cfg, &LinearDecay)? {
        EsOutcome::Score(v) => Some(v),
        _ => None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsSummary {
    pub value: f64,
    pub scored: usize,
    pub excluded: usize,
}

pub fn es_aggregate_with<S: EarlyScoring>(
    traces: &[PredictionTrace],
    cfg: &MetricConfig,
    scoring: &S,
) -> Result<EsSummary> {
    let mut scores = Vec::new();
    let mut excluded = 0;
    for tr in traces {
        match es_patient_with(tr, cfg, scoring)? {
            EsOutcome::Score(v) => scores.push(v),
            EsOutcome::Excluded => excluded += 1,
            EsOutcome::NotApplicable => {}
        }
    }
    if scores.is_empty() {
        return Err(Error::Metric(format!(
            "no scorable positive patients ({excluded} excluded)"
        )));
    }
    Ok(EsSummary {
        value: compensated_sum(scores.iter().copied()) / scores.len() as f64,
        scored: scores.len(),
        excluded,
    })
}

/// Mean normalized score over positive, non-excluded patients.
pub fn es_aggregate(traces: &[PredictionTrace], cfg: &MetricConfig) -> Result<EsSummary> {
    es_aggregate_with(traces, cfg, &LinearDecay)
}
