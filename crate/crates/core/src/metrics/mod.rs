//! Evaluation metrics over per-timestep prediction traces.

pub mod classification;
pub mod early;
pub mod osmae;
pub mod regression;
pub mod trace;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use classification::{accuracy, auprc, auroc};
pub use early::{
    es_aggregate, es_aggregate_with, es_patient, es_patient_with, EarlyScoring, EsOutcome, EsSummary, FlatAtZero,
    LinearDecay,
};
pub use osmae::{compute_e, osmae_aggregate, osmae_record, penalty, EpsilonMode, OsmaeSummary};
pub use regression::{mae, mse, rmse};
pub use trace::{PredictionTrace, TraceRow, TraceStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    EarlyMortality,
    OutcomeSpecificLos,
}

/// Which patients the horizon `E` is computed from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EScope {
    #[default]
    TrainPartition,
    Cohort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Penalty threshold in days.
    pub gamma: u32,
    /// Reference horizon in days (95th percentile of total LOS).
    pub e: f64,
    pub classification_threshold: f64,
    pub epsilon: EpsilonMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            gamma: 2,
            e: 1.0,
            classification_threshold: 0.5,
            epsilon: EpsilonMode::Clamped,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0 && self.e.is_finite()) {
            return Err(Error::Argument(format!("E must be positive, got {}", self.e)));
        }
        let t = self.classification_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Argument(format!("threshold must be in (0, 1), got {t}")));
        }
        Ok(())
    }

    pub fn predicts_death(&self, risk: f64) -> bool {
        risk >= self.classification_threshold
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub patients: usize,
    pub records: usize,
    pub positive_patients: usize,
    pub es_scored: usize,
    pub es_excluded: usize,
    pub degenerate_penalty: usize,
}

/// Metric values in natural units (fractions, days). Scaling for presentation happens in the
/// report layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub metrics: BTreeMap<String, f64>,
    pub counts: ReportCounts,
    pub config: MetricConfig,
    pub e_scope: EScope,
    /// Metrics that could not be computed, with the reason.
    pub skipped: BTreeMap<String, String>,
}

pub const CLASSIFICATION_METRICS: [&str; 4] = ["accuracy", "auroc", "auprc", "es"];
pub const REGRESSION_METRICS: [&str; 4] = ["mae", "mse", "rmse", "osmae"];

/// Computes every metric the traces support.
pub fn evaluate(
    traces: &[PredictionTrace],
    cfg: &MetricConfig,
    task: Task,
    e_scope: EScope,
) -> Result<MetricReport> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::Metric("no traces to evaluate".into()));
    }
    for tr in traces {
        tr.validate()?;
    }
    let steps = || traces.iter().flat_map(|tr| tr.steps.iter().map(move |s| (tr, s)));
    let mut counts = ReportCounts {
        patients: traces.len(),
        records: steps().count(),
        positive_patients: traces.iter().filter(|t| t.outcome).count(),
        ..Default::default()
    };
    let mut metrics = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    let mut record = |name: &str, r: Result<f64>| match r {
        Ok(v) => {
            metrics.insert(name.to_string(), v);
        }
        Err(e) => {
            skipped.insert(name.to_string(), e.to_string());
        }
    };

    let risks: Option<Vec<f64>> = steps().map(|(_, s)| s.risk).collect();
    let labels: Vec<bool> = steps().map(|(tr, _)| tr.outcome).collect();
    match &risks {
        Some(risks) => {
            record("accuracy", accuracy(risks, &labels, cfg.classification_threshold));
            record("auroc", auroc(risks, &labels));
            record("auprc", auprc(risks, &labels));
            let es = es_aggregate(traces, cfg);
            if let Ok(s) = &es {
                counts.es_scored = s.scored;
                counts.es_excluded = s.excluded;
            }
            record("es", es.map(|s| s.value));
        }
        None => {
            for m in CLASSIFICATION_METRICS {
                record(m, Err(Error::Metric("traces carry no risk predictions".into())));
            }
        }
    }

    let los_pred: Option<Vec<f64>> = steps().map(|(_, s)| s.predicted_los).collect();
    let los_true: Vec<f64> = traces.iter().flat_map(|t| t.remaining_los.iter().copied()).collect();
    match &los_pred {
        Some(pred) => {
            record("mae", mae(pred, &los_true));
            record("mse", mse(pred, &los_true));
            record("rmse", rmse(pred, &los_true));
            let os = osmae_aggregate(traces, cfg);
            if let Ok(s) = &os {
                counts.degenerate_penalty = s.degenerate;
            }
            record("osmae", os.map(|s| s.value));
        }
        None => {
            for m in REGRESSION_METRICS {
                record(m, Err(Error::Metric("traces carry no LOS predictions".into())));
            }
        }
    }

    Ok(MetricReport {
        task,
        metrics,
        counts,
        config: *cfg,
        e_scope,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: u32,
    pub osmae: Option<f64>,
    pub es: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweep {
    pub rows: Vec<GammaRow>,
    /// Observed trends; reported, not enforced.
    pub es_non_increasing: bool,
    pub osmae_non_decreasing: bool,
}

/// OSMAE and ES at each penalty threshold in `gammas`, other settings from `cfg`.
pub fn gamma_sweep(
    traces: &[PredictionTrace],
    gammas: impl IntoIterator<Item = u32>,
    cfg: &MetricConfig,
) -> Result<GammaSweep> {
    let mut rows = Vec::new();
    for gamma in gammas {
        let c = MetricConfig { gamma, ..*cfg };
        c.validate()?;
        rows.push(GammaRow {
            gamma,
            osmae: osmae_aggregate(traces, &c).ok().map(|s| s.value),
            es: es_aggregate(traces, &c).ok().map(|s| s.value),
        });
    }
    let pairs = |f: fn(&GammaRow) -> Option<f64>, ok: fn(f64, f64) -> bool| {
        rows.windows(2).all(|w| match (f(&w[0]), f(&w[1])) {
            (Some(a), Some(b)) => ok(a, b),
            _ => true,
        })
    };
    Ok(GammaSweep {
        es_non_increasing: pairs(|r| r.es, |a, b| b <= a + 1e-12),
        osmae_non_decreasing: pairs(|r| r.osmae, |a, b| b >= a - 1e-12),
        rows,
    })
}
