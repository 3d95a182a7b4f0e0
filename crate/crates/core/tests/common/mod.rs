#![allow(dead_code)]

use std::collections::BTreeSet;

use ehrbench::ingest::synthesize_cohort;
use ehrbench::metrics::{PredictionTrace, TraceStep};
use ehrbench::preprocess::{run_pipeline, FittedTransform, PipelineConfig, Profile};
use ehrbench::{Cohort, PatientSeries, SyntheticSpec};

/// Synthetic cohort through the identity pipeline, not yet normalized.
pub fn synthetic_cohort(spec: &SyntheticSpec, seed: u64) -> Cohort {
    let table = synthesize_cohort(spec, seed).expect("synthesize");
    run_pipeline(table, &PipelineConfig::profile(Profile::Identity)).expect("pipeline")
}

/// Train/val/test cohorts with normalization fitted on the training ids.
pub fn fitted_partitions(
    cohort: &Cohort,
    train: &BTreeSet<String>,
    val: &BTreeSet<String>,
    test: &BTreeSet<String>,
) -> (Cohort, Cohort, Cohort) {
    let raw_train = cohort.subset(train);
    let refs: Vec<&PatientSeries> = raw_train.patients.iter().collect();
    let t = FittedTransform::fit(cohort, &refs, "train").expect("fit transform");
    (
        raw_train.apply_transform(&t).unwrap(),
        cohort.subset(val).apply_transform(&t).unwrap(),
        cohort.subset(test).apply_transform(&t).unwrap(),
    )
}

/// Ids of the patients whose position passes `keep`.
pub fn ids_where(cohort: &Cohort, keep: impl Fn(usize) -> bool) -> BTreeSet<String> {
    cohort
        .patients
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, p)| p.patient_id.clone())
        .collect()
}

/// A trace over days `1..=len` of a stay of length `total_los`, with remaining LOS `L - t`.
pub fn trace(id: &str, outcome: bool, total_los: u32, risks: &[f64], los: &[f64]) -> PredictionTrace {
    assert_eq!(risks.len(), los.len());
    let steps: Vec<TraceStep> = risks
        .iter()
        .zip(los)
        .enumerate()
        .map(|(i, (&r, &l))| TraceStep {
            t: i as u32 + 1,
            risk: Some(r),
            predicted_los: Some(l),
        })
        .collect();
    let remaining_los = (1..=risks.len() as u32).map(|t| f64::from(total_los - t)).collect();
    PredictionTrace {
        patient_id: id.into(),
        steps,
        outcome,
        total_los,
        remaining_los,
    }
}

/// Probability that a random positive outranks a random negative, ties counted 1/2.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Average precision by enumerating every distinct score as a threshold, highest first.
pub fn ap_thresholds(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for th in thresholds {
        let flagged: Vec<bool> = scores.iter().map(|&s| s >= th).collect();
        let tp = flagged.iter().zip(labels).filter(|(&f, &l)| f && l).count() as f64;
        let fp = flagged.iter().zip(labels).filter(|(&f, &l)| f && !l).count() as f64;
        let recall = tp / positives;
        if tp + fp > 0.0 {
            ap += tp / (tp + fp) * (recall - prev_recall);
        }
        prev_recall = recall;
    }
    ap
}

/// Per-step early score written out case by case from the scoring rule.
pub fn es_oracle(risks: &[f64], gamma: u32, threshold: f64) -> Option<f64> {
    let big_t = risks.len() as f64;
    let g = f64::from(gamma.max(1));
    let mut total = 0.0;
    let mut optimal = 0.0;
    for (i, &r) in risks.iter().enumerate() {
        let t = (i + 1) as f64;
        let (tp, fn_) = if t <= big_t - g {
            (1.0, 0.0)
        } else {
            ((big_t - t) / g, -(t - (big_t - g)) / g)
        };
        optimal += tp;
        total += if r >= threshold { tp } else { fn_ };
    }
    (optimal > 0.0).then(|| (total / optimal).max(-1.0))
}
