use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictors::{selection_score, train, Family, PredictorSpec, Selection, TaskMode, TrainedModel};
use crate::preprocess::Cohort;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchPlan {
    pub family: Family,
    pub task_mode: TaskMode,
    /// Candidate values per hyperparameter.
    pub axes: BTreeMap<String, Vec<f64>>,
    /// Fixed hyperparameters shared by every candidate.
    #[serde(default)]
    pub base: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
    #[serde(default)]
    pub seed: u64,
}

impl GridSearchPlan {
    /// AUPRC when the plan predicts outcome only, MAE otherwise unless set explicitly.
    pub fn selection(&self) -> Selection {
        self.selection.unwrap_or(match self.task_mode {
            TaskMode::OutcomeOnly => Selection::Auprc,
            _ => Selection::Mae,
        })
    }

    /// The Cartesian product of the axes, axis names in sorted order with the last axis
    /// varying fastest.
    pub fn candidates(&self) -> Result<Vec<PredictorSpec>> {
        if self.axes.is_empty() || self.axes.values().any(Vec::is_empty) {
            return Err(Error::Argument("grid search needs non-empty axes".into()));
        }
        let mut combos: Vec<BTreeMap<String, f64>> = vec![self.base.clone()];
        for (name, values) in &self.axes {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |&v| {
                        let mut c = c.clone();
                        c.insert(name.clone(), v);
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|hyperparameters| {
                let spec = PredictorSpec {
                    family: self.family,
                    task_mode: self.task_mode,
                    hyperparameters,
                    seed: self.seed,
                    selection: self.selection,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub hyperparameters: BTreeMap<String, f64>,
    pub metric: Selection,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: PredictorSpec,
    pub model: TrainedModel,
    /// One row per candidate in enumeration order.
    pub leaderboard: Vec<LeaderboardRow>,
}

/// Trains every candidate on `train` and picks the best validation score on `val`. Ties go to
/// the earlier candidate; failed candidates are recorded and skipped.
pub fn grid_search(plan: &GridSearchPlan, train_cohort: &Cohort, val: &Cohort) -> Result<GridResult> {
    let selection = plan.selection();
    let candidates = plan.candidates()?;
    let outcomes: Vec<Result<(TrainedModel, f64)>> = candidates
        .par_iter()
        .map(|spec| {
            let model = train(spec, train_cohort, val)?;
            let score = selection_score(&model, val, selection)?;
            Ok((model, score))
        })
        .collect();
    let mut leaderboard = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, TrainedModel, f64)> = None;
    let mut last_error = None;
    for (i, (spec, outcome)) in candidates.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok((model, score)) => {
                leaderboard.push(LeaderboardRow {
                    hyperparameters: spec.hyperparameters.clone(),
                    metric: selection,
                    score: Some(score),
                    error: None,
                });
                if best.as_ref().map_or(!score.is_nan(), |b| selection.better(score, b.2)) {
                    best = Some((i, model, score));
                }
            }
            Err(e) => {
                log::warn!("grid candidate {:?} failed: {e}", spec.hyperparameters);
                leaderboard.push(LeaderboardRow {
                    hyperparameters: spec.hyperparameters.clone(),
                    metric: selection,
                    score: None,
                    error: Some(e.to_string()),
                });
                last_error = Some(e);
            }
        }
    }
    match best {
        Some((i, model, _)) => Ok(GridResult {
            best: candidates[i].clone(),
            model,
            leaderboard,
        }),
        None => Err(last_error.unwrap_or_else(|| Error::Training("every grid candidate failed".into()))),
    }
}
