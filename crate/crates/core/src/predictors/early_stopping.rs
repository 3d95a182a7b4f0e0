use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Validation criterion used for early stopping and grid search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Record-level AUPRC of the mortality head; higher is better.
    Auprc,
    /// Record-level MAE of the LOS head in days; lower is better.
    Mae,
    /// Mean validation loss; lower is better. Used when AUPRC is undefined on the validation
    /// partition (no positive patients).
    ValLoss,
}

impl Selection {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Selection::Auprc)
    }

    /// Whether `a` is strictly better than `b`. NaN is never better.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_score: f64,
}

/// An iteratively trained model.
pub trait Iterative {
    type Snapshot;
    /// Runs one epoch and returns its training loss.
    fn step(&mut self, epoch: usize) -> Result<f64>;
    fn validation_score(&self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            max_epochs: 100,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stopped<S> {
    pub best: S,
    pub best_epoch: usize,
    pub best_score: f64,
    pub log: Vec<EpochRecord>,
}

/// Trains until `patience` consecutive epochs fail to improve the validation score, or
/// `max_epochs` is reached, and returns the best-scoring snapshot.
pub fn fit_with_early_stopping<T: Iterative>(
    trainer: &mut T,
    rule: StoppingRule,
    selection: Selection,
) -> Result<Stopped<T::Snapshot>> {
    if rule.max_epochs == 0 || rule.patience == 0 {
        return Err(Error::Argument("epochs and patience must be positive".into()));
    }
    let mut log = Vec::new();
    let mut best: Option<(T::Snapshot, usize, f64)> = None;
    let mut stale = 0;
    for epoch in 1..=rule.max_epochs {
        let train_loss = trainer.step(epoch)?;
        let score = trainer.validation_score()?;
        log.push(EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            val_score: score,
        });
        let improved = match &best {
            None => !score.is_nan(),
            Some((_, _, b)) => selection.better(score, *b),
        };
        if improved {
            best = Some((trainer.snapshot(), epoch, score));
            stale = 0;
        } else {
            stale += 1;
            if stale >= rule.patience {
                break;
            }
        }
    }
    let (best, best_epoch, best_score) = best.ok_or_else(|| {
        Error::Training("validation score was never finite; no snapshot to return".into())
    })?;
    Ok(Stopped {
        best,
        best_epoch,
        best_score,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        scores: Vec<f64>,
        epoch: usize,
    }

    impl Iterative for Scripted {
        type Snapshot = usize;
        fn step(&mut self, epoch: usize) -> Result<f64> {
            self.epoch = epoch;
            Ok(1.0 / epoch as f64)
        }
        fn validation_score(&self) -> Result<f64> {
            Ok(self.scores[self.epoch - 1])
        }
        fn snapshot(&self) -> usize {
            self.epoch
        }
    }

    fn run(scores: Vec<f64>, selection: Selection) -> Stopped<usize> {
        let mut t = Scripted { scores, epoch: 0 };
        fit_with_early_stopping(&mut t, StoppingRule::default(), selection).unwrap()
    }

    #[test]
    fn steady_improvement_runs_every_epoch() {
        let s = run((1..=100).map(|e| e as f64).collect(), Selection::Auprc);
        assert_eq!((s.log.len(), s.best), (100, 100));
    }

    #[test]
    fn constant_score_stops_after_patience() {
        let s = run(vec![0.5; 100], Selection::Auprc);
        assert_eq!((s.log.len(), s.best), (11, 1));
    }

    #[test]
    fn snapshot_is_the_logged_optimum() {
        let scores = vec![3.0, 2.0, 2.5, 1.0, 1.2, 4.0, 1.0, 5.0, 6.0, 7.0, 8.0, 9.0, 9.5, 9.9, 9.0];
        let s = run(scores, Selection::Mae);
        let min = s.log.iter().map(|r| r.val_score).fold(f64::INFINITY, f64::min);
        assert_eq!(s.best_score, min);
        assert_eq!(s.best, 4);
    }
}
