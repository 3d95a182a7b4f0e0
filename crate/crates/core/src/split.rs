//! Patient-level evaluation partitions: stratified k-fold and ratio holdout splits.
//!
//! Partition sizes come from largest-remainder apportionment (ties go to the later
//! partition). Class counts per partition are then rounded jointly so that every partition
//! has exactly its apportioned size and each class gets either the floor or the ceiling of
//! its proportional share, which keeps every partition within one patient of the cohort's
//! positive proportion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Cohort;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
    /// Stratum of each patient (`true` = death), kept so the plan can be re-split without
    /// the cohort.
    pub outcomes: BTreeMap<String, bool>,
}

impl FoldPlan {
    pub fn fold(&self, i: usize) -> BTreeSet<String> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == i)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTriple {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitTriple {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Largest-remainder apportionment of `n` items to `weights`. Equal remainders go to the
/// later index first.
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(b.cmp(&a))
    });
    for &j in order.iter().take(n.saturating_sub(assigned)) {
        sizes[j] += 1;
    }
    sizes
}

/// Class-by-partition counts with row sums `class_counts` and column sums `sizes`, each
/// cell the floor or ceiling of its proportional share.
pub fn stratified_allocation(class_counts: &[usize], sizes: &[usize]) -> Result<Vec<Vec<usize>>> {
    let n: usize = class_counts.iter().sum();
    if sizes.iter().sum::<usize>() != n {
        return Err(Error::Argument("partition sizes do not cover the cohort".into()));
    }
    if n == 0 {
        return Ok(vec![vec![0; sizes.len()]; class_counts.len()]);
    }
    let share = |c: usize, j: usize| class_counts[c] as f64 * sizes[j] as f64 / n as f64;
    let mut alloc: Vec<Vec<usize>> = (0..class_counts.len())
        .map(|c| (0..sizes.len()).map(|j| share(c, j).floor() as usize).collect())
        .collect();
    let mut deficit: Vec<usize> = (0..sizes.len())
        .map(|j| sizes[j] - alloc.iter().map(|row| row[j]).sum::<usize>())
        .collect();
    let mut leftover: Vec<(usize, usize)> = (0..class_counts.len())
        .map(|c| (c, class_counts[c] - alloc[c].iter().sum::<usize>()))
        .collect();
    // Realize the 0/1 extras greedily: largest leftover first, each into the partitions
    // with the largest remaining deficit (fractional share, then later index, breaks ties).
    leftover.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for (c, extra) in leftover {
        let mut cols: Vec<usize> = (0..sizes.len()).filter(|&j| deficit[j] > 0).collect();
        cols.sort_by(|&a, &b| {
            let (fa, fb) = (share(c, a).fract(), share(c, b).fract());
            deficit[b]
                .cmp(&deficit[a])
                .then(fb.total_cmp(&fa))
                .then(b.cmp(&a))
        });
        if cols.len() < extra {
            return Err(Error::Argument("no stratified allocation exists".into()));
        }
        for &j in cols.iter().take(extra) {
            alloc[c][j] += 1;
            deficit[j] -= 1;
        }
    }
    Ok(alloc)
}

/// Shuffles each class (sorted by id first, so input order does not matter) and deals it
/// into partitions of the given weights.
fn stratified_partition(
    labels: &[(String, bool)],
    weights: &[f64],
    seed: u64,
) -> Result<Vec<BTreeSet<String>>> {
    let mut classes: [Vec<&String>; 2] = [Vec::new(), Vec::new()];
    for (id, outcome) in labels {
        classes[usize::from(*outcome)].push(id);
    }
    let mut rng = seeded(seed);
    for class in classes.iter_mut() {
        class.sort();
        class.shuffle(&mut rng);
    }
    let sizes = apportion(labels.len(), weights);
    let alloc = stratified_allocation(&[classes[0].len(), classes[1].len()], &sizes)?;
    let mut parts = vec![BTreeSet::new(); weights.len()];
    for (c, class) in classes.iter().enumerate() {
        let mut it = class.iter();
        for (j, part) in parts.iter_mut().enumerate() {
            part.extend(it.by_ref().take(alloc[c][j]).map(|id| (*id).clone()));
        }
    }
    Ok(parts)
}

fn labels_of(cohort: &Cohort) -> Vec<(String, bool)> {
    cohort
        .patients
        .iter()
        .map(|p| (p.patient_id.clone(), p.outcome))
        .collect()
}

fn check_unique(labels: &[(String, bool)]) -> Result<()> {
    let ids: BTreeSet<&String> = labels.iter().map(|(id, _)| id).collect();
    if ids.len() != labels.len() {
        return Err(Error::Argument("duplicate patient ids".into()));
    }
    Ok(())
}

pub fn stratified_kfold(cohort: &Cohort, k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_kfold_labels(&labels_of(cohort), k, seed)
}

pub fn stratified_kfold_labels(labels: &[(String, bool)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Argument(format!("k must be at least 2, got {k}")));
    }
    check_unique(labels)?;
    let positives = labels.iter().filter(|(_, o)| *o).count();
    let negatives = labels.len() - positives;
    if positives < k || negatives < k {
        return Err(Error::Argument(format!(
            "each outcome class needs at least k={k} patients ({negatives} alive, {positives} dead)"
        )));
    }
    let folds = stratified_partition(labels, &vec![1.0; k], derive_seed(seed, "kfold", 0))?;
    let assignments = folds
        .iter()
        .enumerate()
        .flat_map(|(i, f)| f.iter().map(move |id| (id.clone(), i)))
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        assignments,
        outcomes: labels.iter().cloned().collect(),
    })
}

/// Fold `i` is the test set; the remaining patients are split into train and validation by
/// `train_val` weights (8:1 by default), stratified by outcome.
pub fn cv_iteration(plan: &FoldPlan, i: usize, train_val: (f64, f64), seed: u64) -> Result<SplitTriple> {
    if i >= plan.k {
        return Err(Error::Argument(format!("fold {i} out of range for k={}", plan.k)));
    }
    let test = plan.fold(i);
    let rest: Vec<(String, bool)> = plan
        .outcomes
        .iter()
        .filter(|(id, _)| !test.contains(*id))
        .map(|(id, o)| (id.clone(), *o))
        .collect();
    let mut parts = stratified_partition(
        &rest,
        &[train_val.0, train_val.1],
        derive_seed(seed, "cv_train_val", i as u64),
    )?;
    let val = parts.pop().expect("two parts");
    let train = parts.pop().expect("two parts");
    Ok(SplitTriple { train, val, test })
}

pub fn holdout_split(cohort: &Cohort, ratios: [f64; 3], seed: u64) -> Result<SplitTriple> {
    holdout_split_labels(&labels_of(cohort), ratios, seed)
}

pub fn holdout_split_labels(labels: &[(String, bool)], ratios: [f64; 3], seed: u64) -> Result<SplitTriple> {
    if labels.len() < 10 {
        return Err(Error::Argument(format!(
            "holdout split needs at least 10 patients, got {}",
            labels.len()
        )));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Argument(format!("invalid ratios {ratios:?}")));
    }
    check_unique(labels)?;
    let mut parts = stratified_partition(labels, &ratios, derive_seed(seed, "holdout", 0))?;
    let test = parts.pop().expect("three parts");
    let val = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok(SplitTriple { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, pos: usize) -> Vec<(String, bool)> {
        (0..n).map(|i| (format!("p{i:04}"), i < pos)).collect()
    }

    #[test]
    fn apportion_largest_remainder() {
        assert_eq!(apportion(100, &[8.0, 1.0, 1.0]), vec![80, 10, 10]);
        assert_eq!(apportion(4255, &[8.0, 1.0, 1.0]), vec![3404, 425, 426]);
        assert_eq!(apportion(10, &[1.0; 4]), vec![2, 2, 3, 3]);
        assert_eq!(apportion(90, &[8.0, 1.0]), vec![80, 10]);
    }

    #[test]
    fn twenty_patients_four_folds() {
        let plan = stratified_kfold_labels(&labels(20, 10), 4, 1).unwrap();
        for f in 0..4 {
            let fold = plan.fold(f);
            assert_eq!(fold.len(), 5);
            let pos = fold.iter().filter(|id| plan.outcomes[*id]).count();
            assert!((2..=3).contains(&pos), "fold {f} has {pos} positives");
        }
    }

    #[test]
    fn two_per_class_two_folds_forces_one_each() {
        let plan = stratified_kfold_labels(&labels(4, 2), 2, 9).unwrap();
        for f in 0..2 {
            let fold = plan.fold(f);
            assert_eq!(fold.iter().filter(|id| plan.outcomes[*id]).count(), 1);
            assert_eq!(fold.len(), 2);
        }
    }

    #[test]
    fn same_seed_same_plan_and_input_order_irrelevant() {
        let l = labels(57, 20);
        let mut rev = l.clone();
        rev.reverse();
        let a = stratified_kfold_labels(&l, 5, 3).unwrap();
        assert_eq!(a, stratified_kfold_labels(&l, 5, 3).unwrap());
        assert_eq!(a, stratified_kfold_labels(&rev, 5, 3).unwrap());
        assert_ne!(a.assignments, stratified_kfold_labels(&l, 5, 4).unwrap().assignments);
    }

    #[test]
    fn small_class_or_k_is_rejected() {
        assert!(stratified_kfold_labels(&labels(20, 3), 4, 0).is_err());
        assert!(stratified_kfold_labels(&labels(20, 10), 1, 0).is_err());
    }

    #[test]
    fn cv_iterations_partition_the_cohort() {
        let plan = stratified_kfold_labels(&labels(100, 30), 10, 5).unwrap();
        let mut union = BTreeSet::new();
        for i in 0..10 {
            let s = cv_iteration(&plan, i, (8.0, 1.0), 5).unwrap();
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
            assert!(s.train.is_disjoint(&s.val) && s.train.is_disjoint(&s.test));
            assert!(union.is_disjoint(&s.test));
            union.extend(s.test);
        }
        assert_eq!(union.len(), 100);
        assert!(cv_iteration(&plan, 10, (8.0, 1.0), 5).is_err());
    }

    #[test]
    fn holdout_at_paper_scale() {
        let s = holdout_split_labels(&labels(4255, 540), [8.0, 1.0, 1.0], 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (3404, 425, 426));
        let p = 540.0 / 4255.0;
        for part in [&s.train, &s.val, &s.test] {
            let pos = part.iter().filter(|id| id.as_str() < "p0540").count() as f64;
            assert!((pos - p * part.len() as f64).abs() <= 1.0);
        }
        assert!(holdout_split_labels(&labels(9, 3), [8.0, 1.0, 1.0], 0).is_err());
    }
}
