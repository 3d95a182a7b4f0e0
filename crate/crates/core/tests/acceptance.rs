//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion.
//!
//! The process fails when a criterion fails, except for criteria listed as known to be
//! unattainable; those still print FAIL with their evidence. Set `EHRBENCH_ACCEPTANCE_STRICT=1`
//! to fail on those as well. The TJH check reads `EHRBENCH_TJH_CSV`, falling back to
//! `data/tjh.csv` at the workspace root.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{ap_thresholds, auroc_pairs, es_oracle, trace};
use ehrbench::harness::{self, RunConfig, RunOptions};
use ehrbench::ingest::{DatasetTag, TimeBase};
use ehrbench::metrics::{
    auprc, auroc, compute_e, es_patient, es_patient_with, gamma_sweep, mae, osmae_aggregate, osmae_record, EsOutcome,
    FlatAtZero, MetricConfig, PredictionTrace,
};
use ehrbench::numeric::quantile;
use ehrbench::predictors::{Backbone, Heads, Network, Sample};
use ehrbench::preprocess::clean::{clean_three_sigma, merge_daily};
use ehrbench::preprocess::{impute_forward_fill, normalize_zscore, FeatureStats, ZScore};
use ehrbench::rng::seeded;
use ehrbench::split::{cv_iteration, holdout_split_labels, stratified_kfold_labels};
use ehrbench::{PatientSeries, RawEvent, RawEventTable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Outcome {
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    /// Fails by construction; reported, but does not fail the process unless strict.
    known_unattainable: bool,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "OSMAE unit suite",
            budget: Duration::from_secs(1),
            known_unattainable: false,
            run: osmae_suite,
        },
        Criterion {
            name: "ES suite",
            budget: Duration::from_secs(1),
            known_unattainable: false,
            run: es_suite,
        },
        Criterion {
            name: "gamma-sweep monotonicity",
            budget: Duration::from_secs(10),
            known_unattainable: true,
            run: gamma_sweep_suite,
        },
        Criterion {
            name: "AUROC/AUPRC oracle equivalence",
            budget: Duration::from_secs(60),
            known_unattainable: false,
            run: ranking_oracles,
        },
        Criterion {
            name: "preprocessing invariants",
            budget: Duration::from_secs(30),
            known_unattainable: false,
            run: preprocessing_invariants,
        },
        Criterion {
            name: "split guarantees",
            budget: Duration::from_secs(30),
            known_unattainable: false,
            run: split_guarantees,
        },
        Criterion {
            name: "gradient checks",
            budget: Duration::from_secs(60),
            known_unattainable: false,
            run: gradient_checks,
        },
        Criterion {
            name: "end-to-end learning sanity",
            budget: Duration::from_secs(300),
            known_unattainable: false,
            run: end_to_end,
        },
        Criterion {
            name: "determinism",
            budget: Duration::from_secs(300),
            known_unattainable: false,
            run: determinism,
        },
        Criterion {
            name: "TJH cohort statistics (data-conditional)",
            budget: Duration::from_secs(30),
            known_unattainable: false,
            run: tjh_table,
        },
    ];

    let strict = std::env::var("EHRBENCH_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut blocking = 0;
    let mut counts = [0usize; 3];
    println!("acceptance: {} criteria", criteria.len());
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome {
                status: Status::Fail,
                detail: format!("panicked: {msg}"),
            }
        });
        let elapsed = start.elapsed();
        if outcome.status == Status::Pass && elapsed > c.budget {
            outcome.status = Status::Fail;
            outcome.detail.push_str("; over the runtime budget");
        }
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        counts[outcome.status as usize] += 1;
        let mut note = String::new();
        if outcome.status == Status::Fail {
            if c.known_unattainable && !strict {
                note = " [known unattainable; not blocking]".into();
            } else {
                blocking += 1;
            }
        }
        println!(
            "{label} [{:>2}] {} ({:.2} s, budget {} s){note}: {}",
            i + 1,
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            outcome.detail
        );
    }
    println!(
        "acceptance: {} passed, {} failed, {} skipped; {} blocking",
        counts[0], counts[1], counts[2], blocking
    );
    if blocking > 0 {
        std::process::exit(1);
    }
}

fn cfg(e: f64, gamma: u32) -> MetricConfig {
    MetricConfig {
        gamma,
        e,
        ..MetricConfig::default()
    }
}

/// A randomized trace set: stays of 1..=25 days, a noisy risk model and noisy LOS predictions.
fn random_traces(rng: &mut Pcg64, n: usize) -> Vec<PredictionTrace> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let total = rng.gen_range(1..=25u32);
            let len = rng.gen_range(1..=total) as usize;
            let dead = rng.gen_bool(0.4);
            let skill = rng.gen_range(0.0..2.0);
            let risks: Vec<f64> = (0..len)
                .map(|_| {
                    let z: f64 = skill * if dead { 1.0 } else { -1.0 } + noise.sample(rng);
                    1.0 / (1.0 + (-z).exp())
                })
                .collect();
            let los: Vec<f64> = (1..=len as u32)
                .map(|t| (f64::from(total - t) + 3.0 * noise.sample(rng)).max(0.0))
                .collect();
            trace(&format!("p{i}"), dead, total, &risks, &los)
        })
        .collect()
}

fn osmae_suite() -> Outcome {
    let c = cfg(10.0, 2);
    // hand oracles: eps = 1 for t = 4 > L - gamma = 3; eps = 2 / (10 - 5 + 2) for t = 2
    let examples = [
        (osmae_record(true, true, 3.0, 3.0, 4, 5, &c), 0.0),
        (osmae_record(false, false, 2.5, 1.0, 4, 5, &c), 1.5),
        (osmae_record(true, false, 3.0, 4.0, 2, 5, &c), (2.0 / 7.0) * ((10.0 - 3.0) + (10.0 - 4.0))),
    ];
    let worst = examples.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut rng = Pcg64::seed_from_u64(1);
    let mut exact = 0;
    let mut naive_gap: f64 = 0.0;
    for _ in 0..1000 {
        let n = 1 + rng.gen_range(0..5);
        let mut traces = random_traces(&mut rng, n);
        for tr in &mut traces {
            for s in &mut tr.steps {
                s.risk = Some(if tr.outcome { 0.8 } else { 0.2 });
            }
        }
        // gamma = max L puts every record in the late branch
        let gamma = traces.iter().map(|t| t.total_los).max().unwrap();
        let e = compute_e(&traces.iter().map(|t| f64::from(t.total_los)).collect::<Vec<_>>()).unwrap();
        let c = cfg(e, gamma);
        let pred: Vec<f64> = traces.iter().flat_map(|t| t.steps.iter().map(|s| s.predicted_los.unwrap())).collect();
        let truth: Vec<f64> = traces.iter().flat_map(|t| t.remaining_los.clone()).collect();
        let got = osmae_aggregate(&traces, &c).unwrap().value;
        if got == mae(&pred, &truth).unwrap() {
            exact += 1;
        }
        let naive = pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64;
        naive_gap = naive_gap.max((got - naive).abs() / naive.max(1.0));
    }
    Outcome::check(
        worst <= 1e-9 && exact == 1000 && naive_gap < 1e-12,
        format!(
            "hand examples max error {worst:.1e}; OSMAE == MAE exactly on {exact}/1000 correct-outcome sets \
             (naive-sum oracle within {naive_gap:.1e})"
        ),
    )
}

fn es_suite() -> Outcome {
    let mut problems = Vec::new();
    let mut rng = Pcg64::seed_from_u64(2);
    let mut checked = 0;
    for _ in 0..500 {
        let len = rng.gen_range(1..=20usize);
        let gamma = rng.gen_range(0..=10u32);
        let c = cfg(10.0, gamma);
        let risks: Vec<f64> = (0..len).map(|_| rng.gen()).collect();
        let zeros = vec![0.0; len];
        let random = es_patient(&trace("p", true, len as u32, &risks, &zeros), &c).unwrap();
        let want = es_oracle(&risks, gamma, c.classification_threshold);
        if random.is_some() != want.is_some() || random.zip(want).is_some_and(|(a, b)| (a - b).abs() > 1e-12) {
            problems.push(format!("oracle mismatch len {len} gamma {gamma}"));
        }
        if let Some(v) = es_patient(&trace("p", true, len as u32, &vec![1.0; len], &zeros), &c).unwrap() {
            if v != 1.0 {
                problems.push(format!("perfect predictor scored {v}"));
            }
        }
        if let Some(v) = es_patient(&trace("p", true, len as u32, &zeros, &zeros), &c).unwrap() {
            if !(-1.0..=0.0).contains(&v) {
                problems.push(format!("all-negative predictor scored {v}"));
            }
        }
        checked += 1;
    }
    // T = 5, gamma = 2, all negative: (0 + 0 + 0 - 0.5 - 1) / (1 + 1 + 1 + 0.5 + 0)
    let hand = es_patient(&trace("p", true, 5, &[0.0; 5], &[0.0; 5]), &cfg(10.0, 2)).unwrap().unwrap();
    if (hand + 3.0 / 7.0).abs() > 1e-12 {
        problems.push(format!("hand example {hand}"));
    }
    // floor: T = 2, gamma = 10 gives total -1.9 against optimal 0.1
    let floored = es_patient(&trace("p", true, 2, &[0.0; 2], &[0.0; 2]), &cfg(10.0, 10)).unwrap().unwrap();
    if floored != -1.0 {
        problems.push(format!("adversarial trace scored {floored}, expected the floor -1"));
    }
    // gamma = 0, default convention (limit gamma -> 0+): only the final step carries decay
    let limit_neg = es_patient(&trace("p", true, 5, &[0.0; 5], &[0.0; 5]), &cfg(10.0, 0)).unwrap().unwrap();
    let limit_last_miss = es_patient(&trace("p", true, 5, &[0.9, 0.9, 0.9, 0.9, 0.0], &[0.0; 5]), &cfg(10.0, 0))
        .unwrap()
        .unwrap();
    if limit_neg != -0.25 || limit_last_miss != 0.75 {
        problems.push(format!("gamma=0 limit values {limit_neg}, {limit_last_miss}"));
    }
    // gamma = 0, flat convention: TP = 1 everywhere, FN = -1 only at t = T
    let flat = |risks: &[f64]| match es_patient_with(&trace("p", true, 5, risks, &[0.0; 5]), &cfg(10.0, 0), &FlatAtZero) {
        Ok(EsOutcome::Score(v)) => v,
        other => panic!("unexpected {other:?}"),
    };
    let (flat_neg, flat_last_miss, flat_perfect) = (flat(&[0.0; 5]), flat(&[0.9, 0.9, 0.9, 0.9, 0.0]), flat(&[0.9; 5]));
    if flat_neg != -0.2 || flat_last_miss != 0.6 || flat_perfect != 1.0 {
        problems.push(format!("gamma=0 flat values {flat_neg}, {flat_last_miss}, {flat_perfect}"));
    }
    Outcome::check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{checked} random traces match the oracle, perfect = 1, all-negative in [-1, 0]; \
                 hand -3/7 ok; floor -1 ok; gamma=0 limit (-0.25, 0.75) and flat (-0.2, 0.6, 1) ok"
            )
        } else {
            problems.join("; ")
        },
    )
}

fn gamma_sweep_suite() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(3);
    let (mut es_ok, mut osmae_ok, mut flat_es_ok) = (0, 0, 0);
    let mut first_violation = None;
    for set in 0..200 {
        let traces = random_traces(&mut rng, 30);
        let e = compute_e(&traces.iter().map(|t| f64::from(t.total_los)).collect::<Vec<_>>()).unwrap();
        let sweep = gamma_sweep(&traces, 0..=10, &cfg(e, 0)).unwrap();
        es_ok += usize::from(sweep.es_non_increasing);
        osmae_ok += usize::from(sweep.osmae_non_decreasing);
        if !sweep.osmae_non_decreasing && first_violation.is_none() {
            let w = sweep
                .rows
                .windows(2)
                .find(|w| w[1].osmae.unwrap() < w[0].osmae.unwrap() - 1e-12)
                .unwrap();
            first_violation = Some(format!(
                "set {set}: OSMAE {:.4} at gamma {} > {:.4} at gamma {}",
                w[0].osmae.unwrap(),
                w[0].gamma,
                w[1].osmae.unwrap(),
                w[1].gamma
            ));
        }
        // the flat gamma = 0 convention, for comparison
        let flat: Vec<f64> = (0..=10)
            .filter_map(|g| {
                let scores: Vec<f64> = traces
                    .iter()
                    .filter_map(|t| match es_patient_with(t, &cfg(e, g), &FlatAtZero).unwrap() {
                        EsOutcome::Score(v) => Some(v),
                        _ => None,
                    })
                    .collect();
                (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
            })
            .collect();
        flat_es_ok += usize::from(flat.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
    // smallest counterexample: one correct record with L = 10, E = 12, |error| = 1 at t = 1;
    // eps is 1 / (12 - 10 + gamma), which falls with gamma while t <= L - gamma
    let one = trace("p", false, 10, &[0.1], &[10.0]);
    let at = |g| osmae_aggregate(std::slice::from_ref(&one), &cfg(12.0, g)).unwrap().value;
    Outcome::check(
        es_ok == 200 && osmae_ok == 200,
        format!(
            "ES non-increasing on {es_ok}/200 sets (flat gamma=0 convention: {flat_es_ok}/200); \
             OSMAE non-decreasing on {osmae_ok}/200 sets; first violation {}; minimal case OSMAE {:.4} \
             at gamma 0, {:.4} at gamma 1",
            first_violation.unwrap_or_else(|| "none".into()),
            at(0),
            at(1)
        ),
    )
}

/// Calls `f` with every vector of length `n` over `grid`.
fn for_each_vector(n: usize, grid: &[f64], f: &mut impl FnMut(&[f64])) {
    let mut idx = vec![0usize; n];
    let mut v: Vec<f64> = vec![grid[0]; n];
    loop {
        f(&v);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            idx[i] += 1;
            if idx[i] < grid.len() {
                v[i] = grid[idx[i]];
                break;
            }
            idx[i] = 0;
            v[i] = grid[0];
            i += 1;
        }
    }
}

/// The fixed label grid: every labelling up to length 6, and 16 fixed labellings beyond.
fn label_grid(n: usize) -> Vec<Vec<bool>> {
    if n <= 6 {
        return (0u32..1 << n).map(|m| (0..n).map(|i| m >> i & 1 == 1).collect()).collect();
    }
    let mut rng = Pcg64::seed_from_u64(n as u64);
    let mut out = vec![
        (0..n).map(|i| i % 2 == 0).collect(),
        (0..n).map(|i| i < n / 2).collect(),
        (0..n).map(|i| i >= n / 2).collect(),
        (0..n).map(|i| i == 0).collect(),
        (0..n).map(|i| i == n - 1).collect(),
        (0..n).map(|i| i != 0).collect::<Vec<bool>>(),
    ];
    while out.len() < 16 {
        out.push((0..n).map(|_| rng.gen_bool(0.5)).collect());
    }
    out
}

fn ranking_oracles() -> Outcome {
    // three levels force ties; scores are every vector over the grid
    let grid = [0.0, 0.5, 1.0];
    let (mut roc_cases, mut pr_cases) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    for n in 2..=12 {
        for labels in label_grid(n) {
            let pos = labels.iter().filter(|&&l| l).count();
            for_each_vector(n, &grid, &mut |scores| {
                if pos > 0 && pos < n {
                    worst = worst.max((auroc(scores, &labels).unwrap() - auroc_pairs(scores, &labels)).abs());
                    roc_cases += 1;
                }
                if n <= 10 && pos > 0 {
                    worst = worst.max((auprc(scores, &labels).unwrap() - ap_thresholds(scores, &labels)).abs());
                    pr_cases += 1;
                }
            });
        }
    }
    // distinct scores: every ordering up to length 7 with every labelling
    let mut perm_cases = 0usize;
    for n in 2..=7usize {
        let mut order: Vec<usize> = (0..n).collect();
        let mut perms = Vec::new();
        permutations(&mut order, 0, &mut perms);
        for labels in label_grid(n) {
            let pos = labels.iter().filter(|&&l| l).count();
            if pos == 0 {
                continue;
            }
            for p in &perms {
                let scores: Vec<f64> = p.iter().map(|&r| r as f64).collect();
                worst = worst.max((auprc(&scores, &labels).unwrap() - ap_thresholds(&scores, &labels)).abs());
                if pos < n {
                    worst = worst.max((auroc(&scores, &labels).unwrap() - auroc_pairs(&scores, &labels)).abs());
                }
                perm_cases += 1;
            }
        }
    }
    Outcome::check(
        worst <= 1e-12,
        format!(
            "{roc_cases} AUROC and {pr_cases} AUPRC tied-grid cases (lengths up to 12 and 10), \
             {perm_cases} distinct-score orderings; max deviation {worst:.1e}"
        ),
    )
}

fn permutations(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, out);
        v.swap(k, i);
    }
}

fn event(pid: &str, ts: f64, feature: &str, value: Option<f64>) -> RawEvent {
    RawEvent {
        patient_id: pid.into(),
        timestamp: ts,
        feature: feature.into(),
        value,
        outcome: Some(false),
        total_los: Some(30.0),
        is_static: false,
    }
}

fn preprocessing_invariants() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(5);
    let mut problems = Vec::new();

    // forward fill: filling a prefix equals the prefix of the filled series
    for case in 0..500 {
        let (days, feats) = (rng.gen_range(1..20), rng.gen_range(1..5));
        let matrix: Vec<Vec<f64>> = (0..days)
            .map(|_| (0..feats).map(|_| if rng.gen_bool(0.4) { f64::NAN } else { rng.gen_range(-9.0..9.0) }).collect())
            .collect();
        let mask = matrix.iter().map(|r| r.iter().map(|v: &f64| !v.is_nan()).collect()).collect();
        let series = PatientSeries {
            patient_id: "p".into(),
            days: (1..=days as u32).collect(),
            matrix,
            mask,
            statics: vec![],
            static_mask: vec![],
            outcome: false,
            total_los: 30,
            remaining_los: vec![],
        };
        let medians: Vec<Option<f64>> = (0..feats).map(|_| Some(rng.gen_range(-1.0..1.0))).collect();
        let full = impute_forward_fill(series.clone(), &medians).unwrap();
        let len = rng.gen_range(1..=days);
        let part = impute_forward_fill(series.prefix(len), &medians).unwrap();
        if format!("{:?}", part.matrix) != format!("{:?}", full.prefix(len).matrix) {
            problems.push(format!("forward fill case {case} not prefix-stable"));
        }
    }

    // merge: a second pass changes nothing
    let features: Vec<String> = (0..3).map(|j| format!("f{j}")).collect();
    for case in 0..500 {
        let mut rows = Vec::new();
        for _ in 0..rng.gen_range(1..80) {
            let pid = format!("p{}", rng.gen_range(0..5));
            let value = rng.gen_bool(0.8).then(|| rng.gen_range(-50.0..50.0));
            rows.push(event(&pid, rng.gen_range(0.0..12.0), &features[rng.gen_range(0..3)], value));
        }
        let table = RawEventTable::new(rows, features.clone(), DatasetTag::Generic, TimeBase::DaysSinceFirst).unwrap();
        let once = merge_daily(table);
        if merge_daily(once.clone()) != once {
            problems.push(format!("merge case {case} not idempotent"));
        }
    }

    // normalization inverts to 1e-9 relative
    let mut worst_rel: f64 = 0.0;
    for _ in 0..200 {
        let scale = 10f64.powi(rng.gen_range(-3..5));
        let shift = rng.gen_range(-1e3..1e3);
        let values: Vec<f64> = (0..rng.gen_range(5..300)).map(|_| shift + scale * rng.gen_range(-1.0..1.0)).collect();
        let stats = FeatureStats::from_values("f0", &values, values.len());
        let rows = values.iter().enumerate().map(|(i, &v)| event("p", i as f64, "f0", Some(v))).collect();
        let table = RawEventTable::new(rows, vec!["f0".into()], DatasetTag::Generic, TimeBase::DaysSinceFirst).unwrap();
        let z = ZScore::from_stats(&stats);
        for (ev, &orig) in normalize_zscore(table, std::slice::from_ref(&stats)).rows.iter().zip(&values) {
            worst_rel = worst_rel.max((z.invert(ev.value.unwrap()) - orig).abs() / orig.abs().max(f64::MIN_POSITIVE));
        }
    }
    if worst_rel > 1e-9 {
        problems.push(format!("normalization round trip relative error {worst_rel:.1e}"));
    }

    // three-sigma on Gaussian data removes about P(|Z| > 3) = 0.27%
    let n = 10_000;
    let mut rates = Vec::new();
    for _ in 0..20 {
        let normal = Normal::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.5..3.0)).unwrap();
        let rows = (0..n).map(|i| event("p", i as f64, "f0", Some(normal.sample(&mut rng)))).collect();
        let table = RawEventTable::new(rows, vec!["f0".into()], DatasetTag::Generic, TimeBase::DaysSinceFirst).unwrap();
        rates.push(clean_three_sigma(table).1.removed as f64 / n as f64);
    }
    let (lo, hi) = rates.iter().fold((f64::MAX, f64::MIN), |(a, b), &r| (a.min(r), b.max(r)));
    if lo < 0.0012 || hi > 0.0042 {
        problems.push(format!("three-sigma removal rate range [{lo:.4}, {hi:.4}]"));
    }
    Outcome::check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "500 fill and 500 merge cases; inversion error {worst_rel:.1e}; three-sigma rate over 20 \
                 draws of n=10000 in [{:.3}%, {:.3}%]",
                lo * 100.0,
                hi * 100.0
            )
        } else {
            problems.join("; ")
        },
    )
}

fn split_guarantees() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(6);
    let mut problems = Vec::new();
    let mut worst_pos: f64 = 0.0;
    for case in 0..500 {
        let n = rng.gen_range(20..=500usize);
        let k = *[2usize, 5, 10].choose(&mut rng).unwrap();
        let pos = rng.gen_range(k..=n - k);
        let mut outcomes: Vec<bool> = (0..n).map(|i| i < pos).collect();
        outcomes.shuffle(&mut rng);
        let labels: Vec<(String, bool)> =
            outcomes.iter().enumerate().map(|(i, &o)| (format!("c{case}p{i}"), o)).collect();
        let seed = rng.gen();
        let plan = stratified_kfold_labels(&labels, k, seed).unwrap();
        let folds: Vec<BTreeSet<String>> = (0..k).map(|i| plan.fold(i)).collect();
        // partition: every patient in exactly one fold
        let mut seen = BTreeSet::new();
        let mut overlap = false;
        for f in &folds {
            for id in f {
                overlap |= !seen.insert(id.clone());
            }
        }
        if overlap || seen.len() != n {
            problems.push(format!("case {case}: folds are not a partition"));
        }
        let sizes: Vec<usize> = folds.iter().map(BTreeSet::len).collect();
        let fold_pos: Vec<usize> = folds
            .iter()
            .map(|f| labels.iter().filter(|(id, o)| *o && f.contains(id)).count())
            .collect();
        let spread = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap();
        for &p in &fold_pos {
            worst_pos = worst_pos.max((p as f64 - pos as f64 / k as f64).abs());
        }
        if spread(&sizes) > 1 || spread(&fold_pos) > 1 {
            problems.push(format!("case {case}: n={n} k={k} sizes {sizes:?} positives {fold_pos:?}"));
        }
        let i = rng.gen_range(0..k);
        let it = cv_iteration(&plan, i, (8.0, 1.0), seed).unwrap();
        let total = it.train.len() + it.val.len() + it.test.len();
        let union: BTreeSet<&String> = it.train.iter().chain(&it.val).chain(&it.test).collect();
        if total != n || union.len() != n || it.test != folds[i] {
            problems.push(format!("case {case}: iteration {i} is not a partition"));
        }
        if n >= 10 {
            let h = holdout_split_labels(&labels, [8.0, 1.0, 1.0], seed).unwrap();
            let union: BTreeSet<&String> = h.train.iter().chain(&h.val).chain(&h.test).collect();
            if union.len() != n || h.train.len() + h.val.len() + h.test.len() != n {
                problems.push(format!("case {case}: holdout is not a partition"));
            }
        }
    }
    Outcome::check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "500 cohorts: exact partitions, fold sizes and positives within 1 of each other, \
                 max |positives - P/k| = {worst_pos:.2}"
            )
        } else {
            format!("{} problems, first: {}", problems.len(), problems[0])
        },
    )
}

/// Worst relative gap between analytic and central-difference gradients over 20 instances.
fn gradient_gap(backbone: Backbone, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.gen_range(1..=4);
        let hidden = if backbone == Backbone::Linear { 0 } else { rng.gen_range(1..=4) };
        let mut net = Network::init(backbone, d, hidden, &mut rng).unwrap();
        for p in &mut net.params {
            *p += rng.gen_range(-0.5..0.5);
        }
        let samples: Vec<Sample> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let len = rng.gen_range(1..=5);
                Sample {
                    inputs: (0..len).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
                    outcome: rng.gen_bool(0.5),
                    los_target: (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    los_days: vec![0.0; len],
                }
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let heads = *[Heads::BOTH, Heads::OUTCOME, Heads::LOS].choose(&mut rng).unwrap();
        let (_, grad) = net.loss_and_grad(&refs, heads);
        let h = 1e-6;
        for i in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let fd = (plus.loss(&refs, heads) - minus.loss(&refs, heads)) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-4);
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
    }
    worst
}

fn gradient_checks() -> Outcome {
    let linear = gradient_gap(Backbone::Linear, 7);
    let recurrent = gradient_gap(Backbone::Recurrent, 8);
    Outcome::check(
        linear <= 1e-5 && recurrent <= 1e-4,
        format!(
            "20 instances each, central differences (h=1e-6, relative to max(|g|, |fd|, 1e-4)): \
             linear {linear:.1e} (tol 1e-5), recurrent {recurrent:.1e} (tol 1e-4)"
        ),
    )
}

const END_TO_END: &str = r#"
    seed = 42
    task = "outcome_specific_los"

    [data.synthetic]
    n_patients = 300

    [evaluation]
    protocol = "kfold"
    k = 5

    [[predictors]]
    family = "constant"
    task_mode = "multi_task"

    [[predictors]]
    family = "recurrent"
    task_mode = "multi_task"
"#;

fn end_to_end_config(out: PathBuf) -> RunConfig {
    let mut cfg = RunConfig::from_toml(END_TO_END).unwrap();
    cfg.output_dir = out;
    cfg
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let outcome = harness::run(&end_to_end_config(dir.path().to_path_buf()), RunOptions { workers: 1 }).unwrap();
    let agg = &outcome.manifest.aggregate;
    let rnn = &agg["recurrent/multi_task"];
    let base = &agg["constant/multi_task"];
    let auroc = rnn["auroc"].mean;
    let (osmae, base_osmae) = (rnn["osmae"].mean, base["osmae"].mean);
    Outcome::check(
        auroc >= 0.90 && osmae <= 0.8 * base_osmae,
        format!(
            "n=300, 5 folds, single worker: recurrent AUROC {auroc:.4} (need >= 0.90), OSMAE {osmae:.3} vs \
             constant {base_osmae:.3} ({:.1}% lower, need >= 20%)",
            100.0 * (1.0 - osmae / base_osmae)
        ),
    )
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    harness::run(&end_to_end_config(a.path().to_path_buf()), RunOptions { workers: 1 }).unwrap();
    harness::run(&end_to_end_config(b.path().to_path_buf()), RunOptions { workers: 4 }).unwrap();
    let x = std::fs::read(a.path().join("manifest.json")).unwrap();
    let y = std::fs::read(b.path().join("manifest.json")).unwrap();
    Outcome::check(
        x == y,
        format!(
            "two runs (1 and 4 workers, different output directories): manifests of {} and {} bytes {}",
            x.len(),
            y.len(),
            if x == y { "are identical" } else { "differ" }
        ),
    )
}

fn tjh_table() -> Outcome {
    let path = std::env::var_os("EHRBENCH_TJH_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/tjh.csv"));
    if !path.exists() {
        return Outcome {
            status: Status::Skip,
            detail: format!(
                "TJH CSV not found at {}; set EHRBENCH_TJH_CSV to the exported time-series CSV to run this check",
                path.display()
            ),
        };
    }
    let text = format!(
        "seed = 0\ntask = \"outcome_specific_los\"\n[data.csv]\npath = {:?}\npreset = \"tjh\"\n\
         [pipeline]\nprofile = \"tjh\"\n[evaluation]\nprotocol = \"kfold\"\nk = 5\n\
         [[predictors]]\nfamily = \"constant\"\ntask_mode = \"multi_task\"\n",
        path.display().to_string()
    );
    let cfg = RunConfig::from_toml(&text).unwrap();
    let (cohort, _) = harness::build_cohort(&cfg).unwrap();
    let (alive, dead) = cohort.outcome_counts();
    let records = cohort.n_records();
    let records_dead: usize = cohort.patients.iter().filter(|p| p.outcome).map(PatientSeries::n_days).sum();
    let features = cohort.feature_names.len();
    let los: Vec<f64> = cohort.patients.iter().map(|p| f64::from(p.total_los)).collect();
    let (q1, med, q3) = (quantile(&los, 0.25).unwrap(), quantile(&los, 0.5).unwrap(), quantile(&los, 0.75).unwrap());
    let got = (cohort.patients.len(), alive, dead, records, records_dead, features);
    let want = (361, 195, 166, 1338, 620, 73);
    Outcome::check(
        got == want && (med, q1, q3) == (10.0, 4.0, 15.0),
        format!(
            "patients {} ({alive} alive, {dead} dead), records {records} ({records_dead} dead), dynamic features {features} (+{} static), \
             LOS {med:.1} [{q1:.1}, {q3:.1}]; expected 361 (195, 166), 1338 (620), 73, 10.0 [4.0, 15.0]",
            cohort.patients.len(),
            cohort.static_names.len()
        ),
    )
}
