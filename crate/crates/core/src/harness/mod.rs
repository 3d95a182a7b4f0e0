//! End-to-end runs: ingest, preprocess, split, fit, predict, score and report from one config.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/manifest.json            config echo, input hashes, per-iteration reports, aggregates
//! <out>/timings.json             wall-clock timings (kept out of the manifest)
//! <out>/report.csv, report.json  presentation tables
//! <out>/iterations/rRR_fFF/      split.json, transform.json and one directory per predictor
//!                                with model.json, traces.csv, report.json (+ leaderboard.json)
//! <out>/failure.json             stage and message, only when a run aborts
//! ```

pub mod config;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, Stage, StageExt};
use crate::ingest::{load_csv, synthesize_cohort, RawEventTable};
use crate::metrics::trace::{read_trace_rows_file, write_traces_file};
use crate::metrics::{compute_e, evaluate, EScope, MetricConfig, MetricReport, PredictionTrace, Task, TraceStep};
use crate::numeric::{compensated_sum, population_std};
use crate::predictors::{grid_search, predict, train, LeaderboardRow, PredictorSpec, TrainedModel};
use crate::preprocess::{run_pipeline, Cohort, FitScope, FittedTransform, PatientSeries, ProvenanceStep};
use crate::rng::derive_seed;
use crate::split::{cv_iteration, holdout_split, stratified_kfold, write_json, SplitTriple};

pub use config::{CsvSource, DataConfig, EvaluationConfig, MappingPreset, MetricsSection, Protocol, RunConfig};
pub use report::{format_cell, report_table, write_report, REPORT_COLUMNS};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHashes {
    /// SHA-256 of the canonical JSON echo of the config.
    pub config_sha256: String,
    /// SHA-256 of the input CSV bytes, or of the generated table's canonical CSV.
    pub data_sha256: String,
    pub data_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub patients: usize,
    pub alive: usize,
    pub dead: usize,
    pub records: usize,
    pub feature_names: Vec<String>,
    pub static_names: Vec<String>,
    pub provenance: Vec<ProvenanceStep>,
}

impl CohortSummary {
    pub fn of(cohort: &Cohort) -> Self {
        let (alive, dead) = cohort.outcome_counts();
        CohortSummary {
            patients: cohort.patients.len(),
            alive,
            dead,
            records: cohort.n_records(),
            feature_names: cohort.feature_names.clone(),
            static_names: cohort.static_names.clone(),
            provenance: cohort.provenance.clone(),
        }
    }
}

/// Where the statistics of one iteration were fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub train: FitScope,
    pub transform_fitted_on: FitScope,
    pub e_scope: EScope,
    pub e_fitted_on: FitScope,
    /// Normalization, imputation medians and (in train-partition mode) `E` were fitted on
    /// exactly this iteration's training partition.
    pub clean: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub repeat: usize,
    pub fold: usize,
    pub sizes: PartitionSizes,
    pub e: f64,
    pub audit: LeakageAudit,
    /// Keyed by predictor label.
    pub reports: BTreeMap<String, MetricReport>,
    /// Hyperparameters chosen by each grid search.
    pub selected: BTreeMap<String, PredictorSpec>,
    pub leaderboards: BTreeMap<String, Vec<LeaderboardRow>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation across iterations.
    pub std: f64,
    pub n: usize,
}

/// predictor label -> metric -> aggregate.
pub type AggregateTable = BTreeMap<String, BTreeMap<String, Aggregate>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config: RunConfig,
    pub inputs: InputHashes,
    pub cohort: CohortSummary,
    pub iterations: Vec<IterationReport>,
    pub aggregate: AggregateTable,
}

impl RunManifest {
    /// Mean and population std of every metric over the per-iteration reports.
    pub fn recompute_aggregate(iterations: &[IterationReport]) -> AggregateTable {
        let mut values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for it in iterations {
            for (label, rep) in &it.reports {
                for (metric, &v) in &rep.metrics {
                    values
                        .entry(label.clone())
                        .or_default()
                        .entry(metric.clone())
                        .or_default()
                        .push(v);
                }
            }
        }
        values
            .into_iter()
            .map(|(label, metrics)| {
                let m = metrics
                    .into_iter()
                    .map(|(name, vs)| {
                        let agg = Aggregate {
                            mean: compensated_sum(vs.iter().copied()) / vs.len() as f64,
                            std: population_std(&vs).unwrap_or(0.0),
                            n: vs.len(),
                        };
                        (name, agg)
                    })
                    .collect();
                (label, m)
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::split::read_json(path)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub stages: BTreeMap<String, f64>,
    /// Seconds per iteration, in manifest order.
    pub iterations: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for iteration-level parallelism; 0 uses all cores.
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub timings: Timings,
    pub output_dir: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Loads or generates the raw table and hashes its source.
pub fn load_data(data: &DataConfig, run_seed: u64) -> Result<(RawEventTable, InputHashes)> {
    match (&data.csv, &data.synthetic) {
        (Some(csv), None) => {
            let bytes = std::fs::read(&csv.path).map_err(|e| Error::io(&csv.path, e))?;
            let table = load_csv(&csv.path, &csv.column_mapping()?)?;
            Ok((
                table,
                InputHashes {
                    config_sha256: String::new(),
                    data_sha256: sha256_hex(&bytes),
                    data_source: format!("csv:{}", csv.path.file_name().unwrap_or_default().to_string_lossy()),
                },
            ))
        }
        (None, Some(spec)) => {
            let seed = data.synthetic_seed.unwrap_or(run_seed);
            let table = synthesize_cohort(spec, seed)?;
            let mut bytes = Vec::new();
            table.write_csv_to(&mut bytes)?;
            Ok((
                table,
                InputHashes {
                    config_sha256: String::new(),
                    data_sha256: sha256_hex(&bytes),
                    data_source: format!("synthetic:seed={seed}"),
                },
            ))
        }
        _ => Err(Error::Config("exactly one data source must be configured".into())),
    }
}

/// Ingest and preprocess as configured.
pub fn build_cohort(config: &RunConfig) -> Result<(Cohort, InputHashes)> {
    let (table, hashes) = load_data(&config.data, config.seed).stage(Stage::Ingest)?;
    let cohort = run_pipeline(table, &config.pipeline.resolve()).stage(Stage::Preprocess)?;
    Ok((cohort, hashes))
}

/// One train/val/test partition of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub repeat: usize,
    pub fold: usize,
    pub split: SplitTriple,
}

/// Every partition the evaluation protocol asks for, repeats outermost.
pub fn make_iterations(cohort: &Cohort, evaluation: &EvaluationConfig, seed: u64) -> Result<Vec<Iteration>> {
    let mut out = Vec::new();
    for repeat in 0..evaluation.repeats {
        let seed_r = derive_seed(seed, "repeat", repeat as u64);
        match evaluation.protocol {
            Protocol::Kfold { k } => {
                let plan = stratified_kfold(cohort, k, seed_r)?;
                let tv = (evaluation.train_val[0], evaluation.train_val[1]);
                for fold in 0..k {
                    out.push(Iteration {
                        repeat,
                        fold,
                        split: cv_iteration(&plan, fold, tv, seed_r)?,
                    });
                }
            }
            Protocol::Holdout { ratios } => out.push(Iteration {
                repeat,
                fold: 0,
                split: holdout_split(cohort, ratios, seed_r)?,
            }),
        }
    }
    Ok(out)
}

/// File-system-safe form of a predictor label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

struct IterationOutput {
    report: IterationReport,
    seconds: f64,
}

struct RunContext<'a> {
    config: &'a RunConfig,
    cohort: &'a Cohort,
    labels: &'a [String],
    out: &'a Path,
}

impl RunContext<'_> {
    fn run_iteration(&self, it: &Iteration) -> Result<IterationOutput> {
        let start = Instant::now();
        let cfg = self.config;
        let dir = self.out.join("iterations").join(format!("r{:02}_f{:02}", it.repeat, it.fold));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).stage(Stage::Fit)?;
        write_json(&it.split, &dir.join("split.json")).stage(Stage::Split)?;

        let tag = format!("repeat {} fold {} train", it.repeat, it.fold);
        let train_ids: Vec<String> = it.split.train.iter().cloned().collect();
        let train_scope = FitScope::new(tag.clone(), &train_ids);
        let (train_c, val_c, test_c, transform_scope) = match &self.cohort.transform {
            Some(t) => {
                log::warn!("cohort was normalized before splitting; statistics are not per-fold");
                let scope = t.fitted_on.clone();
                (
                    self.cohort.subset(&it.split.train),
                    self.cohort.subset(&it.split.val),
                    self.cohort.subset(&it.split.test),
                    scope,
                )
            }
            None => {
                let raw_train = self.cohort.subset(&it.split.train);
                let refs: Vec<&PatientSeries> = raw_train.patients.iter().collect();
                let transform = FittedTransform::fit(self.cohort, &refs, &tag).stage(Stage::Fit)?;
                write_json(&transform, &dir.join("transform.json")).stage(Stage::Fit)?;
                let apply = |ids: &BTreeSet<String>| self.cohort.subset(ids).apply_transform(&transform);
                (
                    raw_train.apply_transform(&transform).stage(Stage::Fit)?,
                    apply(&it.split.val).stage(Stage::Fit)?,
                    apply(&it.split.test).stage(Stage::Fit)?,
                    transform.fitted_on.clone(),
                )
            }
        };

        let (e_values, e_scope_fit) = match cfg.metrics.e_scope {
            EScope::TrainPartition => (train_c.los_values(), train_scope.clone()),
            EScope::Cohort => (
                self.cohort.los_values(),
                FitScope::new("cohort", &self.cohort.patient_ids()),
            ),
        };
        let e = compute_e(&e_values).stage(Stage::Score)?;
        let metric_cfg = cfg.metrics.with_e(e);
        let audit = LeakageAudit {
            clean: transform_scope.ids_digest == train_scope.ids_digest
                && (cfg.metrics.e_scope == EScope::Cohort || e_scope_fit.ids_digest == train_scope.ids_digest),
            train: train_scope,
            transform_fitted_on: transform_scope,
            e_scope: cfg.metrics.e_scope,
            e_fitted_on: e_scope_fit,
        };

        let iteration_index = (it.repeat * 1000 + it.fold) as u64;
        let mut reports = BTreeMap::new();
        let mut selected = BTreeMap::new();
        let mut leaderboards = BTreeMap::new();
        let n_specs = cfg.predictors.len();
        for (idx, label) in self.labels.iter().enumerate() {
            let pdir = dir.join(slug(label));
            std::fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e)).stage(Stage::Fit)?;
            let model: TrainedModel = if idx < n_specs {
                let mut spec = cfg.predictors[idx].clone();
                spec.seed = derive_seed(cfg.seed ^ spec.seed, label, iteration_index);
                if spec.selection.is_none() && cfg.task == Task::EarlyMortality {
                    spec.selection = Some(crate::predictors::Selection::Auprc);
                }
                train(&spec, &train_c, &val_c).stage(Stage::Fit)?
            } else {
                let mut plan = cfg.grids[idx - n_specs].clone();
                plan.seed = derive_seed(cfg.seed ^ plan.seed, label, iteration_index);
                let result = grid_search(&plan, &train_c, &val_c).stage(Stage::Fit)?;
                write_json(&result.leaderboard, &pdir.join("leaderboard.json")).stage(Stage::Fit)?;
                selected.insert(label.clone(), result.best.clone());
                leaderboards.insert(label.clone(), result.leaderboard);
                result.model
            };
            model.save(&pdir.join("model.json")).stage(Stage::Fit)?;
            let traces = predict(&model, &test_c).stage(Stage::Predict)?;
            write_traces_file(&traces, &pdir.join("traces.csv")).stage(Stage::Predict)?;
            let report = evaluate(&traces, &metric_cfg, cfg.task, cfg.metrics.e_scope).stage(Stage::Score)?;
            write_json(&report, &pdir.join("report.json")).stage(Stage::Score)?;
            reports.insert(label.clone(), report);
        }
        Ok(IterationOutput {
            report: IterationReport {
                repeat: it.repeat,
                fold: it.fold,
                sizes: PartitionSizes {
                    train: it.split.train.len(),
                    val: it.split.val.len(),
                    test: it.split.test.len(),
                },
                e,
                audit,
                reports,
                selected,
                leaderboards,
            },
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Serialize)]
struct Failure<'a> {
    stage: Option<Stage>,
    message: &'a str,
}

/// Runs the configured benchmark, writing outputs under `config.output_dir`. On failure the
/// outputs written so far are kept and `failure.json` records the stage.
pub fn run(config: &RunConfig, options: RunOptions) -> Result<RunOutcome> {
    let out = config.output_dir.clone();
    let result = run_inner(config, options, &out);
    if let Err(e) = &result {
        let _ = std::fs::create_dir_all(&out);
        let msg = e.to_string();
        let _ = write_json(
            &Failure {
                stage: e.stage(),
                message: &msg,
            },
            &out.join("failure.json"),
        );
    }
    result
}

fn run_inner(config: &RunConfig, options: RunOptions, out: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut timings = Timings::default();
    config.validate().stage(Stage::Config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e)).stage(Stage::Config)?;
    let _ = std::fs::remove_file(out.join("failure.json"));

    let t = Instant::now();
    let (cohort, mut inputs) = build_cohort(config)?;
    inputs.config_sha256 = sha256_hex(&serde_json::to_vec(config).map_err(Error::from).stage(Stage::Config)?);
    timings.stages.insert("ingest_preprocess".into(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let iterations = make_iterations(&cohort, &config.evaluation, config.seed).stage(Stage::Split)?;
    timings.stages.insert("split".into(), t.elapsed().as_secs_f64());

    let labels = config.entry_labels();
    let ctx = RunContext {
        config,
        cohort: &cohort,
        labels: &labels,
        out,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
        .stage(Stage::Config)?;
    let t = Instant::now();
    let results: Vec<Result<IterationOutput>> =
        pool.install(|| iterations.par_iter().map(|it| ctx.run_iteration(it)).collect());
    timings.stages.insert("iterations".into(), t.elapsed().as_secs_f64());
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        let o = r?;
        timings.iterations.push(o.seconds);
        reports.push(o.report);
    }
    for it in &reports {
        if !it.audit.clean {
            log::warn!(
                "repeat {} fold {}: statistics were not fitted on the training partition alone",
                it.repeat,
                it.fold
            );
        }
    }

    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        config: config.clone(),
        inputs,
        cohort: CohortSummary::of(&cohort),
        aggregate: RunManifest::recompute_aggregate(&reports),
        iterations: reports,
    };
    let t = Instant::now();
    write_manifest(&manifest, out).stage(Stage::Report)?;
    write_report(&manifest, out).stage(Stage::Report)?;
    timings.stages.insert("report".into(), t.elapsed().as_secs_f64());
    timings.total_seconds = start.elapsed().as_secs_f64();
    write_json(&timings, &out.join("timings.json")).stage(Stage::Report)?;
    Ok(RunOutcome {
        manifest,
        timings,
        output_dir: out.to_path_buf(),
    })
}

pub fn write_manifest(manifest: &RunManifest, out: &Path) -> Result<()> {
    let path = out.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

/// Reads a trace CSV (`patient_id,t,risk,predicted_los`) and pairs it with `cohort` labels.
/// Every cohort patient must appear with exactly its recorded days, and no other patients.
pub fn align_traces(traces_csv: &Path, cohort: &Cohort) -> Result<Vec<PredictionTrace>> {
    let mut rows = read_trace_rows_file(traces_csv)?;
    let mut problems = Vec::new();
    let mut traces = Vec::with_capacity(cohort.patients.len());
    for p in &cohort.patients {
        let Some(mut pr) = rows.remove(&p.patient_id) else {
            problems.push(format!("{}: missing from traces", p.patient_id));
            continue;
        };
        pr.sort_by_key(|r| r.t);
        let got: Vec<u32> = pr.iter().map(|r| r.t).collect();
        if got != p.days {
            problems.push(format!(
                "{}: timesteps {:?} do not match recorded days {:?}",
                p.patient_id, got, p.days
            ));
            continue;
        }
        traces.push(PredictionTrace {
            patient_id: p.patient_id.clone(),
            steps: pr
                .iter()
                .map(|r| TraceStep {
                    t: r.t,
                    risk: r.risk,
                    predicted_los: r.predicted_los,
                })
                .collect(),
            outcome: p.outcome,
            total_los: p.total_los,
            remaining_los: p.remaining_los.clone(),
        });
    }
    for id in rows.keys() {
        problems.push(format!("{id}: not in cohort"));
    }
    if problems.is_empty() {
        Ok(traces)
    } else {
        Err(Error::Alignment(problems))
    }
}

/// Scores externally produced traces against `cohort` with the full metric suite.
pub fn score_external(
    traces_csv: &Path,
    cohort: &Cohort,
    metrics: &MetricConfig,
    task: Task,
    e_scope: EScope,
) -> Result<MetricReport> {
    let traces = align_traces(traces_csv, cohort).stage(Stage::Score)?;
    evaluate(&traces, metrics, task, e_scope).stage(Stage::Score)
}
