use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ehrbench::error::{Error, Result, Stage};
use ehrbench::harness::{self, RunConfig, RunManifest, RunOptions};
use ehrbench::ingest::{synthesize_cohort, SyntheticSpec};
use ehrbench::metrics::{compute_e, gamma_sweep, EScope, MetricConfig, Task};
use ehrbench::preprocess::{read_cohort, write_cohort, Cohort};
use ehrbench::split::write_json;

#[derive(Parser)]
#[command(name = "ehrbench", version, about = "ICU outcome and length-of-stay benchmark engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest and preprocess the configured data; writes a cohort directory.
    Preprocess(ConfigArgs),
    /// Write the configured train/validation/test partitions as JSON.
    Split(ConfigArgs),
    /// Run the full benchmark.
    Run(RunArgs),
    /// Score an external trace CSV against a stored cohort.
    Score(ScoreArgs),
    /// Rebuild report.csv/report.json from a manifest.
    Report(ReportArgs),
    /// OSMAE and ES across penalty thresholds for a trace CSV.
    SweepGamma(SweepArgs),
    /// Generate a synthetic cohort as a canonical long-form CSV.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Worker threads for fold-level parallelism (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Independent repetitions of the evaluation protocol.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args)]
struct CohortMetricArgs {
    /// Cohort directory written by `preprocess`.
    #[arg(long)]
    cohort: PathBuf,
    /// Reference horizon E; defaults to the 95th percentile of the cohort's LOS.
    #[arg(long)]
    e: Option<f64>,
    /// Read task and metric settings from a run config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    traces: PathBuf,
    #[command(flatten)]
    cohort: CohortMetricArgs,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to the manifest's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    traces: PathBuf,
    #[command(flatten)]
    cohort: CohortMetricArgs,
    #[arg(long, default_value_t = 10)]
    max_gamma: u32,
}

#[derive(Args)]
struct SynthArgs {
    /// Destination CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML file with synthetic-cohort settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    missing_rate: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.stage() {
                Some(_) => eprintln!("ehrbench: {e}"),
                None => eprintln!("ehrbench: [error] {e}"),
            }
            ExitCode::from(exit_code(e.stage()))
        }
    }
}

fn exit_code(stage: Option<Stage>) -> u8 {
    match stage {
        None => 1,
        Some(Stage::Config) => 2,
        Some(Stage::Ingest) => 3,
        Some(Stage::Preprocess) => 4,
        Some(Stage::Split) => 5,
        Some(Stage::Fit) => 6,
        Some(Stage::Predict) => 7,
        Some(Stage::Score) => 8,
        Some(Stage::Report) => 9,
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config).map_err(|e| e.at(Stage::Config))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path, stage: Stage) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).at(stage))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(args) => {
            let cfg = load_config(&args)?;
            let (cohort, hashes) = harness::build_cohort(&cfg)?;
            let dir = cfg.output_dir.join("cohort");
            write_cohort(&cohort, &dir).map_err(|e| e.at(Stage::Preprocess))?;
            let (alive, dead) = cohort.outcome_counts();
            log::info!(
                "{} patients ({alive} alive, {dead} dead), {} records, {} features; data sha256 {}",
                cohort.patients.len(),
                cohort.n_records(),
                cohort.feature_names.len(),
                hashes.data_sha256
            );
            println!("{}", dir.display());
            Ok(())
        }
        Command::Split(args) => {
            let cfg = load_config(&args)?;
            let (cohort, _) = harness::build_cohort(&cfg)?;
            let iterations =
                harness::make_iterations(&cohort, &cfg.evaluation, cfg.seed).map_err(|e| e.at(Stage::Split))?;
            let dir = cfg.output_dir.join("splits");
            create_dir(&dir, Stage::Split)?;
            for it in &iterations {
                let path = dir.join(format!("r{:02}_f{:02}.json", it.repeat, it.fold));
                write_json(it, &path).map_err(|e| e.at(Stage::Split))?;
            }
            println!("{} partitions written to {}", iterations.len(), dir.display());
            Ok(())
        }
        Command::Run(args) => {
            let mut cfg = load_config(&args.common)?;
            if let Some(r) = args.repeats {
                cfg.evaluation.repeats = r;
            }
            let outcome = harness::run(&cfg, RunOptions { workers: args.workers })?;
            print!("{}", harness::report_table(&outcome.manifest).map_err(|e| e.at(Stage::Report))?);
            log::info!(
                "manifest written to {} in {:.1}s",
                outcome.output_dir.join("manifest.json").display(),
                outcome.timings.total_seconds
            );
            Ok(())
        }
        Command::Score(args) => {
            let (cohort, cfg, task, scope) = cohort_metrics(&args.cohort)?;
            let report = harness::score_external(&args.traces, &cohort, &cfg, task, scope)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Error::from(e).at(Stage::Score))?;
            match args.out {
                Some(path) => std::fs::write(&path, json).map_err(|e| Error::io(&path, e).at(Stage::Score))?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Report(args) => {
            let manifest = RunManifest::read(&args.manifest).map_err(|e| e.at(Stage::Report))?;
            let out = args
                .out
                .or_else(|| args.manifest.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            create_dir(&out, Stage::Report)?;
            harness::write_report(&manifest, &out).map_err(|e| e.at(Stage::Report))?;
            print!("{}", harness::report_table(&manifest).map_err(|e| e.at(Stage::Report))?);
            Ok(())
        }
        Command::SweepGamma(args) => {
            let (cohort, cfg, _, _) = cohort_metrics(&args.cohort)?;
            let traces = harness::align_traces(&args.traces, &cohort).map_err(|e| e.at(Stage::Score))?;
            let sweep = gamma_sweep(&traces, 0..=args.max_gamma, &cfg).map_err(|e| e.at(Stage::Score))?;
            println!("gamma,osmae,es");
            let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            for row in &sweep.rows {
                println!("{},{},{}", row.gamma, cell(row.osmae), cell(row.es));
            }
            log::info!(
                "ES non-increasing: {}; OSMAE non-decreasing: {}",
                sweep.es_non_increasing,
                sweep.osmae_non_decreasing
            );
            Ok(())
        }
        Command::Synth(args) => {
            let mut spec = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e).at(Stage::Config))?;
                    toml_spec(&text)?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(v) = args.patients {
                spec.n_patients = v;
            }
            if let Some(v) = args.features {
                spec.n_features = v;
            }
            if let Some(v) = args.signal {
                spec.signal_strength = v;
            }
            if let Some(v) = args.missing_rate {
                spec.missing_rate = v;
            }
            let table = synthesize_cohort(&spec, args.seed).map_err(|e| e.at(Stage::Ingest))?;
            table.write_csv(&args.out).map_err(|e| e.at(Stage::Ingest))?;
            println!("{} events for {} patients written to {}", table.rows.len(), table.patient_ids().len(), args.out.display());
            Ok(())
        }
    }
}

/// A synthetic spec read either from a bare table or from a run config's `[data.synthetic]`.
fn toml_spec(text: &str) -> Result<SyntheticSpec> {
    if let Ok(cfg) = RunConfig::from_toml(text) {
        if let Some(spec) = cfg.data.synthetic {
            return Ok(spec);
        }
    }
    harness::config::parse_synthetic_spec(text).map_err(|e| e.at(Stage::Config))
}

fn cohort_metrics(args: &CohortMetricArgs) -> Result<(Cohort, MetricConfig, Task, EScope)> {
    let cohort = read_cohort(&args.cohort).map_err(|e| e.at(Stage::Ingest))?;
    let (section, task) = match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(path).map_err(|e| e.at(Stage::Config))?;
            (cfg.metrics, cfg.task)
        }
        None => (Default::default(), Task::OutcomeSpecificLos),
    };
    let (e, scope) = match args.e {
        Some(e) => (e, section.e_scope),
        None => (compute_e(&cohort.los_values()).map_err(|e| e.at(Stage::Score))?, EScope::Cohort),
    };
    let cfg = section.with_e(e);
    cfg.validate().map_err(|e| e.at(Stage::Config))?;
    Ok((cohort, cfg, task, scope))
}
