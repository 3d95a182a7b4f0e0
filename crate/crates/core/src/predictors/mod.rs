//! Reference predictors: a constant floor, logistic/linear regression, CART, a one-hidden-layer
//! perceptron and a gated recurrent network, each trainable per task, jointly or in two stages.

pub mod early_stopping;
pub mod grid;
pub mod network;
pub mod optim;
pub mod tree;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{auprc, mae, PredictionTrace, TraceStep};
use crate::numeric::{mean, sigmoid};
use crate::preprocess::{Cohort, FitScope, ZScore};
use crate::rng::{derive_seed, seeded, BenchRng};

pub use early_stopping::{fit_with_early_stopping, EpochRecord, Iterative, Selection, StoppingRule};
pub use grid::{grid_search, GridResult, GridSearchPlan, LeaderboardRow};
pub use network::{Backbone, Heads, Network, Sample};
pub use tree::{fit_tree, Criterion, Tree, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Global gradient-norm bound for the Adam-trained families.
pub const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Constant,
    LogisticLinear,
    DecisionTree,
    Perceptron,
    Recurrent,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Constant => "constant",
            Family::LogisticLinear => "logistic_linear",
            Family::DecisionTree => "decision_tree",
            Family::Perceptron => "perceptron",
            Family::Recurrent => "recurrent",
        }
    }

    /// Accepted hyperparameters with their defaults.
    pub fn schema(self) -> &'static [Hyper] {
        use HyperKind::*;
        const LR_LINEAR: Hyper = Hyper::new("learning_rate", 0.1, PositiveReal);
        const LR: Hyper = Hyper::new("learning_rate", 0.01, PositiveReal);
        const EPOCHS: Hyper = Hyper::new("epochs", 100.0, Count { min: 1 });
        const PATIENCE: Hyper = Hyper::new("patience", 10.0, Count { min: 1 });
        const HIDDEN: Hyper = Hyper::new("hidden", 32.0, Count { min: 1 });
        const TREE: [Hyper; 2] = [
            Hyper::new("max_depth", 10.0, Count { min: 1 }),
            Hyper::new("min_samples_split", 2.0, Count { min: 2 }),
        ];
        const PERCEPTRON: [Hyper; 5] = [
            HIDDEN,
            LR,
            EPOCHS,
            PATIENCE,
            Hyper::new("batch_size", 32.0, Count { min: 1 }),
        ];
        const RECURRENT: [Hyper; 5] = [
            HIDDEN,
            LR,
            EPOCHS,
            PATIENCE,
            Hyper::new("batch_size", 16.0, Count { min: 1 }),
        ];
        const LINEAR: [Hyper; 3] = [LR_LINEAR, EPOCHS, PATIENCE];
        match self {
            Family::Constant => &[],
            Family::LogisticLinear => &LINEAR,
            Family::DecisionTree => &TREE,
            Family::Perceptron => &PERCEPTRON,
            Family::Recurrent => &RECURRENT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HyperKind {
    PositiveReal,
    Count { min: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub name: &'static str,
    pub default: f64,
    pub kind: HyperKind,
}

impl Hyper {
    const fn new(name: &'static str, default: f64, kind: HyperKind) -> Self {
        Hyper { name, default, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    OutcomeOnly,
    LosOnly,
    /// One backbone with both heads trained on the summed loss.
    MultiTask,
    /// Two independently trained models of identical structure, one per head.
    TwoStage,
}

impl TaskMode {
    pub fn predicts_outcome(self) -> bool {
        self != TaskMode::LosOnly
    }

    pub fn predicts_los(self) -> bool {
        self != TaskMode::OutcomeOnly
    }

    /// Heads of each independently trained part.
    pub fn parts(self) -> Vec<Heads> {
        match self {
            TaskMode::OutcomeOnly => vec![Heads::OUTCOME],
            TaskMode::LosOnly => vec![Heads::LOS],
            TaskMode::MultiTask => vec![Heads::BOTH],
            TaskMode::TwoStage => vec![Heads::OUTCOME, Heads::LOS],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    pub family: Family,
    pub task_mode: TaskMode,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
    /// Early-stopping criterion of a multi-task model; single-head parts always use AUPRC
    /// (outcome) or MAE (LOS).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
}

impl PredictorSpec {
    pub fn new(family: Family, task_mode: TaskMode) -> Self {
        PredictorSpec {
            family,
            task_mode,
            hyperparameters: BTreeMap::new(),
            seed: 0,
            selection: None,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.hyperparameters.insert(name.to_string(), value);
        self
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.family.name(), serde_plain(&self.task_mode))
    }

    /// Checks every hyperparameter against the family schema.
    pub fn validate(&self) -> Result<()> {
        let schema = self.family.schema();
        for (name, &value) in &self.hyperparameters {
            let Some(h) = schema.iter().find(|h| h.name == name) else {
                return Err(Error::Argument(format!(
                    "unknown hyperparameter `{name}` for {}; accepted: {:?}",
                    self.family.name(),
                    schema.iter().map(|h| h.name).collect::<Vec<_>>()
                )));
            };
            let ok = match h.kind {
                HyperKind::PositiveReal => value.is_finite() && value > 0.0,
                HyperKind::Count { min } => value.fract() == 0.0 && value >= f64::from(min) && value < 1e9,
            };
            if !ok {
                return Err(Error::Argument(format!(
                    "{} hyperparameter `{name}` = {value} is invalid ({:?})",
                    self.family.name(),
                    h.kind
                )));
            }
        }
        Ok(())
    }

    /// Hyperparameters with defaults filled in.
    pub fn resolved(&self) -> Result<PredictorSpec> {
        self.validate()?;
        let mut out = self.clone();
        for h in self.family.schema() {
            out.hyperparameters.entry(h.name.to_string()).or_insert(h.default);
        }
        Ok(out)
    }

    fn get(&self, name: &str) -> f64 {
        self.hyperparameters
            .get(name)
            .copied()
            .or_else(|| self.family.schema().iter().find(|h| h.name == name).map(|h| h.default))
            .unwrap_or_else(|| panic!("`{name}` is not a {} hyperparameter", self.family.name()))
    }

    fn count(&self, name: &str) -> usize {
        self.get(name) as usize
    }

    pub fn selection_for(&self, heads: Heads) -> Selection {
        match (heads.outcome, heads.los) {
            (true, false) => Selection::Auprc,
            (false, true) => Selection::Mae,
            _ => self.selection.unwrap_or(Selection::Mae),
        }
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Params {
    /// Risk is the training positive-record rate and LOS the training-mean remaining LOS.
    /// The mean minimizes squared error, not absolute error: another constant (the median)
    /// can have a lower MAE.
    Constant { risk: f64, los_days: f64 },
    Network(Network),
    Tree {
        outcome: Option<Tree>,
        los: Option<Tree>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPart {
    pub heads: Heads,
    pub params: Params,
    pub selection: Selection,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    /// The spec with all hyperparameters resolved.
    pub spec: PredictorSpec,
    pub feature_names: Vec<String>,
    pub static_names: Vec<String>,
    /// Normalization of the LOS target, used to report predictions in days.
    pub los_scale: ZScore,
    /// The partition the normalization statistics were fitted on.
    pub fitted_on: FitScope,
    pub parts: Vec<ModelPart>,
}

impl TrainedModel {
    pub fn n_inputs(&self) -> usize {
        self.feature_names.len() + self.static_names.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let model: TrainedModel = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.format_version
            )));
        }
        Ok(model)
    }

    /// Per-epoch validation log of every part.
    pub fn training_log(&self) -> impl Iterator<Item = (usize, &EpochRecord)> {
        self.parts
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.log.iter().map(move |r| (i, r)))
    }
}

/// Turns a normalized, imputed cohort into model inputs.
pub fn samples(cohort: &Cohort) -> Result<Vec<Sample>> {
    let transform = cohort.transform.as_ref().ok_or_else(|| {
        Error::Argument("cohort must be normalized and imputed before training or prediction".into())
    })?;
    cohort
        .patients
        .iter()
        .map(|p| {
            if !p.is_complete() {
                return Err(Error::Argument(format!("patient `{}` has missing cells", p.patient_id)));
            }
            if p.remaining_los.len() != p.n_days() {
                return Err(Error::Argument(format!("patient `{}` has no labels", p.patient_id)));
            }
            Ok(Sample {
                inputs: p
                    .matrix
                    .iter()
                    .map(|row| row.iter().chain(&p.statics).copied().collect())
                    .collect(),
                outcome: p.outcome,
                los_target: p.remaining_los.iter().map(|&v| transform.los.apply(v)).collect(),
                los_days: p.remaining_los.clone(),
            })
        })
        .collect()
}

fn check_scope(model_scope: &FitScope, cohort: &Cohort, what: &str) -> Result<()> {
    match &cohort.transform {
        Some(t) if t.fitted_on == *model_scope => Ok(()),
        Some(t) => Err(Error::Argument(format!(
            "{what} cohort was normalized with statistics fitted on `{}` ({} patients), expected `{}`",
            t.fitted_on.label, t.fitted_on.patients, model_scope.label
        ))),
        None => Err(Error::Argument(format!("{what} cohort is not normalized"))),
    }
}

/// Trains `spec` on `train`, using `val` for early stopping.
pub fn train(spec: &PredictorSpec, train: &Cohort, val: &Cohort) -> Result<TrainedModel> {
    let spec = spec.resolved()?;
    let transform = train
        .transform
        .as_ref()
        .ok_or_else(|| Error::Argument("training cohort is not normalized".into()))?;
    check_scope(&transform.fitted_on, val, "validation")?;
    if val.feature_names != train.feature_names || val.static_names != train.static_names {
        return Err(Error::Argument("training and validation feature sets differ".into()));
    }
    let train_samples = samples(train)?;
    let val_samples = samples(val)?;
    if train_samples.iter().all(Sample::is_empty) {
        return Err(Error::Argument("training partition has no records".into()));
    }
    let n_inputs = train.feature_names.len() + train.static_names.len();
    if n_inputs == 0 && spec.family != Family::Constant {
        return Err(Error::Argument("no input features".into()));
    }

    let mut parts = Vec::new();
    for (i, heads) in spec.task_mode.parts().into_iter().enumerate() {
        let seed = derive_seed(spec.seed, spec.family.name(), i as u64);
        let ctx = PartContext {
            spec: &spec,
            heads,
            train: &train_samples,
            val: &val_samples,
            los_scale: transform.los,
            n_inputs,
            seed,
        };
        let part = match spec.family {
            Family::Constant => ctx.constant(),
            Family::DecisionTree => ctx.tree(),
            Family::LogisticLinear => ctx.network(Backbone::Linear),
            Family::Perceptron => ctx.network(Backbone::Perceptron),
            Family::Recurrent => ctx.network(Backbone::Recurrent),
        }
        .map_err(|e| match e {
            Error::Training(m) => Error::Training(format!("{} part {i}: {m}", spec.label())),
            other => other,
        })?;
        parts.push(part);
    }
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec,
        feature_names: train.feature_names.clone(),
        static_names: train.static_names.clone(),
        los_scale: transform.los,
        fitted_on: transform.fitted_on.clone(),
        parts,
    })
}

pub fn train_constant(train_cohort: &Cohort, task_mode: TaskMode) -> Result<TrainedModel> {
    train(&PredictorSpec::new(Family::Constant, task_mode), train_cohort, train_cohort)
}

pub fn train_logistic_linear(t: &Cohort, v: &Cohort, spec: &PredictorSpec) -> Result<TrainedModel> {
    train_family(Family::LogisticLinear, t, v, spec)
}

pub fn train_decision_tree(t: &Cohort, v: &Cohort, spec: &PredictorSpec) -> Result<TrainedModel> {
    train_family(Family::DecisionTree, t, v, spec)
}

pub fn train_perceptron(t: &Cohort, v: &Cohort, spec: &PredictorSpec) -> Result<TrainedModel> {
    train_family(Family::Perceptron, t, v, spec)
}

pub fn train_recurrent(t: &Cohort, v: &Cohort, spec: &PredictorSpec) -> Result<TrainedModel> {
    train_family(Family::Recurrent, t, v, spec)
}

fn train_family(family: Family, t: &Cohort, v: &Cohort, spec: &PredictorSpec) -> Result<TrainedModel> {
    if spec.family != family {
        return Err(Error::Argument(format!(
            "spec is for {}, not {}",
            spec.family.name(),
            family.name()
        )));
    }
    train(spec, t, v)
}

struct PartContext<'a> {
    spec: &'a PredictorSpec,
    heads: Heads,
    train: &'a [Sample],
    val: &'a [Sample],
    los_scale: ZScore,
    n_inputs: usize,
    seed: u64,
}

/// Per-record outputs of one part: (risk, LOS in days).
fn part_outputs(part: &ModelPart, los_scale: ZScore, inputs: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let days = |z: f64| los_scale.invert(z).max(0.0);
    match &part.params {
        Params::Constant { risk, los_days } => vec![(*risk, *los_days); inputs.len()],
        Params::Network(net) => net
            .forward(inputs)
            .into_iter()
            .map(|(logit, z)| (sigmoid(logit), days(z)))
            .collect(),
        Params::Tree { outcome, los } => inputs
            .iter()
            .map(|x| {
                (
                    outcome.as_ref().map_or(f64::NAN, |t| t.predict(x)),
                    los.as_ref().map_or(f64::NAN, |t| days(t.predict(x))),
                )
            })
            .collect(),
    }
}

/// Validation score of per-record outputs under `selection`.
fn score_outputs(selection: Selection, samples: &[Sample], outputs: &[Vec<(f64, f64)>]) -> Result<f64> {
    let mut risks = Vec::new();
    let mut labels = Vec::new();
    let mut los = Vec::new();
    let mut truth = Vec::new();
    for (s, out) in samples.iter().zip(outputs) {
        for (t, &(r, l)) in out.iter().enumerate() {
            risks.push(r);
            labels.push(s.outcome);
            los.push(l);
            truth.push(s.los_days[t]);
        }
    }
    match selection {
        Selection::Auprc => auprc(&risks, &labels),
        Selection::Mae => mae(&los, &truth),
        Selection::ValLoss => Err(Error::Argument("validation loss needs a network".into())),
    }
}

/// AUPRC is undefined without validation positives; fall back to the validation loss.
fn effective_selection(selection: Selection, val: &[Sample]) -> Selection {
    if selection == Selection::Auprc && !val.iter().any(|s| s.outcome && !s.is_empty()) {
        log::warn!("validation partition has no positive records; selecting on validation loss");
        Selection::ValLoss
    } else {
        selection
    }
}

impl PartContext<'_> {
    fn selection(&self) -> Selection {
        self.spec.selection_for(self.heads)
    }

    fn constant(&self) -> Result<ModelPart> {
        let records: Vec<(bool, f64)> = self
            .train
            .iter()
            .flat_map(|s| s.los_days.iter().map(move |&d| (s.outcome, d)))
            .collect();
        let risk = records.iter().filter(|r| r.0).count() as f64 / records.len() as f64;
        let los_days = mean(&records.iter().map(|r| r.1).collect::<Vec<_>>()).unwrap_or(0.0);
        Ok(ModelPart {
            heads: self.heads,
            params: Params::Constant { risk, los_days },
            selection: self.selection(),
            best_epoch: 0,
            log: Vec::new(),
        })
    }

    fn tree(&self) -> Result<ModelPart> {
        let params = TreeParams {
            max_depth: self.spec.count("max_depth"),
            min_samples_split: self.spec.count("min_samples_split"),
        };
        let rows: Vec<&[f64]> = self.train.iter().flat_map(|s| s.inputs.iter().map(Vec::as_slice)).collect();
        let outcome = self.heads.outcome.then(|| {
            let y: Vec<f64> = self
                .train
                .iter()
                .flat_map(|s| std::iter::repeat(f64::from(u8::from(s.outcome))).take(s.len()))
                .collect();
            fit_tree(&rows, &y, Criterion::Gini, params)
        });
        let los = self.heads.los.then(|| {
            let y: Vec<f64> = self.train.iter().flat_map(|s| s.los_target.iter().copied()).collect();
            fit_tree(&rows, &y, Criterion::Variance, params)
        });
        let mut part = ModelPart {
            heads: self.heads,
            params: Params::Tree { outcome, los },
            selection: effective_selection(self.selection(), self.val),
            best_epoch: 1,
            log: Vec::new(),
        };
        if part.selection != Selection::ValLoss && self.val.iter().any(|s| !s.is_empty()) {
            let outputs: Vec<_> = self.val.iter().map(|s| part_outputs(&part, self.los_scale, &s.inputs)).collect();
            let score = score_outputs(part.selection, self.val, &outputs)?;
            part.log.push(EpochRecord {
                epoch: 1,
                train_loss: None,
                val_score: score,
            });
        }
        Ok(part)
    }

    fn network(&self, backbone: Backbone) -> Result<ModelPart> {
        let mut rng = seeded(self.seed);
        let hidden = match backbone {
            Backbone::Linear => 0,
            _ => self.spec.count("hidden"),
        };
        let net = Network::init(backbone, self.n_inputs, hidden, &mut rng)?;
        let lr = self.spec.get("learning_rate");
        let optimizer = match backbone {
            Backbone::Linear => Optimizer::FullBatch,
            _ => Optimizer::Adam {
                adam: optim::Adam::new(net.params.len(), lr),
                batch_size: self.spec.count("batch_size"),
            },
        };
        let selection = effective_selection(self.selection(), self.val);
        let mut trainer = NetTrainer {
            net,
            heads: self.heads,
            train: self.train,
            val: self.val,
            optimizer,
            lr,
            rng,
            selection,
            los_scale: self.los_scale,
        };
        let rule = StoppingRule {
            max_epochs: self.spec.count("epochs"),
            patience: self.spec.count("patience"),
        };
        let stopped = fit_with_early_stopping(&mut trainer, rule, selection)?;
        Ok(ModelPart {
            heads: self.heads,
            params: Params::Network(stopped.best),
            selection,
            best_epoch: stopped.best_epoch,
            log: stopped.log,
        })
    }
}

enum Optimizer {
    /// Full-batch gradient descent.
    FullBatch,
    Adam { adam: optim::Adam, batch_size: usize },
}

struct NetTrainer<'a> {
    net: Network,
    heads: Heads,
    train: &'a [Sample],
    val: &'a [Sample],
    optimizer: Optimizer,
    lr: f64,
    rng: BenchRng,
    selection: Selection,
    los_scale: ZScore,
}

impl Iterative for NetTrainer<'_> {
    type Snapshot = Network;

    fn step(&mut self, epoch: usize) -> Result<f64> {
        let diverged = |loss: f64, norm: f64, lr: f64| {
            Error::Training(format!(
                "loss became non-finite at epoch {epoch} (loss {loss}, gradient norm {norm}, learning rate {lr})"
            ))
        };
        let all: Vec<&Sample> = self.train.iter().filter(|s| !s.is_empty()).collect();
        let loss = match &mut self.optimizer {
            Optimizer::FullBatch => {
                let (loss, grad) = self.net.loss_and_grad(&all, self.heads);
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !loss.is_finite() || !norm.is_finite() {
                    return Err(diverged(loss, norm, self.lr));
                }
                optim::sgd_step(&mut self.net.params, &grad, self.lr);
                loss
            }
            Optimizer::Adam { adam, batch_size } => {
                let mut order = all;
                order.shuffle(&mut self.rng);
                let mut weighted = 0.0;
                let mut records = 0usize;
                for batch in order.chunks(*batch_size) {
                    let (loss, mut grad) = self.net.loss_and_grad(batch, self.heads);
                    let norm = optim::clip_global_norm(&mut grad, CLIP_NORM);
                    if !loss.is_finite() || !norm.is_finite() {
                        return Err(diverged(loss, norm, self.lr));
                    }
                    adam.step(&mut self.net.params, &grad);
                    let n: usize = batch.iter().map(|s| s.len()).sum();
                    weighted += loss * n as f64;
                    records += n;
                }
                weighted / records as f64
            }
        };
        if self.net.params.iter().any(|p| !p.is_finite()) {
            return Err(diverged(loss, f64::NAN, self.lr));
        }
        Ok(loss)
    }

    fn validation_score(&self) -> Result<f64> {
        if self.selection == Selection::ValLoss {
            let refs: Vec<&Sample> = self.val.iter().collect();
            return Ok(self.net.loss(&refs, self.heads));
        }
        let part = ModelPart {
            heads: self.heads,
            params: Params::Network(self.net.clone()),
            selection: self.selection,
            best_epoch: 0,
            log: Vec::new(),
        };
        let outputs: Vec<_> = self
            .val
            .iter()
            .map(|s| part_outputs(&part, self.los_scale, &s.inputs))
            .collect();
        score_outputs(self.selection, self.val, &outputs)
    }

    fn snapshot(&self) -> Network {
        self.net.clone()
    }
}

/// One trace per patient with a prediction at every recorded day. Sequence models see only
/// the prefix up to each day.
pub fn predict(model: &TrainedModel, cohort: &Cohort) -> Result<Vec<PredictionTrace>> {
    if cohort.feature_names.len() != model.feature_names.len()
        || cohort.static_names.len() != model.static_names.len()
    {
        return Err(Error::Argument(format!(
            "cohort has {}+{} inputs, model expects {}+{}",
            cohort.feature_names.len(),
            cohort.static_names.len(),
            model.feature_names.len(),
            model.static_names.len()
        )));
    }
    check_scope(&model.fitted_on, cohort, "evaluation")?;
    let samples = samples(cohort)?;
    Ok(cohort
        .patients
        .iter()
        .zip(&samples)
        .map(|(p, s)| {
            let mut risk = vec![None; s.len()];
            let mut los = vec![None; s.len()];
            for part in &model.parts {
                let out = part_outputs(part, model.los_scale, &s.inputs);
                for (t, (r, l)) in out.into_iter().enumerate() {
                    if part.heads.outcome {
                        risk[t] = Some(r);
                    }
                    if part.heads.los {
                        los[t] = Some(l);
                    }
                }
            }
            PredictionTrace {
                patient_id: p.patient_id.clone(),
                steps: p
                    .days
                    .iter()
                    .enumerate()
                    .map(|(t, &day)| TraceStep {
                        t: day,
                        risk: risk[t],
                        predicted_los: los[t],
                    })
                    .collect(),
                outcome: p.outcome,
                total_los: p.total_los,
                remaining_los: p.remaining_los.clone(),
            }
        })
        .collect())
}

/// The validation score of a trained model under `selection`, computed from its predictions.
pub fn selection_score(model: &TrainedModel, cohort: &Cohort, selection: Selection) -> Result<f64> {
    let traces = predict(model, cohort)?;
    let mut risks = Vec::new();
    let mut labels = Vec::new();
    let mut los = Vec::new();
    let mut truth = Vec::new();
    for tr in &traces {
        for (s, &y) in tr.steps.iter().zip(&tr.remaining_los) {
            if let Some(r) = s.risk {
                risks.push(r);
                labels.push(tr.outcome);
            }
            if let Some(l) = s.predicted_los {
                los.push(l);
                truth.push(y);
            }
        }
    }
    match selection {
        Selection::Auprc => auprc(&risks, &labels),
        Selection::Mae => mae(&los, &truth),
        Selection::ValLoss => Err(Error::Argument("grid search cannot select on validation loss".into())),
    }
}
