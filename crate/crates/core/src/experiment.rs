//! Model roster, end-to-end runs, and result tables.
//!
//! A run splits a dataset, trains one roster model on the training part
//! (with model selection on the validation part) and scores the test part.
//! The trained model remembers which `(topology, noise)` seed pairs it saw,
//! so evaluation can refuse any split that overlaps them.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    feature_view, generate, split_indices, Dataset, FeatureMode, Features, SplitFractions,
    SplitIndices, SplitName, Task, TaskSpec, DEFAULT_STEPS,
};
use crate::error::{Error, Result};
use crate::neural::{
    self, hyperparameter_search, Activation, Aggregation, AggregationKind, CellKind, Family,
    HeadConfig, MlpConfig, ModelConfig, Network, RnnConfig, SearchOptions, SearchSpace,
    TrainOptions, TrainReport, Trial,
};
use crate::rng::{derive_seed, stream};
use crate::svm::{default_grid, grid_search, SvmModel, SvmOptions, SvmTrial};
use crate::GENERATOR_VERSION;

const SUBSAMPLE_STREAM: u64 = 0x5355_4253;

/// The twelve models of the results table, in row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelName {
    #[serde(rename = "m-svm-single")]
    SvmSingle,
    #[serde(rename = "m-mlp-single")]
    MlpSingle,
    #[serde(rename = "m-svm")]
    Svm,
    #[serde(rename = "m-mlp")]
    Mlp,
    #[serde(rename = "m-gru")]
    Gru,
    #[serde(rename = "m-lstm")]
    Lstm,
    #[serde(rename = "m-bigru")]
    BiGru,
    #[serde(rename = "m-bilstm")]
    BiLstm,
    #[serde(rename = "m-bigru-att")]
    BiGruAtt,
    #[serde(rename = "m-bilstm-att")]
    BiLstmAtt,
    #[serde(rename = "m-bigru-max")]
    BiGruMax,
    #[serde(rename = "m-bilstm-max")]
    BiLstmMax,
}

/// What a roster name trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Svm,
    Neural(Family),
}

impl ModelName {
    pub const ALL: [ModelName; 12] = [
        ModelName::SvmSingle,
        ModelName::MlpSingle,
        ModelName::Svm,
        ModelName::Mlp,
        ModelName::Gru,
        ModelName::Lstm,
        ModelName::BiGru,
        ModelName::BiLstm,
        ModelName::BiGruAtt,
        ModelName::BiLstmAtt,
        ModelName::BiGruMax,
        ModelName::BiLstmMax,
    ];

    /// Lower-case command-line name.
    pub fn name(self) -> &'static str {
        match self {
            ModelName::SvmSingle => "m-svm-single",
            ModelName::MlpSingle => "m-mlp-single",
            ModelName::Svm => "m-svm",
            ModelName::Mlp => "m-mlp",
            ModelName::Gru => "m-gru",
            ModelName::Lstm => "m-lstm",
            ModelName::BiGru => "m-bigru",
            ModelName::BiLstm => "m-bilstm",
            ModelName::BiGruAtt => "m-bigru-att",
            ModelName::BiLstmAtt => "m-bilstm-att",
            ModelName::BiGruMax => "m-bigru-max",
            ModelName::BiLstmMax => "m-bilstm-max",
        }
    }

    /// Display form used in tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelName::SvmSingle => "m-SVM-single",
            ModelName::MlpSingle => "m-MLP-single",
            ModelName::Svm => "m-SVM",
            ModelName::Mlp => "m-MLP",
            ModelName::Gru => "m-GRU",
            ModelName::Lstm => "m-LSTM",
            ModelName::BiGru => "m-biGRU",
            ModelName::BiLstm => "m-biLSTM",
            ModelName::BiGruAtt => "m-biGRU-att",
            ModelName::BiLstmAtt => "m-biLSTM-att",
            ModelName::BiGruMax => "m-biGRU-max",
            ModelName::BiLstmMax => "m-biLSTM-max",
        }
    }

    /// `-single` models see only the last distribution.
    pub fn feature_mode(self) -> FeatureMode {
        match self {
            ModelName::SvmSingle | ModelName::MlpSingle => FeatureMode::Final,
            _ => FeatureMode::Full,
        }
    }

    pub fn kind(self) -> ModelKind {
        use AggregationKind::*;
        let rnn = |cell, bidirectional, aggregation| {
            ModelKind::Neural(Family::Rnn {
                cell,
                bidirectional,
                aggregation,
            })
        };
        match self {
            ModelName::SvmSingle | ModelName::Svm => ModelKind::Svm,
            ModelName::MlpSingle | ModelName::Mlp => ModelKind::Neural(Family::Mlp),
            ModelName::Gru => rnn(CellKind::Gru, false, LastHidden),
            ModelName::Lstm => rnn(CellKind::Lstm, false, LastHidden),
            ModelName::BiGru => rnn(CellKind::Gru, true, LastHidden),
            ModelName::BiLstm => rnn(CellKind::Lstm, true, LastHidden),
            ModelName::BiGruAtt => rnn(CellKind::Gru, true, Attention),
            ModelName::BiLstmAtt => rnn(CellKind::Lstm, true, Attention),
            ModelName::BiGruMax => rnn(CellKind::Gru, true, MaxPool),
            ModelName::BiLstmMax => rnn(CellKind::Lstm, true, MaxPool),
        }
    }

    /// Configuration trained when no search is requested: MLPs with two
    /// relu layers of 64, recurrent models with one layer of 64 units,
    /// attention width 64 and a relu head of 64; no dropout or decay.
    pub fn default_config(self, steps: usize, nodes: usize) -> Option<ModelConfig> {
        match self.kind() {
            ModelKind::Svm => None,
            ModelKind::Neural(Family::Mlp) => {
                let input = match self.feature_mode() {
                    FeatureMode::Final => nodes,
                    FeatureMode::Full => steps * nodes,
                };
                Some(ModelConfig::Mlp(MlpConfig::new(
                    input,
                    &[64, 64],
                    Activation::Relu,
                )))
            }
            ModelKind::Neural(Family::Rnn {
                cell,
                bidirectional,
                aggregation,
            }) => Some(ModelConfig::Rnn(RnnConfig {
                input_dim: nodes,
                cell,
                layers: 1,
                hidden_dim: 64,
                bidirectional,
                aggregation: match aggregation {
                    AggregationKind::LastHidden => Aggregation::LastHidden,
                    AggregationKind::MaxPool => Aggregation::MaxPool,
                    AggregationKind::Attention => Aggregation::Attention { att_dim: 64 },
                },
                head: HeadConfig::default(),
                dropout: 0.0,
                weight_decay: 0.0,
            })),
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ModelName::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| {
                let known: Vec<_> = ModelName::ALL.iter().map(|m| m.name()).collect();
                Error::validation(format!(
                    "unknown model {s:?}; expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

/// A roster model, or a baseline that always answers class 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Roster(ModelName),
    Constant(ConstantTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantTag {
    Constant,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Roster(m) => m.name(),
            ModelChoice::Constant(_) => "constant",
        }
    }

    pub fn feature_mode(self) -> FeatureMode {
        match self {
            ModelChoice::Roster(m) => m.feature_mode(),
            ModelChoice::Constant(_) => FeatureMode::Final,
        }
    }
}

impl FromStr for ModelChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("constant") {
            return Ok(ModelChoice::Constant(ConstantTag::Constant));
        }
        s.parse().map(ModelChoice::Roster)
    }
}

impl From<ModelName> for ModelChoice {
    fn from(m: ModelName) -> Self {
        ModelChoice::Roster(m)
    }
}

/// The six datasets of the results table, in column order.
pub const PRESETS: [(&str, Task, f64); 6] = [
    ("iid-0.1", Task::Iid, 0.1),
    ("nm-0.1", Task::Nm, 0.1),
    ("vs-0.1", Task::Vs, 0.1),
    ("iid-1", Task::Iid, 1.0),
    ("nm-1", Task::Nm, 1.0),
    ("vs-1", Task::Vs, 1.0),
];

pub fn preset_spec(name: &str, master_seed: u64) -> Result<TaskSpec> {
    PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|&(_, task, t)| TaskSpec::preset(task, t, master_seed))
        .ok_or_else(|| Error::validation(format!("unknown preset {name:?}")))
}

/// Table column of a dataset, matched on task and total time.
pub fn preset_column(task: Task, t_total: f64) -> Option<usize> {
    PRESETS
        .iter()
        .position(|&(_, t, tm)| t == task && (tm - t_total).abs() < 1e-9)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    /// Sampled configurations; 1 trains the default configuration.
    pub budget: usize,
    /// Epoch cap (and full-rung length when searching).
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Balanced subsample of the training partition.
    pub subsample: Option<usize>,
    pub fractions: SplitFractions,
    pub svm: SvmOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            seed: 0,
            budget: 1,
            epochs: t.epoch_cap,
            patience: t.patience,
            batch_size: t.batch_size,
            lr: t.lr,
            subsample: None,
            fractions: SplitFractions::default(),
            svm: SvmOptions::default(),
        }
    }
}

impl RunOptions {
    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.batch_size,
            lr: self.lr,
            epoch_cap: self.epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Classifier {
    Svm(SvmModel<f64>),
    Neural(Network<f64>),
    /// Always predicts this class.
    Constant(u8),
}

impl Classifier {
    pub fn predict(&self, f: &Features<f64>) -> Result<Vec<u8>> {
        match self {
            Classifier::Svm(m) => m.predict(f.x.view()),
            Classifier::Neural(n) => {
                let p = n.predict_proba(f)?;
                Ok(p.rows()
                    .into_iter()
                    .map(|r| neural::argmax2(r[0], r[1]))
                    .collect())
            }
            Classifier::Constant(c) => Ok(vec![*c; f.len()]),
        }
    }

    /// Percent of correct predictions.
    pub fn accuracy(&self, f: &Features<f64>) -> Result<f64> {
        if f.is_empty() {
            return Err(Error::validation("accuracy of an empty set"));
        }
        let hits = self
            .predict(f)?
            .iter()
            .zip(&f.labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(100.0 * hits as f64 / f.len() as f64)
    }
}

/// Where a model's training data came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_fingerprint: String,
    pub task: Task,
    pub t_total: f64,
    pub steps: usize,
    pub nodes: usize,
    pub master_seed: u64,
    pub run_seed: u64,
    pub fractions: SplitFractions,
    /// `(topology, noise)` seeds of every training sample.
    pub train_seeds: Vec<(u64, u64)>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: ModelChoice,
    pub classifier: Classifier,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ModelEnvelope {
    format: String,
    model: ModelChoice,
    feature_mode: FeatureMode,
    provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    svm: Option<SvmModel<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    constant: Option<u8>,
}

const ENVELOPE_FORMAT: &str = "qnc-model";

impl TrainedModel {
    pub fn feature_mode(&self) -> FeatureMode {
        self.model.feature_mode()
    }

    /// Neural models use the binary weight format with the envelope as its
    /// metadata; the others are plain JSON.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut env = ModelEnvelope {
            format: ENVELOPE_FORMAT.into(),
            model: self.model,
            feature_mode: self.feature_mode(),
            provenance: self.provenance.clone(),
            svm: None,
            constant: None,
        };
        match &self.classifier {
            Classifier::Neural(net) => net.to_bytes(&serde_json::to_value(&env)?),
            Classifier::Svm(m) => {
                env.svm = Some(m.clone());
                Ok(serde_json::to_vec(&env)?)
            }
            Classifier::Constant(c) => {
                env.constant = Some(*c);
                Ok(serde_json::to_vec(&env)?)
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (env, net) = if bytes.starts_with(&neural::MODEL_MAGIC) {
            let (net, meta) = Network::<f64>::from_bytes(bytes)?;
            (serde_json::from_value::<ModelEnvelope>(meta)?, Some(net))
        } else {
            (serde_json::from_slice::<ModelEnvelope>(bytes)?, None)
        };
        if env.format != ENVELOPE_FORMAT {
            return Err(Error::Malformed(format!(
                "unknown model format {:?}",
                env.format
            )));
        }
        if env.feature_mode != env.model.feature_mode() {
            return Err(Error::Malformed(format!(
                "model {} stored with feature mode {:?}",
                env.model.name(),
                env.feature_mode
            )));
        }
        let classifier = match (net, env.svm, env.constant) {
            (Some(n), None, None) => Classifier::Neural(n),
            (None, Some(m), None) => Classifier::Svm(m),
            (None, None, Some(c)) if c < 2 => Classifier::Constant(c),
            _ => {
                return Err(Error::Malformed(
                    "model file holds no single classifier".into(),
                ))
            }
        };
        Ok(Self {
            model: env.model,
            classifier,
            provenance: env.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Errors with [`Error::Leakage`] if any selected sample was seen in
    /// training.
    pub fn check_leakage(&self, ds: &Dataset, indices: &[usize]) -> Result<()> {
        let seen: HashSet<(u64, u64)> = self.provenance.train_seeds.iter().copied().collect();
        let hits = indices
            .iter()
            .filter(|&&i| {
                let s = &ds.samples[i];
                seen.contains(&(s.topology_seed, s.noise_seed))
            })
            .count();
        if hits > 0 {
            return Err(Error::Leakage(format!(
                "{hits} of {} evaluation samples were used for training",
                indices.len()
            )));
        }
        Ok(())
    }

    /// Accuracy on one partition of `ds`, split with the fractions stored at
    /// training time. Every split but `train` is checked for leakage.
    pub fn evaluate(&self, ds: &Dataset, split: SplitName) -> Result<EvalRecord> {
        let idx = split_indices(ds, self.provenance.fractions)?;
        let chosen = idx.get(split);
        if split != SplitName::Train {
            self.check_leakage(ds, chosen)?;
        }
        let f = feature_view::<f64>(ds, self.feature_mode()).subset(chosen);
        let accuracy = self.classifier.accuracy(&f)?;
        Ok(EvalRecord {
            model: self.model.name().to_string(),
            dataset_fingerprint: ds.spec.fingerprint(),
            split,
            n: chosen.len(),
            accuracy,
            trainer_version: GENERATOR_VERSION.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub dataset_fingerprint: String,
    pub split: SplitName,
    pub n: usize,
    pub accuracy: f64,
    pub trainer_version: String,
}

/// Everything needed to trace one results-table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub task: Task,
    pub t_total: f64,
    pub steps: usize,
    pub nodes: usize,
    pub n_samples: usize,
    pub dataset_fingerprint: String,
    pub master_seed: u64,
    pub options: RunOptions,
    pub feature_mode: FeatureMode,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub svm_trials: Option<Vec<SvmTrial>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected_svm: Option<(crate::svm::KernelSpec, f64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_report: Option<TrainReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub search_trials: Option<Vec<Trial>>,
    pub generator_version: String,
    pub trainer_version: String,
    pub wall_clock_secs: f64,
}

/// Fails if two partitions share a `(topology, noise)` seed pair.
pub fn check_disjoint(ds: &Dataset, idx: &SplitIndices) -> Result<()> {
    let pairs = |v: &[usize]| -> HashSet<(u64, u64)> {
        v.iter()
            .map(|&i| (ds.samples[i].topology_seed, ds.samples[i].noise_seed))
            .collect()
    };
    let (a, b, c) = (pairs(&idx.train), pairs(&idx.val), pairs(&idx.test));
    if !a.is_disjoint(&b) || !a.is_disjoint(&c) || !b.is_disjoint(&c) {
        return Err(Error::Leakage("partitions share sample seeds".into()));
    }
    Ok(())
}

/// `n` indices, half per class, drawn without replacement.
pub fn balanced_subsample(ds: &Dataset, from: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::validation(format!(
            "subsample size must be even and positive, got {n}"
        )));
    }
    let mut rng = stream(derive_seed(seed, 0, SUBSAMPLE_STREAM));
    let mut out = Vec::with_capacity(n);
    for label in [0u8, 1] {
        let mut pool: Vec<usize> = from
            .iter()
            .copied()
            .filter(|&i| ds.samples[i].label == label)
            .collect();
        if pool.len() < n / 2 {
            return Err(Error::validation(format!(
                "subsample of {n} needs {} samples per class, the training split has {}",
                n / 2,
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        out.extend_from_slice(&pool[..n / 2]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Splits, trains with model selection on validation, scores the test set.
pub fn run(
    model: ModelChoice,
    ds: &Dataset,
    opts: &RunOptions,
) -> Result<(TrainedModel, RunReport)> {
    run_with_config(model, ds, opts, None)
}

/// As [`run`], with an explicit network configuration replacing the default
/// (ignored for SVMs, incompatible with a search budget above 1).
pub fn run_with_config(
    model: ModelChoice,
    ds: &Dataset,
    opts: &RunOptions,
    config: Option<ModelConfig>,
) -> Result<(TrainedModel, RunReport)> {
    let start = Instant::now();
    if opts.budget == 0 {
        return Err(Error::validation("budget must be at least 1"));
    }
    if config.is_some() && opts.budget > 1 {
        return Err(Error::validation(
            "a fixed configuration cannot be combined with a search",
        ));
    }
    let idx = split_indices(ds, opts.fractions)?;
    check_disjoint(ds, &idx)?;
    let train_idx = match opts.subsample {
        Some(n) => balanced_subsample(ds, &idx.train, n, opts.seed)?,
        None => idx.train.clone(),
    };
    let all = feature_view::<f64>(ds, model.feature_mode());
    let (tr, va, te) = (
        all.subset(&train_idx),
        all.subset(&idx.val),
        all.subset(&idx.test),
    );
    drop(all);

    let mut svm_trials = None;
    let mut selected_svm = None;
    let mut train_report = None;
    let mut search_trials = None;
    let (classifier, val_accuracy) = match model {
        ModelChoice::Constant(_) => {
            let c = Classifier::Constant(0);
            let acc = c.accuracy(&va)?;
            (c, acc)
        }
        ModelChoice::Roster(name) => match name.kind() {
            ModelKind::Svm => {
                let grid = default_grid(tr.dim());
                let search = grid_search(
                    tr.x.view(),
                    &tr.labels,
                    va.x.view(),
                    &va.labels,
                    &grid,
                    &opts.svm,
                )?;
                log::info!(
                    "{name}: selected {} with C = {} ({:.2}% validation)",
                    search.best.kernel.label(),
                    search.best.c,
                    search.best_val_accuracy
                );
                selected_svm = Some((search.best.kernel, search.best.c));
                svm_trials = Some(search.trials);
                (Classifier::Svm(search.best), search.best_val_accuracy)
            }
            ModelKind::Neural(family) => {
                let (net, report) = if opts.budget > 1 {
                    let deep = ds.spec.task == Task::Nm && (ds.spec.t_total - 0.1).abs() < 1e-9;
                    let out = hyperparameter_search(
                        family,
                        &SearchSpace::standard(deep),
                        &SearchOptions {
                            budget: opts.budget,
                            epoch_budget: opts.epochs,
                            train: opts.train_options(),
                        },
                        &tr,
                        &va,
                    )?;
                    search_trials = Some(out.trials);
                    (out.network, out.report)
                } else {
                    let cfg = match config {
                        Some(c) => c,
                        None => name
                            .default_config(tr.steps, tr.nodes)
                            .expect("neural roster models have a default"),
                    };
                    neural::train(cfg, &tr, &va, opts.train_options())?
                };
                let acc = report.best_val_accuracy;
                train_report = Some(report);
                (Classifier::Neural(net), acc)
            }
        },
    };
    let test_accuracy = classifier.accuracy(&te)?;
    if let Some(r) = train_report.as_mut() {
        r.record_test_accuracy(test_accuracy)?;
    }
    let provenance = Provenance {
        dataset_fingerprint: ds.spec.fingerprint(),
        task: ds.spec.task,
        t_total: ds.spec.t_total,
        steps: ds.spec.steps,
        nodes: ds.spec.nodes,
        master_seed: ds.spec.master_seed,
        run_seed: opts.seed,
        fractions: opts.fractions,
        train_seeds: train_idx
            .iter()
            .map(|&i| (ds.samples[i].topology_seed, ds.samples[i].noise_seed))
            .collect(),
    };
    let report = RunReport {
        model: model.name().to_string(),
        task: ds.spec.task,
        t_total: ds.spec.t_total,
        steps: ds.spec.steps,
        nodes: ds.spec.nodes,
        n_samples: ds.len(),
        dataset_fingerprint: provenance.dataset_fingerprint.clone(),
        master_seed: ds.spec.master_seed,
        options: *opts,
        feature_mode: model.feature_mode(),
        n_train: tr.len(),
        n_val: va.len(),
        n_test: te.len(),
        val_accuracy,
        test_accuracy,
        svm_trials,
        selected_svm,
        train_report,
        search_trials,
        generator_version: ds.generator_version.clone(),
        trainer_version: GENERATOR_VERSION.to_string(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let trained = TrainedModel {
        model,
        classifier,
        provenance,
    };
    Ok((trained, report))
}

/// File name for a dataset, derived from its content fingerprint.
pub fn dataset_file_name(spec: &TaskSpec) -> String {
    format!(
        "{}-t{}-m{}-d{}-n{}-{}.qncd",
        spec.task,
        spec.t_total,
        spec.steps,
        spec.nodes,
        spec.n_samples,
        spec.fingerprint()
    )
}

/// Loads the dataset for `spec` from `dir` when a file with its content name
/// exists there, otherwise generates it and (with a directory) stores it.
pub fn cached_dataset(dir: Option<&Path>, spec: &TaskSpec) -> Result<Dataset> {
    let Some(dir) = dir else {
        return generate(spec);
    };
    let path = dir.join(dataset_file_name(spec));
    if path.exists() {
        let ds = Dataset::load(&path)?;
        if ds.spec.fingerprint() == spec.fingerprint() {
            log::info!("reusing {}", path.display());
            return Ok(ds);
        }
        log::warn!("{} does not match its name; regenerating", path.display());
    }
    let ds = generate(spec)?;
    std::fs::create_dir_all(dir)?;
    ds.save(&path)?;
    Ok(ds)
}

/// Drops repeated values, keeping first occurrences.
pub fn dedup_steps(ms: &[usize]) -> Vec<usize> {
    let mut seen = HashSet::new();
    let out: Vec<usize> = ms.iter().copied().filter(|m| seen.insert(*m)).collect();
    if out.len() < ms.len() {
        log::warn!("duplicate M values dropped: {ms:?} -> {out:?}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub steps: usize,
    pub accuracy: f64,
    pub report: RunReport,
}

/// Trains `model` on a fresh dataset for every step count, keeping the
/// total time and everything else in `base` fixed.
pub fn sweep_m(
    base: &TaskSpec,
    ms: &[usize],
    model: ModelChoice,
    opts: &RunOptions,
    cache: Option<&Path>,
) -> Result<Vec<SweepPoint>> {
    let ms = dedup_steps(ms);
    if ms.is_empty() || ms.contains(&0) {
        return Err(Error::validation("step counts must be positive"));
    }
    let mut out = Vec::with_capacity(ms.len());
    for m in ms {
        let spec = base.clone().with_steps(m);
        let ds = cached_dataset(cache, &spec)?;
        let (_, report) = run(model, &ds, opts)?;
        log::info!("M = {m}: {:.1}%", report.test_accuracy);
        out.push(SweepPoint {
            steps: m,
            accuracy: report.test_accuracy,
            report,
        });
    }
    Ok(out)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("M,gamma\n");
    for p in points {
        s.push_str(&format!("{},{:.1}\n", p.steps, p.accuracy));
    }
    s
}

/// The two IID datasets of the interval-scaling experiment: total time 2
/// with 15 steps (coarser interval) and with 30 steps (same interval as
/// total time 1 with 15 steps).
pub fn scaling_specs(master_seed: u64) -> [TaskSpec; 2] {
    let base = TaskSpec::preset(Task::Iid, 2.0, master_seed);
    [base.clone().with_steps(15), base.with_steps(30)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub accuracy: f64,
    /// Report the value came from.
    pub source: String,
}

/// Rows follow [`ModelName::ALL`], columns follow [`PRESETS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub cells: Vec<Vec<Option<TableCell>>>,
}

impl Default for ResultsTable {
    fn default() -> Self {
        Self {
            cells: vec![vec![None; PRESETS.len()]; ModelName::ALL.len()],
        }
    }
}

impl ResultsTable {
    /// Later reports overwrite earlier ones for the same cell. Reports with
    /// a step count other than 15, another total time, or a non-roster
    /// model are skipped.
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = (String, &'a RunReport)>) -> Self {
        let mut t = Self::default();
        for (source, r) in reports {
            let Ok(model) = r.model.parse::<ModelName>() else {
                continue;
            };
            if r.steps != DEFAULT_STEPS {
                continue;
            }
            let Some(col) = preset_column(r.task, r.t_total) else {
                continue;
            };
            let row = ModelName::ALL.iter().position(|&m| m == model).unwrap();
            if let Some(old) = &t.cells[row][col] {
                log::warn!(
                    "{source} replaces {} for {model} / {}",
                    old.source,
                    PRESETS[col].0
                );
            }
            t.cells[row][col] = Some(TableCell {
                accuracy: r.test_accuracy,
                source,
            });
        }
        t
    }

    pub fn filled(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_some()).count()
    }

    /// One row per model; missing cells read `NA`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model");
        for (name, _, _) in PRESETS {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for (m, row) in ModelName::ALL.iter().zip(&self.cells) {
            s.push_str(m.name());
            for c in row {
                match c {
                    Some(c) => s.push_str(&format!(",{:.1}", c.accuracy)),
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<14}", "");
        for (name, _, _) in PRESETS {
            s.push_str(&format!("{name:>9}"));
        }
        s.push('\n');
        for (m, row) in ModelName::ALL.iter().zip(&self.cells) {
            s.push_str(&format!("{:<14}", m.label()));
            for c in row {
                match c {
                    Some(c) => s.push_str(&format!("{:>9.1}", c.accuracy)),
                    None => s.push_str(&format!("{:>9}", "NA")),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Reads every `*.json` run report in `dir` (sorted by file name).
pub fn load_reports(dir: &Path) -> Result<Vec<(PathBuf, RunReport)>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let bytes = std::fs::read(&p)?;
        match serde_json::from_slice::<RunReport>(&bytes) {
            Ok(r) => out.push((p, r)),
            Err(e) => log::debug!("skipping {}: {e}", p.display()),
        }
    }
    Ok(out)
}
