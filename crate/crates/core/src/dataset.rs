//! Labelled population datasets: generation, stratified splitting, feature
//! views, and the QNCD binary format.
//!
//! # QNCD layout (little-endian)
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 0–3              | magic `"QNCD"`                            |
//! | 4–5              | format version, `u16` = 1                 |
//! | 6–9              | header length `H`, `u32`                  |
//! | 10 .. 10+H       | UTF-8 JSON header                         |
//! | then, per sample | `u8` label, `u16` initial node (1-based), `u64` topology seed, `u64` noise seed, `(M+1)·d` `f32` populations, time-major |
//! | last 8           | CRC-64/XZ of every preceding byte         |
//!
//! Transition matrices in the header are stored row by row, with
//! `transition[i][j] = p(next = g_i | prev = g_j)`.

use std::io::{Read, Write};
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, random_topology};
use crate::error::{Error, Result};
use crate::noise::{DiscreteDistribution, NoiseKind, NoiseProcess, TransitionMatrix};
use crate::rng::{self, derive_seed, stream};
use crate::{Real, GENERATOR_VERSION};

pub const MAGIC: [u8; 4] = *b"QNCD";
pub const FORMAT_VERSION: u16 = 1;
const PREAMBLE: usize = 10;
const TRAILER: usize = 8;
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Default VS-task chain stickiness.
pub const DEFAULT_STICKINESS: f64 = 0.5;
pub const DEFAULT_EDGE_PROB: f64 = 0.1;
pub const DEFAULT_STEPS: usize = 15;
pub const DEFAULT_NODES: usize = 40;
pub const DEFAULT_SAMPLES: usize = 20_000;
/// Rows within `[-NEGATIVE_CLAMP, 0)` are rounding noise and stored as 0.
const NEGATIVE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Two i.i.d. sources with different laws.
    Iid,
    /// Two coloured sources.
    Nm,
    /// An i.i.d. source against a coloured one with the same marginal.
    Vs,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Iid => "iid",
            Task::Nm => "nm",
            Task::Vs => "vs",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iid" => Ok(Task::Iid),
            "nm" => Ok(Task::Nm),
            "vs" => Ok(Task::Vs),
            other => Err(Error::validation(format!("unknown task {other:?}"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task: Task,
    pub t_total: f64,
    pub steps: usize,
    pub nodes: usize,
    pub edge_prob: f64,
    pub class0: NoiseProcess,
    pub class1: NoiseProcess,
    pub n_samples: usize,
    pub master_seed: u64,
    /// Finite-shot resampling of every measured row; `None` means exact
    /// probabilities.
    pub shots: Option<u32>,
}

impl TaskSpec {
    /// Full-scale preset (M = 15, d = 40, 20 000 samples).
    ///
    /// NM transition matrices are drawn column-wise from Dirichlet(1, …, 1)
    /// with a stream derived from `master_seed`, so the spec is fully
    /// determined by `(task, t_total, master_seed)`.
    pub fn preset(task: Task, t_total: f64, master_seed: u64) -> Self {
        let skewed = DiscreteDistribution::skewed();
        let flat = DiscreteDistribution::flat();
        let (class0, class1) = match task {
            Task::Iid => (NoiseProcess::iid(skewed), NoiseProcess::iid(flat)),
            Task::Nm => {
                let mut rng = stream(derive_seed(master_seed, 0, rng::PRESET_STREAM));
                let t0 = TransitionMatrix::random_dirichlet(skewed.len(), &mut rng);
                let t1 = TransitionMatrix::random_dirichlet(flat.len(), &mut rng);
                (
                    NoiseProcess::markov(skewed, t0).expect("matching dimensions"),
                    NoiseProcess::markov(flat, t1).expect("matching dimensions"),
                )
            }
            Task::Vs => (
                NoiseProcess::iid(skewed.clone()),
                NoiseProcess::matched_markov(skewed, DEFAULT_STICKINESS).expect("valid stickiness"),
            ),
        };
        Self {
            task,
            t_total,
            steps: DEFAULT_STEPS,
            nodes: DEFAULT_NODES,
            edge_prob: DEFAULT_EDGE_PROB,
            class0,
            class1,
            n_samples: DEFAULT_SAMPLES,
            master_seed,
            shots: None,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn with_edge_prob(mut self, p: f64) -> Self {
        self.edge_prob = p;
        self
    }

    pub fn with_shots(mut self, shots: Option<u32>) -> Self {
        self.shots = shots;
        self
    }

    /// Rebuilds the coloured VS class with a different stickiness.
    pub fn with_stickiness(mut self, stickiness: f64) -> Result<Self> {
        if self.task != Task::Vs {
            return Err(Error::validation("stickiness only applies to the VS task"));
        }
        self.class1 = NoiseProcess::matched_markov(self.class0.dist.clone(), stickiness)?;
        Ok(self)
    }

    pub fn delta(&self) -> f64 {
        self.t_total / self.steps as f64
    }

    pub fn class(&self, label: u8) -> &NoiseProcess {
        if label == 0 {
            &self.class0
        } else {
            &self.class1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_total.is_finite() && self.t_total > 0.0) {
            return Err(Error::validation("total time must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::validation("at least one step is required"));
        }
        if self.nodes < 2 || self.nodes > u16::MAX as usize {
            return Err(Error::validation(format!(
                "node count must lie in 2..={}",
                u16::MAX
            )));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob <= 1.0) {
            return Err(Error::validation("edge probability must lie in (0, 1]"));
        }
        if self.n_samples == 0 || self.n_samples % 2 != 0 {
            return Err(Error::validation(format!(
                "sample count must be even and positive for balanced classes, got {}",
                self.n_samples
            )));
        }
        if self.shots == Some(0) {
            return Err(Error::validation("shot count must be positive"));
        }
        self.class0.validate()?;
        self.class1.validate()?;
        let kinds = (self.class0.kind(), self.class1.kind());
        match self.task {
            Task::Iid => {
                if kinds != (NoiseKind::Iid, NoiseKind::Iid) {
                    return Err(Error::validation("IID task needs two i.i.d. processes"));
                }
                if self.class0.dist == self.class1.dist {
                    return Err(Error::validation("IID classes must have different laws"));
                }
            }
            Task::Nm => {
                if kinds != (NoiseKind::Markov, NoiseKind::Markov) {
                    return Err(Error::validation("NM task needs two Markov processes"));
                }
            }
            Task::Vs => {
                if kinds != (NoiseKind::Iid, NoiseKind::Markov) {
                    return Err(Error::validation(
                        "VS task needs an i.i.d. class 0 and a Markov class 1",
                    ));
                }
                if self.class0.dist.support() != self.class1.dist.support() {
                    return Err(Error::validation("VS classes must share the support"));
                }
                let pi = self
                    .class1
                    .transition
                    .as_ref()
                    .expect("checked kind")
                    .stationary_distribution()?;
                let worst = pi
                    .iter()
                    .zip(self.class0.dist.probs())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if worst > 1e-8 {
                    return Err(Error::validation(format!(
                        "VS chain marginal differs from the i.i.d. law by {worst:.3e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Short content hash, used to name cached dataset files.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&Header::from_spec(self, GENERATOR_VERSION))
            .expect("header serialises");
        format!("{:016x}", CRC64.checksum(&json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Header::from_spec(self, GENERATOR_VERSION))
            .expect("header serialises")
    }
}

/// One labelled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: u8,
    /// 1-based.
    pub initial_node: usize,
    pub topology_seed: u64,
    pub noise_seed: u64,
    /// `(M+1) × d`, as stored.
    pub populations: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub samples: Vec<Sample>,
    pub generator_version: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let ones = self.samples.iter().filter(|s| s.label == 1).count();
        [self.samples.len() - ones, ones]
    }

    /// Copy holding only `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut spec = self.spec.clone();
        spec.n_samples = indices.len();
        Dataset {
            spec,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            generator_version: self.generator_version.clone(),
        }
    }

    pub fn seed_pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.samples.iter().map(|s| (s.topology_seed, s.noise_seed))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_qncd(self, &mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        write_qncd(self, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        decode(&bytes)
    }
}

fn resample_shots<R: Rng + ?Sized>(row: &mut [f64], shots: u32, rng: &mut R) {
    let mut cumulative = Vec::with_capacity(row.len());
    let mut acc = 0.0;
    for &p in row.iter() {
        acc += p.max(0.0);
        cumulative.push(acc);
    }
    let mut counts = vec![0u32; row.len()];
    for _ in 0..shots {
        let u = rng.random::<f64>() * acc;
        let idx = cumulative.partition_point(|&c| c <= u).min(row.len() - 1);
        counts[idx] += 1;
    }
    for (p, c) in row.iter_mut().zip(counts) {
        *p = c as f64 / shots as f64;
    }
}

/// Regenerates sample `index` of `spec`.
pub fn generate_sample(spec: &TaskSpec, index: usize) -> Result<Sample> {
    let q = index as u64;
    let topology_seed = derive_seed(spec.master_seed, q, rng::TOPOLOGY_STREAM);
    let noise_seed = derive_seed(spec.master_seed, q, rng::NOISE_STREAM);
    let label = (index % 2) as u8;

    let mut trng = stream(topology_seed);
    let topology = random_topology(spec.nodes, spec.edge_prob, &mut trng)?;
    let initial_node = trng.random_range(1..=spec.nodes);
    let couplings = spec
        .class(label)
        .sample(spec.steps, &mut stream(noise_seed))?;
    let mut pops =
        evolve::<f64>(&topology, &couplings, initial_node, spec.delta())?.into_populations();

    if let Some(shots) = spec.shots {
        let mut srng = stream(derive_seed(spec.master_seed, q, rng::SHOTS_STREAM));
        for mut row in pops.axis_iter_mut(Axis(0)).skip(1) {
            let slice = row.as_slice_mut().expect("standard layout");
            resample_shots(slice, shots, &mut srng);
        }
    }

    let mut populations = Array2::<f32>::zeros(pops.dim());
    for (dst, &p) in populations.iter_mut().zip(pops.iter()) {
        if p < -NEGATIVE_CLAMP || !p.is_finite() {
            return Err(Error::NonFinite(format!("population {p} out of range")));
        }
        *dst = p.max(0.0) as f32;
    }
    Ok(Sample {
        label,
        initial_node,
        topology_seed,
        noise_seed,
        populations,
    })
}

/// Generates every sample of `spec`; sample `q` has label `q mod 2`.
/// Parallel over samples, identical output for any thread count.
pub fn generate(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let samples = (0..spec.n_samples)
        .into_par_iter()
        .map(|q| {
            generate_sample(spec, q).map_err(|e| Error::Sample {
                index: q,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        samples,
        generator_version: GENERATOR_VERSION.to_string(),
    })
}

/// Fractions of the train / validation / test partitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// Sample indices of each partition, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

impl SplitIndices {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

fn floor_even(x: f64) -> usize {
    let n = x.floor() as usize;
    n - n % 2
}

/// Stratified split. Validation and test sizes are `fraction · n` rounded
/// down to an even number (one half per class); train takes the rest.
/// Membership is a deterministic shuffle seeded from the master seed.
pub fn split_indices(ds: &Dataset, fractions: SplitFractions) -> Result<SplitIndices> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test]
        .iter()
        .any(|f| !(f.is_finite() && *f > 0.0))
    {
        return Err(Error::validation("split fractions must all be positive"));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split fractions sum to {}, not 1",
            train + val + test
        )));
    }
    let counts = ds.label_counts();
    if counts[0] != counts[1] {
        return Err(Error::validation("dataset is not balanced"));
    }
    let n = ds.len();
    let per_class = counts[0];
    let n_val = floor_even(val * n as f64) / 2;
    let n_test = floor_even(test * n as f64) / 2;
    if n_val == 0 || n_test == 0 || n_val + n_test >= per_class {
        return Err(Error::validation(format!(
            "fractions ({train}, {val}, {test}) leave an empty partition for {n} samples"
        )));
    }
    let mut rng = stream(derive_seed(ds.spec.master_seed, 0, rng::SPLIT_STREAM));
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| ds.samples[i].label == label).collect();
        idx.shuffle(&mut rng);
        out.val.extend_from_slice(&idx[..n_val]);
        out.test.extend_from_slice(&idx[n_val..n_val + n_test]);
        out.train.extend_from_slice(&idx[n_val + n_test..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split(ds: &Dataset, fractions: SplitFractions) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(ds, fractions)?;
    Ok((
        ds.subset(&idx.train),
        ds.subset(&idx.val),
        ds.subset(&idx.test),
    ))
}

/// Which populations a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Only the last distribution.
    Final,
    /// All `M+1` distributions.
    Full,
}

/// Feature matrix: one row per sample, `steps × nodes` values, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<F> {
    pub mode: FeatureMode,
    pub x: Array2<F>,
    pub labels: Vec<u8>,
    /// Rows per sample: 1 for [`FeatureMode::Final`], `M+1` for full.
    pub steps: usize,
    pub nodes: usize,
}

impl<F: Real> Features<F> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Flattened feature dimension.
    pub fn dim(&self) -> usize {
        self.steps * self.nodes
    }

    /// Sample `i` as a `steps × nodes` sequence.
    pub fn sequence(&self, i: usize) -> ArrayView2<'_, F> {
        self.x
            .row(i)
            .into_shape_with_order((self.steps, self.nodes))
            .expect("contiguous row")
    }

    /// Time-major stack of the selected sequences: block `t` holds rows
    /// `t·B .. (t+1)·B`, one per selected sample.
    pub fn sequence_batch(&self, idx: &[usize]) -> Array2<F> {
        let b = idx.len();
        let mut out = Array2::zeros((self.steps * b, self.nodes));
        for (j, &i) in idx.iter().enumerate() {
            let seq = self.sequence(i);
            for t in 0..self.steps {
                out.row_mut(t * b + j).assign(&seq.row(t));
            }
        }
        out
    }

    pub fn flat_batch(&self, idx: &[usize]) -> Array2<F> {
        self.x.select(Axis(0), idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            mode: self.mode,
            x: self.flat_batch(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            steps: self.steps,
            nodes: self.nodes,
        }
    }

    /// Labels as ±1, class 1 ↦ +1.
    pub fn signed_labels(&self) -> Vec<i8> {
        self.labels
            .iter()
            .map(|&l| if l == 1 { 1 } else { -1 })
            .collect()
    }
}

pub fn feature_view<F: Real>(ds: &Dataset, mode: FeatureMode) -> Features<F> {
    let rows = ds.spec.steps + 1;
    let d = ds.spec.nodes;
    let steps = match mode {
        FeatureMode::Final => 1,
        FeatureMode::Full => rows,
    };
    let mut x = Array2::zeros((ds.len(), steps * d));
    for (mut dst, s) in x.rows_mut().into_iter().zip(&ds.samples) {
        let src = match mode {
            FeatureMode::Final => s.populations.slice(ndarray::s![rows - 1.., ..]),
            FeatureMode::Full => s.populations.view(),
        };
        for (o, &v) in dst.iter_mut().zip(src.iter()) {
            *o = F::lit(v as f64);
        }
    }
    Features {
        mode,
        x,
        labels: ds.samples.iter().map(|s| s.label).collect(),
        steps,
        nodes: d,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassHeader {
    support: Vec<f64>,
    probs: Vec<f64>,
    transition: Option<TransitionMatrix>,
    stickiness: Option<f64>,
}

impl ClassHeader {
    fn from_process(p: &NoiseProcess) -> Self {
        Self {
            support: p.dist.support().to_vec(),
            probs: p.dist.probs().to_vec(),
            transition: p.transition.clone(),
            stickiness: p.stickiness,
        }
    }

    fn into_process(self) -> Result<NoiseProcess> {
        let dist = DiscreteDistribution::new(self.support, self.probs)?;
        let mut p = match self.transition {
            Some(t) => NoiseProcess::markov(dist, t)?,
            None => NoiseProcess::iid(dist),
        };
        p.stickiness = self.stickiness;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    task: Task,
    t_total: f64,
    steps: usize,
    nodes: usize,
    edge_prob: f64,
    n_samples: usize,
    master_seed: u64,
    class0: ClassHeader,
    class1: ClassHeader,
    storage: String,
    generator_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shots: Option<u32>,
}

impl Header {
    fn from_spec(spec: &TaskSpec, generator_version: &str) -> Self {
        Self {
            task: spec.task,
            t_total: spec.t_total,
            steps: spec.steps,
            nodes: spec.nodes,
            edge_prob: spec.edge_prob,
            n_samples: spec.n_samples,
            master_seed: spec.master_seed,
            class0: ClassHeader::from_process(&spec.class0),
            class1: ClassHeader::from_process(&spec.class1),
            storage: "f32".into(),
            generator_version: generator_version.into(),
            shots: spec.shots,
        }
    }

    fn into_spec(self) -> Result<(TaskSpec, String)> {
        if self.storage != "f32" {
            return Err(Error::Malformed(format!(
                "unsupported storage {:?}",
                self.storage
            )));
        }
        let spec = TaskSpec {
            task: self.task,
            t_total: self.t_total,
            steps: self.steps,
            nodes: self.nodes,
            edge_prob: self.edge_prob,
            class0: self.class0.into_process()?,
            class1: self.class1.into_process()?,
            n_samples: self.n_samples,
            master_seed: self.master_seed,
            shots: self.shots,
        };
        Ok((spec, self.generator_version))
    }
}

fn record_len(spec: &TaskSpec) -> usize {
    1 + 2 + 8 + 8 + 4 * (spec.steps + 1) * spec.nodes
}

pub fn write_qncd<W: Write>(ds: &Dataset, sink: &mut W) -> Result<()> {
    let header = serde_json::to_vec(&Header::from_spec(&ds.spec, &ds.generator_version))?;
    if ds.samples.len() != ds.spec.n_samples {
        return Err(Error::validation("sample count differs from the header"));
    }
    let rows = ds.spec.steps + 1;
    let mut buf =
        Vec::with_capacity(PREAMBLE + header.len() + ds.len() * record_len(&ds.spec) + TRAILER);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for s in &ds.samples {
        if s.populations.dim() != (rows, ds.spec.nodes) {
            return Err(Error::DimensionMismatch {
                expected: rows * ds.spec.nodes,
                found: s.populations.len(),
            });
        }
        buf.push(s.label);
        buf.extend_from_slice(&(s.initial_node as u16).to_le_bytes());
        buf.extend_from_slice(&s.topology_seed.to_le_bytes());
        buf.extend_from_slice(&s.noise_seed.to_le_bytes());
        for &p in s.populations.iter() {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    let crc = CRC64.checksum(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    sink.write_all(&buf)?;
    Ok(())
}

pub fn read_qncd<R: Read>(source: &mut R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < PREAMBLE {
        return Err(Error::Truncated {
            expected: PREAMBLE,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let h = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let verify = |bytes: &[u8]| -> Result<()> {
        let body = bytes.len() - TRAILER;
        let stored = le_u64(&bytes[body..]);
        let computed = CRC64.checksum(&bytes[..body]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(())
    };
    if bytes.len() < PREAMBLE + h + TRAILER {
        return Err(Error::Truncated {
            expected: PREAMBLE + h + TRAILER,
            found: bytes.len(),
        });
    }
    let header: Header = match serde_json::from_slice(&bytes[PREAMBLE..PREAMBLE + h]) {
        Ok(hd) => hd,
        Err(e) => {
            // A corrupted header byte is a checksum problem, not a schema one.
            verify(bytes)?;
            return Err(e.into());
        }
    };
    let (spec, generator_version) = header.into_spec()?;
    let rec = record_len(&spec);
    let expected = PREAMBLE + h + spec.n_samples * rec + TRAILER;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after the checksum",
            bytes.len() - expected
        )));
    }
    verify(bytes)?;
    spec.validate()?;

    let rows = spec.steps + 1;
    let mut samples = Vec::with_capacity(spec.n_samples);
    for chunk in bytes[PREAMBLE + h..expected - TRAILER].chunks_exact(rec) {
        let label = chunk[0];
        if label > 1 {
            return Err(Error::Malformed(format!("label {label} is not 0 or 1")));
        }
        let initial_node = u16::from_le_bytes([chunk[1], chunk[2]]) as usize;
        if initial_node == 0 || initial_node > spec.nodes {
            return Err(Error::Malformed(format!(
                "initial node {initial_node} outside 1..={}",
                spec.nodes
            )));
        }
        let topology_seed = le_u64(&chunk[3..11]);
        let noise_seed = le_u64(&chunk[11..19]);
        let values: Vec<f32> = chunk[19..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        samples.push(Sample {
            label,
            initial_node,
            topology_seed,
            noise_seed,
            populations: Array2::from_shape_vec((rows, spec.nodes), values)
                .expect("record length checked"),
        });
    }
    Ok(Dataset {
        spec,
        samples,
        generator_version,
    })
}
