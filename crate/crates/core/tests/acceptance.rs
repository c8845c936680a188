//! End-to-end acceptance run.
//!
//! Prints one line per criterion and exits nonzero if any fails. Passing
//! criterion numbers as arguments runs only those, e.g.
//! `cargo test --release --test acceptance -- 9 1`.
//! Full-scale datasets are cached under the cargo target tmpdir.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

use qnc_core::dataset::{feature_view, generate, FeatureMode, Features, Task, TaskSpec};
use qnc_core::dynamics::{evolve, evolve_vectorized, random_topology, GraphTopology};
use qnc_core::experiment::{
    cached_dataset, preset_spec, run, scaling_specs, ModelChoice, ModelName, RunOptions, RunReport,
};
use qnc_core::neural::{
    gradient_check, train, Activation, Aggregation, CellKind, HeadConfig, MlpConfig, ModelConfig,
    Network, RnnConfig, TrainOptions,
};
use qnc_core::noise::{sample_iid, CouplingSequence, DiscreteDistribution};
use qnc_core::rng::stream;
use qnc_core::svm::{solve_dual, GramCache, KernelSpec, SvmOptions};

/// Master seed of every accuracy dataset and training run.
const SEED: u64 = 20_240_601;

const ROW_SUM_TOL: f64 = 1e-9;
const PATH_AGREEMENT_TOL: f64 = 1e-8;
const RABI_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const SMO_TOL: f64 = 1e-3;
const DUAL_REL_TOL: f64 = 1e-3;
const CHANCE_BAND: f64 = 3.0;

const SVM_SUBSAMPLE: usize = 4000;
const RNN_EPOCH_CAP: usize = 60;

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

fn cache_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-data");
    std::fs::create_dir_all(&dir).expect("cache directory");
    dir
}

// ---------------------------------------------------------------- properties

fn unitarity() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = stream(1000 + seed);
        let topo = random_topology(40, 0.1, &mut rng).unwrap();
        let dist = if seed % 2 == 0 {
            DiscreteDistribution::skewed()
        } else {
            DiscreteDistribution::flat()
        };
        let c = sample_iid(&dist, 15, &mut rng).unwrap();
        let dt = [0.1, 1.0, 2.0][seed as usize % 3] / 15.0;
        let seq = evolve::<f64>(&topo, &c, 1 + seed as usize % 40, dt).unwrap();
        worst = worst.max(seq.max_row_sum_error());
    }
    Check::new(
        "unitarity",
        worst <= ROW_SUM_TOL,
        format!("max |row sum - 1| = {worst:.2e} (tol {ROW_SUM_TOL:.0e}, 20 instances d=40 M=15)"),
    )
}

fn liouvillian_agreement() -> Check {
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut rng = stream(2000 + i);
        let d = 2 + (i as usize % 7);
        let m = 1 + (i as usize % 6);
        let dt = rng.random_range(0.01..0.5);
        let topo = random_topology(d, 0.5, &mut rng).unwrap();
        let c = sample_iid(&DiscreteDistribution::skewed(), m, &mut rng).unwrap();
        let node = rng.random_range(1..=d);
        let a = evolve::<f64>(&topo, &c, node, dt).unwrap();
        let b = evolve_vectorized::<f64>(&topo, &c, node, dt).unwrap();
        for (x, y) in a.populations().iter().zip(b.populations()) {
            worst = worst.max((x - y).abs());
        }
    }
    Check::new(
        "liouvillian-vs-unitary",
        worst <= PATH_AGREEMENT_TOL,
        format!("max deviation {worst:.2e} (tol {PATH_AGREEMENT_TOL:.0e}, 100 instances d<=8)"),
    )
}

fn rabi() -> Check {
    let topo = GraphTopology::new(2, [(1, 2)]).unwrap();
    let mut worst = 0.0f64;
    for g in [1.0, 2.0, 3.0, 4.0, 5.0] {
        for t in [0.05, 0.4, 1.0, std::f64::consts::FRAC_PI_3, 5.0] {
            let c = CouplingSequence::new(vec![g]);
            for seq in [
                evolve::<f64>(&topo, &c, 1, t).unwrap(),
                evolve_vectorized::<f64>(&topo, &c, 1, t).unwrap(),
            ] {
                let p = seq.populations();
                worst = worst
                    .max((p[[1, 0]] - (g * t).cos().powi(2)).abs())
                    .max((p[[1, 1]] - (g * t).sin().powi(2)).abs());
            }
        }
    }
    Check::new(
        "rabi",
        worst <= RABI_TOL,
        format!("max deviation {worst:.2e} (tol {RABI_TOL:.0e})"),
    )
}

fn random_features(n: usize, steps: usize, nodes: usize, seed: u64) -> Features<f64> {
    let mut rng = stream(seed);
    Features {
        mode: FeatureMode::Full,
        x: Array2::from_shape_simple_fn((n, steps * nodes), || rng.random_range(0.0..1.0)),
        labels: (0..n).map(|i| (i % 2) as u8).collect(),
        steps,
        nodes,
    }
}

fn small_rnn(cell: CellKind, bidirectional: bool, aggregation: Aggregation) -> ModelConfig {
    ModelConfig::Rnn(RnnConfig {
        input_dim: 3,
        cell,
        layers: 2,
        hidden_dim: 4,
        bidirectional,
        aggregation,
        head: HeadConfig {
            hidden: vec![5],
            activation: Activation::Tanh,
        },
        dropout: 0.0,
        weight_decay: 1e-3,
    })
}

fn gradients() -> Check {
    let mut cases: Vec<(String, ModelConfig)> = Activation::ALL
        .into_iter()
        .map(|a| {
            let mut c = MlpConfig::new(18, &[7, 6], a);
            c.weight_decay = 1e-3;
            (format!("mlp-{a:?}"), ModelConfig::Mlp(c))
        })
        .collect();
    cases.extend([
        (
            "gru".to_string(),
            small_rnn(CellKind::Gru, false, Aggregation::LastHidden),
        ),
        (
            "lstm".to_string(),
            small_rnn(CellKind::Lstm, false, Aggregation::LastHidden),
        ),
        (
            "bigru".to_string(),
            small_rnn(CellKind::Gru, true, Aggregation::LastHidden),
        ),
        (
            "bilstm-attention".to_string(),
            small_rnn(CellKind::Lstm, true, Aggregation::Attention { att_dim: 3 }),
        ),
        (
            "bigru-attention".to_string(),
            small_rnn(CellKind::Gru, true, Aggregation::Attention { att_dim: 3 }),
        ),
        (
            "bigru-maxpool".to_string(),
            small_rnn(CellKind::Gru, true, Aggregation::MaxPool),
        ),
        (
            "bilstm-maxpool".to_string(),
            small_rnn(CellKind::Lstm, true, Aggregation::MaxPool),
        ),
    ]);
    let f = random_features(6, 6, 3, 31);
    let idx: Vec<usize> = (0..f.len()).collect();
    let mut worst = (0.0f64, String::new());
    let mut probes = usize::MAX;
    for (k, (name, cfg)) in cases.into_iter().enumerate() {
        let net = Network::<f64>::init(cfg, 40 + k as u64).unwrap();
        let x = net.batch_input(&f, &idx);
        let r = gradient_check(&net, &x, idx.len(), &f.labels, 1e-5, 200, 50 + k as u64).unwrap();
        probes = probes.min(r.probed);
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, name);
        }
    }
    Check::new(
        "gradients",
        worst.0 < GRAD_TOL && probes >= 200,
        format!(
            "max relative error {:.2e} ({}) over 10 variants, >= {probes} probes each (tol {GRAD_TOL:.0e})",
            worst.0, worst.1
        ),
    )
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Exact dual optimum by enumerating every assignment of each `α_i` to
/// zero, `C` or free, solving the equality system of the free block, and
/// keeping the best feasible point.
fn brute_force_dual(q: &Array2<f64>, y: &[i8], c: f64) -> f64 {
    let n = y.len();
    let objective = |a: &[f64]| {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += a[i] * a[j] * q[[i, j]];
            }
        }
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let mut best = f64::NEG_INFINITY;
    let mut state = vec![0u8; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state
            .iter()
            .map(|&s| if s == 1 { c } else { 0.0 })
            .collect();
        let feasible = if free.is_empty() {
            let ya: f64 = alpha.iter().zip(y).map(|(a, &s)| a * s as f64).sum();
            ya.abs() < 1e-12
        } else {
            // Rows: Q_FF α_F + y_F b = 1 − Q_FB α_B;  y_Fᵀ α_F = −y_Bᵀ α_B.
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut rhs = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (cc, &j) in free.iter().enumerate() {
                    a[r][cc] = q[[i, j]];
                }
                a[r][m] = y[i] as f64;
                rhs[r] = 1.0 - (0..n).map(|j| q[[i, j]] * alpha[j]).sum::<f64>();
                a[m][r] = y[i] as f64;
            }
            rhs[m] = -(0..n).map(|j| y[j] as f64 * alpha[j]).sum::<f64>();
            match solve_linear(a, rhs) {
                Some(sol) => {
                    for (r, &i) in free.iter().enumerate() {
                        alpha[i] = sol[r];
                    }
                    free.iter()
                        .all(|&i| (-1e-12..=c + 1e-12).contains(&alpha[i]))
                }
                None => false,
            }
        };
        if feasible {
            best = best.max(objective(&alpha));
        }
        // Next assignment in base 3.
        let mut k = 0;
        while k < n && state[k] == 2 {
            state[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
        state[k] += 1;
    }
    best
}

fn smo() -> Check {
    let mut worst_violation = 0.0f64;
    let mut worst_kkt = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut instances = 0;
    for seed in 0..24u64 {
        let mut rng = stream(3000 + seed);
        let n = 4 + (seed as usize % 9);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let mut y: Vec<i8> = (0..n)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        y[0] = 1;
        y[1] = -1;
        let c = [0.1, 1.0, 10.0][seed as usize % 3];
        let kernel = if seed % 2 == 0 {
            KernelSpec::Rbf { gamma: 1.0 }
        } else {
            KernelSpec::Polynomial {
                degree: 3,
                scale: 1.0,
                offset: 1.0,
            }
        };
        let k = GramCache::new(x.view(), x.view()).unwrap().kernel(&kernel);
        let opts = SvmOptions {
            tol: SMO_TOL,
            max_iter: None,
        };
        let sol = solve_dual(k.view(), &y, c, &opts).unwrap();
        worst_violation = worst_violation.max(sol.violation);

        let coef: Array1<f64> = sol
            .alpha
            .iter()
            .zip(&y)
            .map(|(a, &s)| a * s as f64)
            .collect();
        let dec = k.dot(&coef).mapv(|v| v + sol.bias);
        for i in 0..n {
            let m = y[i] as f64 * dec[i];
            let a = sol.alpha[i];
            let miss = if a <= 0.0 {
                (1.0 - m).max(0.0)
            } else if a >= c {
                (m - 1.0).max(0.0)
            } else {
                (m - 1.0).abs()
            };
            worst_kkt = worst_kkt.max(miss);
        }

        let q = Array2::from_shape_fn((n, n), |(i, j)| y[i] as f64 * y[j] as f64 * k[[i, j]]);
        let exact = brute_force_dual(&q, &y, c);
        let found = *sol.objective_trace.last().unwrap();
        worst_gap = worst_gap.max((found - exact).abs() / exact.abs().max(1.0));
        instances += 1;
    }
    Check::new(
        "smo",
        worst_violation <= SMO_TOL && worst_kkt <= SMO_TOL && worst_gap <= DUAL_REL_TOL,
        format!(
            "{instances} instances n=4..12: max KKT violation {worst_violation:.2e}, \
             max margin miss {worst_kkt:.2e} (tol {SMO_TOL:.0e}), \
             max relative dual gap to enumeration {worst_gap:.2e} (tol {DUAL_REL_TOL:.0e})"
        ),
    )
}

fn small_specs() -> Vec<TaskSpec> {
    vec![
        TaskSpec::preset(Task::Iid, 0.1, 5)
            .with_nodes(8)
            .with_samples(40),
        TaskSpec::preset(Task::Nm, 1.0, 6)
            .with_nodes(8)
            .with_samples(40),
        TaskSpec::preset(Task::Vs, 0.1, 7)
            .with_nodes(8)
            .with_samples(40)
            .with_shots(Some(100)),
    ]
}

fn qncd_round_trip() -> Check {
    let mut ok = true;
    for spec in small_specs() {
        let bytes = generate(&spec).unwrap().to_bytes().unwrap();
        let again = qnc_core::dataset::Dataset::from_bytes(&bytes)
            .unwrap()
            .to_bytes()
            .unwrap();
        ok &= again == bytes;
    }
    Check::new(
        "qncd-round-trip",
        ok,
        "encode(decode(bytes)) == bytes for IID, NM and VS (with shots)".into(),
    )
}

fn determinism() -> Check {
    let mut datasets = true;
    for spec in small_specs() {
        let one = generate(&spec).unwrap().to_bytes().unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let three = pool.install(|| generate(&spec).unwrap().to_bytes().unwrap());
        let mut other = spec.clone();
        other.master_seed += 1;
        let shifted = generate(&other).unwrap().to_bytes().unwrap();
        datasets &= one == three && one != shifted;
    }

    let spec = TaskSpec::preset(Task::Nm, 1.0, 8)
        .with_nodes(6)
        .with_samples(120);
    let ds = generate(&spec).unwrap();
    let f = feature_view::<f64>(&ds, FeatureMode::Full);
    let (tr, va) = (
        f.subset(&(0..80).collect::<Vec<_>>()),
        f.subset(&(80..120).collect::<Vec<_>>()),
    );
    let opts = TrainOptions {
        epoch_cap: 4,
        ..TrainOptions::default()
    };
    let mut reports = true;
    for cfg in [
        ModelConfig::Mlp(MlpConfig::new(f.dim(), &[16], Activation::Relu)),
        small_rnn(CellKind::Gru, true, Aggregation::MaxPool),
    ] {
        let cfg = match cfg {
            ModelConfig::Rnn(r) => ModelConfig::Rnn(RnnConfig { input_dim: 6, ..r }),
            m => m,
        };
        let (_, a) = train(cfg.clone(), &tr, &va, opts).unwrap();
        let (_, b) = train(cfg.clone(), &tr, &va, opts).unwrap();
        let (_, c) = train(cfg, &tr, &va, TrainOptions { seed: 1, ..opts }).unwrap();
        reports &= a.deterministic_eq(&b) && !a.deterministic_eq(&c);
    }
    Check::new(
        "seed-determinism",
        datasets && reports,
        format!(
            "datasets identical across thread counts and seed-sensitive: {datasets}; \
             train reports reproducible and seed-sensitive: {reports}"
        ),
    )
}

fn chance_baseline() -> Check {
    let spec = TaskSpec::preset(Task::Iid, 1.0, 9)
        .with_samples(4000)
        .with_nodes(10);
    let ds = generate(&spec).unwrap();
    let mut f: Features<f64> = feature_view(&ds, FeatureMode::Full);
    f.labels.shuffle(&mut stream(10));
    let configs = [
        ModelConfig::Mlp(MlpConfig::new(f.dim(), &[64, 64], Activation::Relu)),
        ModelConfig::Rnn(RnnConfig {
            input_dim: 10,
            hidden_dim: 16,
            ..match small_rnn(CellKind::Gru, true, Aggregation::MaxPool) {
                ModelConfig::Rnn(r) => r,
                _ => unreachable!(),
            }
        }),
    ];
    let mut accs = Vec::new();
    for (k, cfg) in configs.into_iter().enumerate() {
        let net = Network::<f64>::init(cfg, 60 + k as u64).unwrap();
        accs.push(net.evaluate(&f).unwrap().1);
    }
    let worst = accs.iter().map(|a| (a - 50.0).abs()).fold(0.0, f64::max);
    Check::new(
        "chance-baseline",
        worst <= CHANCE_BAND,
        format!(
            "untrained MLP / biGRU-max on label-permuted data: {:.1}% / {:.1}% (band 50 +- {CHANCE_BAND})",
            accs[0], accs[1]
        ),
    )
}

fn property_suite() -> (bool, String) {
    let checks: [fn() -> Check; 8] = [
        unitarity,
        liouvillian_agreement,
        rabi,
        gradients,
        smo,
        qncd_round_trip,
        determinism,
        chance_baseline,
    ];
    let mut failed = Vec::new();
    for f in checks {
        let c = f();
        println!(
            "  9.{:<24} {}  {}",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
        if !c.pass {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        (true, "all 8 property checks pass".into())
    } else {
        (false, format!("failed: {}", failed.join(", ")))
    }
}

// ---------------------------------------------------------------- accuracy

struct Runs {
    done: HashMap<(String, ModelName), RunReport>,
}

impl Runs {
    fn get(&mut self, spec: &TaskSpec, model: ModelName) -> RunReport {
        let key = (spec.fingerprint(), model);
        if let Some(r) = self.done.get(&key) {
            return r.clone();
        }
        let ds = cached_dataset(Some(&cache_dir()), spec).expect("dataset");
        let opts = match model.kind() {
            qnc_core::experiment::ModelKind::Svm => RunOptions {
                seed: SEED,
                subsample: Some(SVM_SUBSAMPLE),
                ..RunOptions::default()
            },
            _ => RunOptions {
                seed: SEED,
                epochs: RNN_EPOCH_CAP,
                ..RunOptions::default()
            },
        };
        let start = Instant::now();
        let (_, report) = run(ModelChoice::Roster(model), &ds, &opts).expect("run");
        println!(
            "  [{} on {} t={} M={}: test {:.2}%, {:.0}s]",
            model.name(),
            spec.task.name(),
            spec.t_total,
            spec.steps,
            report.test_accuracy,
            start.elapsed().as_secs_f64()
        );
        self.done.insert(key, report.clone());
        report
    }
}

fn preset(name: &str) -> TaskSpec {
    preset_spec(name, SEED).unwrap()
}

fn at_least(runs: &mut Runs, preset_name: &str, model: ModelName, floor: f64) -> (bool, String) {
    let acc = runs.get(&preset(preset_name), model).test_accuracy;
    (
        acc >= floor,
        format!(
            "{preset_name} {}: test {acc:.2}% (need >= {floor})",
            model.name()
        ),
    )
}

fn criterion(k: usize, runs: &mut Runs) -> (bool, String) {
    match k {
        1 => at_least(runs, "iid-0.1", ModelName::SvmSingle, 90.0),
        2 => at_least(runs, "vs-0.1", ModelName::SvmSingle, 90.0),
        3 => at_least(runs, "nm-0.1", ModelName::SvmSingle, 72.0),
        4 => {
            let acc = runs
                .get(&preset("iid-1"), ModelName::SvmSingle)
                .test_accuracy;
            (
                (46.0..=56.0).contains(&acc),
                format!("iid-1 m-svm-single: test {acc:.2}% (need within [46, 56])"),
            )
        }
        5 => at_least(runs, "iid-1", ModelName::BiGruMax, 85.0),
        6 => {
            let spec = preset("nm-1");
            let rnn = runs.get(&spec, ModelName::BiGruMax).test_accuracy;
            let svm = runs.get(&spec, ModelName::SvmSingle).test_accuracy;
            (
                rnn - svm >= 10.0,
                format!(
                    "nm-1: m-bigru-max {rnn:.2}% - m-svm-single {svm:.2}% = {:.2} points (need >= 10)",
                    rnn - svm
                ),
            )
        }
        7 => {
            let [m15, m30] = scaling_specs(SEED);
            let a = runs.get(&m15, ModelName::BiGruMax).test_accuracy;
            let b = runs.get(&m30, ModelName::BiGruMax).test_accuracy;
            (
                b - a >= 5.0,
                format!(
                    "iid t=2 m-bigru-max: M=30 {b:.2}% - M=15 {a:.2}% = {:.2} points (need >= 5)",
                    b - a
                ),
            )
        }
        8 => {
            let base = preset("nm-1");
            let accs: Vec<f64> = [15, 30, 45]
                .into_iter()
                .map(|m| {
                    runs.get(&base.clone().with_steps(m), ModelName::BiGruMax)
                        .test_accuracy
                })
                .collect();
            let monotone = accs.windows(2).all(|w| w[1] >= w[0] - 2.0);
            (
                monotone && accs[2] >= 85.0,
                format!(
                    "nm-1 m-bigru-max M=15/30/45: {:.2}% / {:.2}% / {:.2}% \
                     (need nondecreasing within 2 points and M=45 >= 85)",
                    accs[0], accs[1], accs[2]
                ),
            )
        }
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .filter(|k| (1..=9).contains(k))
        .collect();
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut failures = 0;
    let mut report = |k: usize, pass: bool, detail: &str, secs: f64| {
        println!(
            "criterion {k}: {}  {detail}  [{secs:.0}s]",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failures += 1;
        }
    };

    let mut properties_ok = true;
    if wanted(9) {
        let start = Instant::now();
        let (pass, detail) = property_suite();
        properties_ok = pass;
        report(9, pass, &detail, start.elapsed().as_secs_f64());
    }

    let mut runs = Runs {
        done: HashMap::new(),
    };
    for k in (1..=8).filter(|&k| wanted(k)) {
        if !properties_ok {
            report(k, false, "not run: property suite failed", 0.0);
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = criterion(k, &mut runs);
        report(k, pass, &detail, start.elapsed().as_secs_f64());
    }

    if failures == 0 {
        println!("acceptance: all selected criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
