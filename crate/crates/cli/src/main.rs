//! `qnc`: generate noisy quantum-walk datasets, train and evaluate the
//! model roster, and assemble result tables.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qnc_core::dataset::{
    generate, Dataset, SplitName, Task, TaskSpec, DEFAULT_EDGE_PROB, DEFAULT_NODES,
    DEFAULT_SAMPLES, DEFAULT_STEPS,
};
use qnc_core::experiment::{
    self, cached_dataset, dataset_file_name, scaling_specs, sweep_csv, sweep_m, ModelChoice,
    ModelName, ResultsTable, RunOptions, RunReport, TrainedModel,
};
use qnc_core::ErrorKind;

#[derive(Parser)]
#[command(
    name = "qnc",
    version,
    about = "Quantum noise classification experiments"
)]
struct Cli {
    /// Root of the output tree (datasets/, models/, reports/).
    #[arg(long, global = true, default_value = "qnc-out")]
    out_dir: PathBuf,

    /// Worker threads (defaults to QNC_THREADS, then all cores).
    #[arg(long, global = true, env = "QNC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write it as QNCD.
    Generate(GenerateArgs),
    /// Train one roster model on a dataset.
    Train(TrainArgs),
    /// Score a trained model on one split of a dataset.
    Eval(EvalArgs),
    /// Accuracy against the number of steps at fixed total time.
    SweepM(SweepArgs),
    /// Compare total time 2 with 15 and with 30 steps on the IID task.
    Scaling(ScalingArgs),
    /// Collect run reports into the model × dataset table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    task: Task,
    #[arg(long)]
    t_total: f64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    nodes: usize,
    #[arg(long, default_value_t = DEFAULT_EDGE_PROB)]
    edge_prob: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (default: datasets/ under the output tree).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Self-transition weight of the coloured VS class.
    #[arg(long)]
    stickiness: Option<f64>,
    /// Replace each recorded distribution by a k-shot estimate.
    #[arg(long)]
    shots: Option<u32>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampled configurations; above 1 runs the hyperparameter search.
    #[arg(long, default_value_t = 1)]
    budget: usize,
    /// Epoch cap.
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Train on a balanced subsample of this size.
    #[arg(long)]
    subsample: Option<usize>,
}

impl TrainFlags {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            budget: self.budget,
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            lr: self.lr,
            subsample: self.subsample,
            ..RunOptions::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    data: PathBuf,
    /// Model file (default: models/ under the output tree).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "nm")]
    task: Task,
    #[arg(long, default_value_t = 1.0)]
    t_total: f64,
    #[arg(long, value_delimiter = ',', default_value = "15,30,45,60")]
    m_list: Vec<usize>,
    #[arg(long, default_value = "m-bigru-max")]
    model: String,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    nodes: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Dataset seed (default: the training seed).
    #[arg(long)]
    data_seed: Option<u64>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, default_value = "m-bigru-max")]
    model: String,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    nodes: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Print the planned datasets and stop.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of run reports (default: reports/ under the output tree).
    #[arg(long)]
    reports: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not set the thread count: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}

fn dispatch(cli: &Cli) -> qnc_core::Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(&cli.out_dir, a),
        Command::Train(a) => cmd_train(&cli.out_dir, a),
        Command::Eval(a) => cmd_eval(&cli.out_dir, a),
        Command::SweepM(a) => cmd_sweep(&cli.out_dir, a),
        Command::Scaling(a) => cmd_scaling(&cli.out_dir, a),
        Command::Report(a) => cmd_report(&cli.out_dir, a),
    }
}

fn ensure_parent(path: &Path) -> qnc_core::Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            std::fs::create_dir_all(p)?;
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> qnc_core::Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn parse_model(name: &str) -> qnc_core::Result<ModelChoice> {
    name.parse()
}

fn summary(ds: &Dataset, path: &Path) -> String {
    let s = &ds.spec;
    let [c0, c1] = ds.label_counts();
    format!(
        "{}\ntask={} t_total={} steps={} nodes={} edge_prob={} samples={} (class 0: {c0}, class 1: {c1}) seed={} fingerprint={}",
        path.display(),
        s.task,
        s.t_total,
        s.steps,
        s.nodes,
        s.edge_prob,
        ds.len(),
        s.master_seed,
        s.fingerprint()
    )
}

fn cmd_generate(out_dir: &Path, a: &GenerateArgs) -> qnc_core::Result<()> {
    let mut spec = TaskSpec::preset(a.task, a.t_total, a.seed)
        .with_steps(a.steps)
        .with_nodes(a.nodes)
        .with_edge_prob(a.edge_prob)
        .with_samples(a.samples)
        .with_shots(a.shots);
    if let Some(x) = a.stickiness {
        spec = spec.with_stickiness(x)?;
    }
    spec.validate()?;
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join("datasets").join(dataset_file_name(&spec)));
    let ds = generate(&spec)?;
    ensure_parent(&path)?;
    ds.save(&path)?;
    println!("{}", summary(&ds, &path));
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into())
}

fn save_run(
    out_dir: &Path,
    stem: &str,
    model_path: Option<&Path>,
    model: &TrainedModel,
    report: &RunReport,
) -> qnc_core::Result<PathBuf> {
    let model_path = model_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("models").join(format!("{stem}.model")));
    ensure_parent(&model_path)?;
    model.save(&model_path)?;
    let reports = out_dir.join("reports");
    write_json(&reports.join(format!("{stem}.json")), report)?;
    if let Some(tr) = &report.train_report {
        std::fs::write(reports.join(format!("{stem}.epochs.csv")), tr.to_csv())?;
    }
    Ok(model_path)
}

fn cmd_train(out_dir: &Path, a: &TrainArgs) -> qnc_core::Result<()> {
    let model = parse_model(&a.model)?;
    let ds = Dataset::load(&a.data)?;
    let opts = a.flags.options();
    let (trained, report) = experiment::run(model, &ds, &opts)?;
    let stem = format!("{}-{}-s{}", model.name(), file_stem(&a.data), opts.seed);
    let path = save_run(out_dir, &stem, a.out.as_deref(), &trained, &report)?;
    println!(
        "{}: validation {:.1}%, test {:.1}% ({} train / {} val / {} test) -> {}",
        model.name(),
        report.val_accuracy,
        report.test_accuracy,
        report.n_train,
        report.n_val,
        report.n_test,
        path.display()
    );
    Ok(())
}

fn cmd_eval(out_dir: &Path, a: &EvalArgs) -> qnc_core::Result<()> {
    let split: SplitName = a.split.parse()?;
    let model = TrainedModel::load(&a.model)?;
    let ds = Dataset::load(&a.data)?;
    let rec = model.evaluate(&ds, split)?;
    if split == SplitName::Train {
        log::warn!("scoring the training split; this overstates generalisation");
    }
    println!(
        "{} on {} split: {:.1}% (n = {})",
        rec.model, a.split, rec.accuracy, rec.n
    );
    let path = out_dir.join("reports").join("eval").join(format!(
        "{}-{}-{}.json",
        file_stem(&a.model),
        file_stem(&a.data),
        a.split
    ));
    write_json(&path, &rec)
}

fn cmd_sweep(out_dir: &Path, a: &SweepArgs) -> qnc_core::Result<()> {
    let model = parse_model(&a.model)?;
    let opts = a.flags.options();
    let base = TaskSpec::preset(a.task, a.t_total, a.data_seed.unwrap_or(opts.seed))
        .with_nodes(a.nodes)
        .with_samples(a.samples);
    let points = sweep_m(
        &base,
        &a.m_list,
        model,
        &opts,
        Some(&out_dir.join("datasets")),
    )?;
    let dir = out_dir.join("reports").join("sweep");
    let stem = format!(
        "sweep-{}-t{}-{}-s{}",
        a.task,
        a.t_total,
        model.name(),
        opts.seed
    );
    for p in &points {
        write_json(&dir.join(format!("{stem}-m{}.json", p.steps)), &p.report)?;
    }
    let csv = sweep_csv(&points);
    ensure_parent(&dir.join("x"))?;
    std::fs::write(dir.join(format!("{stem}.csv")), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_scaling(out_dir: &Path, a: &ScalingArgs) -> qnc_core::Result<()> {
    let model = parse_model(&a.model)?;
    let opts = a.flags.options();
    let specs = scaling_specs(a.data_seed.unwrap_or(opts.seed))
        .map(|s| s.with_nodes(a.nodes).with_samples(a.samples));
    if a.dry_run {
        for s in &specs {
            s.validate()?;
            println!("{}", s.to_json());
        }
        return Ok(());
    }
    let dir = out_dir.join("reports").join("scaling");
    let mut rows = String::from("steps,delta,gamma\n");
    for spec in &specs {
        let ds = cached_dataset(Some(&out_dir.join("datasets")), spec)?;
        let (_, report) = experiment::run(model, &ds, &opts)?;
        write_json(
            &dir.join(format!(
                "scaling-{}-m{}-s{}.json",
                model.name(),
                spec.steps,
                opts.seed
            )),
            &report,
        )?;
        rows.push_str(&format!(
            "{},{},{:.1}\n",
            spec.steps,
            spec.delta(),
            report.test_accuracy
        ));
    }
    std::fs::write(
        dir.join(format!("scaling-{}-s{}.csv", model.name(), opts.seed)),
        &rows,
    )?;
    print!("{rows}");
    Ok(())
}

fn cmd_report(out_dir: &Path, a: &ReportArgs) -> qnc_core::Result<()> {
    let dir = a.reports.clone().unwrap_or_else(|| out_dir.join("reports"));
    let reports = experiment::load_reports(&dir)?;
    let table =
        ResultsTable::from_reports(reports.iter().map(|(p, r)| (p.display().to_string(), r)));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("table.csv"), table.to_csv())?;
    print!("{}", table.to_text());
    println!(
        "{} of {} cells filled",
        table.filled(),
        ModelName::ALL.len() * experiment::PRESETS.len()
    );
    Ok(())
}
