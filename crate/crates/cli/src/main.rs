use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mtbo_core::bo::{
    mtbo_run, read_trace_csv, stbo_run, write_trace_csv, BoError, InferenceMode, Objective, TraceRecord, YBestRule,
};
use mtbo_core::discretize::io::{read_mask, read_volume, write_levels};
use mtbo_core::discretize::{discretize, strategy_by_index, strategy_grid, DiscretizationStrategy};
use mtbo_core::harness::{
    build_datasets, build_report, compare_runs, eval_landscape, gen_phantom, merge_task_traces, read_landscapes,
    read_phantoms, synthetic_tasks, write_curves, write_landscapes, write_phantoms, write_surfaces, CompareConfig,
    DatasetObjective, LandscapeGrid, PhantomSpec, Reference, RejectedCase, RunReport,
};
use mtbo_core::radiomics::{extract_all, FEATURE_NAMES};
use mtbo_core::svm::{cv_loss, CvConfig, Dataset, SvmHyperparams};

#[derive(Parser)]
#[command(name = "mtbo", version, about = "Multi-task Bayesian optimization of RBF-SVM hyperparameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discretize the masked ROI of one volume under one of the nine strategies.
    Discretize {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..9))]
        strategy_index: u8,
        /// Raw u16 level grid; the sidecar goes next to it with a .json extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the 48 features of one case.
    Extract {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, conflicts_with = "strategy_index", required_unless_present = "strategy_index")]
        all_strategies: bool,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..9))]
        strategy_index: Option<u8>,
        /// Defaults to the volume file stem.
        #[arg(long)]
        case_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated misclassification rate at one (C, γ).
    CvLoss {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic two-class nodule cohort.
    PhantomGen(PhantomArgs),
    /// Extract features of a phantom cohort under all nine strategies.
    BuildDatasets {
        /// Directory written by phantom-gen.
        #[arg(long)]
        phantoms: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated loss on a full log-spaced (C, γ) grid, per dataset.
    Landscape {
        #[arg(long, num_args = 1.., required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long, default_value_t = 61)]
        grid_side: usize,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-task or multi-task Bayesian optimization; writes the trace CSV.
    Tune(TuneArgs),
    /// STBO vs MTBO comparison: JSON report plus curve and surface CSVs.
    Report(ReportArgs),
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 60)]
    cases: usize,
    /// Cube side in voxels.
    #[arg(long, default_value_t = 24)]
    size: usize,
    #[arg(long, default_value_t = 4.0)]
    radius_min: f64,
    #[arg(long, default_value_t = 8.0)]
    radius_max: f64,
    #[arg(long, default_value_t = 0.5)]
    effect: f64,
    #[arg(long, default_value_t = 5.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Stbo,
    Mtbo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Inference {
    Exact,
    Impute,
}

impl From<Inference> for InferenceMode {
    fn from(i: Inference) -> Self {
        match i {
            Inference::Exact => InferenceMode::Exact,
            Inference::Impute => InferenceMode::Impute,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum YBest {
    Global,
    PerTask,
}

impl From<YBest> for YBestRule {
    fn from(y: YBest) -> Self {
        match y {
            YBest::Global => YBestRule::Global,
            YBest::PerTask => YBestRule::PerTask,
        }
    }
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, default_value_t = 10)]
    iter1: usize,
    /// Defaults to iter1 + M·(30 − iter1), i.e. 30 evaluations per task.
    #[arg(long)]
    iter2: Option<usize>,
    /// STBO iterations per task.
    #[arg(long, default_value_t = 30)]
    stbo_iters: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Inference::Exact)]
    inference: Inference,
    #[arg(long, value_enum, default_value_t = YBest::Global)]
    y_best: YBest,
    /// Random restarts of the surrogate's likelihood optimizer.
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Omit wall-clock times so that reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

impl BudgetArgs {
    fn compare_config(&self, m: usize) -> Result<CompareConfig> {
        ensure!(self.iter1 >= 1, "--iter1 must be at least 1");
        let mut cfg = CompareConfig::with_budget(m, self.iter1, 30, self.seed);
        if let Some(iter2) = self.iter2 {
            ensure!(iter2 > self.iter1, "--iter2 must exceed --iter1");
            cfg.iter2 = iter2;
        }
        cfg.stbo_iters = self.stbo_iters;
        cfg.inference = self.inference.into();
        cfg.y_best = self.y_best.into();
        cfg.restarts = self.restarts;
        cfg.record_timing = !self.no_timing;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, num_args = 1.., required = true)]
    datasets: Vec<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Dataset CSVs, one per task.
    #[arg(long, num_args = 1.., conflicts_with = "synthetic", required_unless_present = "synthetic")]
    datasets: Vec<PathBuf>,
    /// Use M synthetic correlated tasks instead of datasets.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    correlation: f64,
    /// Landscape CSV (from `landscape`) for RMSE and reference optima.
    #[arg(long)]
    landscape: Option<PathBuf>,
    /// Rejected-case list written by `build-datasets`.
    #[arg(long)]
    rejected: Option<PathBuf>,
    /// Rebuild the report from existing STBO and MTBO trace CSVs instead of rerunning.
    #[arg(long, num_args = 2, value_names = ["STBO", "MTBO"])]
    from_traces: Option<Vec<PathBuf>>,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Index of `build-datasets` output.
#[derive(Serialize, Deserialize)]
struct DatasetIndex {
    datasets: Vec<DatasetEntry>,
    rejected: Vec<RejectedCase>,
}

#[derive(Serialize, Deserialize)]
struct DatasetEntry {
    strategy_index: usize,
    label: String,
    strategy: DiscretizationStrategy,
    file: String,
    cases: usize,
}

fn main() -> Result<()> {
    init_threads()?;
    match Cli::parse().command {
        Command::Discretize { volume, mask, strategy_index, out } => {
            let roi = discretize(
                &read_volume(&volume)?,
                &read_mask(&mask)?,
                strategy_by_index(usize::from(strategy_index))?,
            )?;
            let sidecar = write_levels(&out, &roi)?;
            eprintln!("wrote {} and {}", out.display(), sidecar.display());
        }
        Command::Extract { volume, mask, all_strategies, strategy_index, case_id, out } => {
            let indices: Vec<usize> =
                if all_strategies { (0..9).collect() } else { vec![usize::from(strategy_index.unwrap())] };
            let case_id = match case_id {
                Some(id) => id,
                None => file_stem(&volume),
            };
            extract(&volume, &mask, &indices, &case_id, &out)?;
        }
        Command::CvLoss { data, c, gamma, folds, seed } => {
            ensure!(folds >= 2, "--folds must be at least 2");
            let ds = Dataset::read_csv_path(&data)?;
            let out = cv_loss(&ds, SvmHyperparams::new(c, gamma)?, &CvConfig::new(folds, seed));
            println!("{}", serde_json::json!({ "loss": out.loss, "non_converged": out.non_converged }));
        }
        Command::PhantomGen(a) => {
            let spec = PhantomSpec {
                n_cases: a.cases,
                dims: [a.size; 3],
                radius_range: (a.radius_min, a.radius_max),
                class_effect: a.effect,
                noise_sd: a.noise,
                seed: a.seed,
            };
            let manifest = write_phantoms(&a.out, &gen_phantom(&spec)?)?;
            write_json(&a.out.join("spec.json"), &spec)?;
            eprintln!("wrote {} cases, manifest {}", spec.n_cases, manifest.display());
        }
        Command::BuildDatasets { phantoms, out } => build_dataset_files(&phantoms, &out)?,
        Command::Landscape { datasets, grid_side, folds, seed, out } => {
            ensure!(folds >= 2, "--folds must be at least 2");
            let cv = CvConfig::new(folds, seed);
            let grids = datasets
                .iter()
                .enumerate()
                .map(|(t, p)| Ok(eval_landscape(&Dataset::read_csv_path(p)?, &cv, t, grid_side)?))
                .collect::<Result<Vec<_>>>()?;
            write_landscapes(&grids, create(&out)?)?;
        }
        Command::Tune(a) => tune(&a)?,
        Command::Report(a) => report(&a)?,
    }
    Ok(())
}

/// Caps rayon's worker count with `MTBO_THREADS` (default: logical cores).
fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MTBO_THREADS") {
        let n: usize = v.parse().with_context(|| format!("MTBO_THREADS={v:?} is not a count"))?;
        ensure!(n >= 1, "MTBO_THREADS must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn extract(volume: &Path, mask: &Path, indices: &[usize], case_id: &str, out: &Path) -> Result<()> {
    let vol = read_volume(volume)?;
    let mask = read_mask(mask)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    let mut header = vec!["case_id".to_string(), "strategy_index".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for &i in indices {
        let fv = extract_all(&vol, &mask, strategy_by_index(i)?)?;
        let mut row = vec![case_id.to_string(), i.to_string()];
        row.extend(fv.values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn build_dataset_files(phantoms: &Path, out: &Path) -> Result<()> {
    let cases = read_phantoms(phantoms)?;
    let strategies = strategy_grid();
    let build = build_datasets(&cases, &strategies)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut entries = Vec::new();
    for (i, (ds, s)) in build.datasets.iter().zip(&strategies).enumerate() {
        let file = format!("dataset_{i}.csv");
        ds.write_csv_path(&out.join(&file))?;
        entries.push(DatasetEntry { strategy_index: i, label: s.label(), strategy: *s, file, cases: ds.len() });
    }
    write_json(&out.join("datasets.json"), &DatasetIndex { datasets: entries, rejected: build.rejected.clone() })?;
    eprintln!(
        "{} datasets of {} cases ({} rejected)",
        build.datasets.len(),
        build.datasets[0].len(),
        build.rejected.len()
    );
    Ok(())
}

fn dataset_objectives(paths: &[PathBuf], folds: usize, seed: u64) -> Result<Vec<DatasetObjective>> {
    ensure!(folds >= 2, "--folds must be at least 2");
    let cv = CvConfig::new(folds, seed);
    paths
        .iter()
        .map(|p| Ok(DatasetObjective { data: Dataset::read_csv_path(p).with_context(|| p.display().to_string())?, cv }))
        .collect()
}

fn tune(a: &TuneArgs) -> Result<()> {
    let objectives = dataset_objectives(&a.datasets, a.budget.folds, a.budget.seed)?;
    let refs: Vec<&dyn Objective> = objectives.iter().map(|o| o as &dyn Objective).collect();
    let cfg = a.budget.compare_config(refs.len())?;
    let (trace, failure) = match a.mode {
        Mode::Stbo => {
            let mut traces = Vec::new();
            let mut failure = None;
            for f in &refs {
                match stbo_run(*f, &cfg.stbo()) {
                    Ok(t) => traces.push(t),
                    Err(BoError::Aborted { source, trace }) => {
                        traces.push(trace);
                        failure.get_or_insert(source.to_string());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            (merge_task_traces(&traces), failure)
        }
        Mode::Mtbo => match mtbo_run(&refs, &cfg.mtbo()) {
            Ok(r) => (r.trace, None),
            Err(BoError::Aborted { source, trace }) => (trace, Some(source.to_string())),
            Err(e) => return Err(e.into()),
        },
    };
    let mut w = create(&a.out)?;
    write_trace_csv(&trace, &mut w)?;
    w.flush()?;
    if let Some(msg) = failure {
        bail!("run aborted after {} evaluations (partial trace written): {msg}", trace.len());
    }
    Ok(())
}

fn read_trace(path: &Path, m: usize) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_trace_csv(file, m).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// Objectives, labels and (for synthetic tasks) known optima.
type Tasks = (Vec<Box<dyn Objective>>, Vec<String>, Option<Vec<f64>>);

fn report(a: &ReportArgs) -> Result<()> {
    let landscapes: Option<Vec<LandscapeGrid>> = match &a.landscape {
        Some(p) => Some(read_landscapes(File::open(p).with_context(|| format!("opening {}", p.display()))?)?),
        None => None,
    };
    let (objectives, labels, known): Tasks = match a.synthetic {
        Some(m) => {
            let tasks = synthetic_tasks(m, a.correlation, a.budget.seed)?;
            let known = tasks.iter().map(|t| t.optimum_value).collect();
            let labels = (1..=m).map(|t| format!("synthetic {t}")).collect();
            (tasks.into_iter().map(|t| Box::new(t) as Box<dyn Objective>).collect(), labels, Some(known))
        }
        None => {
            let objs = dataset_objectives(&a.datasets, a.budget.folds, a.budget.seed)?;
            let labels = a.datasets.iter().map(|p| file_stem(p)).collect();
            (objs.into_iter().map(|o| Box::new(o) as Box<dyn Objective>).collect(), labels, None)
        }
    };
    let m = objectives.len();
    if let Some(g) = &landscapes {
        ensure!(g.len() == m, "landscape has {} tasks, expected {m}", g.len());
    }
    let reference = match (&known, &landscapes) {
        (Some(k), _) => Reference::Known(k),
        (None, Some(_)) => Reference::Landscape,
        (None, None) => Reference::BestFound,
    };
    let cfg = a.budget.compare_config(m)?;
    let (stbo, mtbo, mut report): (Vec<TraceRecord>, Vec<TraceRecord>, RunReport) = match &a.from_traces {
        Some(paths) => {
            let (s, t) = (read_trace(&paths[0], m)?, read_trace(&paths[1], m)?);
            let r = build_report(&s, &t, &labels, landscapes.as_deref(), reference, &cfg)?;
            (s, t, r)
        }
        None => {
            let refs: Vec<&dyn Objective> = objectives.iter().map(|o| o.as_ref()).collect();
            let c = compare_runs(&refs, &labels, landscapes.as_deref(), reference, &cfg)?;
            (c.stbo_trace, c.mtbo_trace, c.report)
        }
    };
    if let Some(p) = &a.rejected {
        let index: DatasetIndex =
            serde_json::from_reader(File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
        report.rejected_cases = index.rejected;
    }

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("report.json"), &report)?;
    if a.from_traces.is_none() {
        for (name, trace) in [("stbo_trace.csv", &stbo), ("mtbo_trace.csv", &mtbo)] {
            let mut w = create(&a.out.join(name))?;
            write_trace_csv(trace, &mut w)?;
            w.flush()?;
        }
    }
    let mut w = create(&a.out.join("curves.csv"))?;
    write_curves(&stbo, &mtbo, m, &mut w)?;
    w.flush()?;
    if let Some(g) = &landscapes {
        let mut w = create(&a.out.join("surfaces.csv"))?;
        write_surfaces(&report, g, &mut w)?;
        w.flush()?;
    }
    let s = &report.summary;
    eprintln!(
        "evaluations to target, summed over {m} tasks: STBO {} vs MTBO {}",
        s.stbo_total_evals_to_target, s.mtbo_total_evals_to_target
    );
    Ok(())
}
