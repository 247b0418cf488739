use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::datasets::RejectedCase;
use super::landscape::{predicted_surface, rmse_of_surface, LandscapeGrid, Rmse};
use super::HarnessError;
use crate::bo::{
    best_so_far, mtbo_run, stbo_run, task_optima, BoError, MtboConfig, Objective, StboConfig, SurrogateSettings,
    TaskOptimum, TraceRecord, YBestRule,
};
use crate::mtgp::{fit, FitOptions, InferenceMode, Observation, ObservationSet};
use crate::rng::{derive_seed, stream};

pub const RMSE_FOOTER: &str = "RMSE averages over every grid point: the divisor is grid_side², not (grid_side − 1)².";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub iter1: usize,
    pub iter2: usize,
    /// STBO iterations per task; matches MTBO's per-task count by default.
    pub stbo_iters: usize,
    pub seed: u64,
    pub inference: InferenceMode,
    pub y_best: YBestRule,
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative distance to the reference optimum counted as "reached".
    pub threshold: f64,
    pub record_timing: bool,
}

impl CompareConfig {
    /// `iter1` shared iterations, then round-robin until each of the `m`
    /// tasks has `per_task` evaluations.
    pub fn with_budget(m: usize, iter1: usize, per_task: usize, seed: u64) -> Self {
        let surrogate = SurrogateSettings::default();
        Self {
            iter1,
            iter2: iter1 + m * per_task.saturating_sub(iter1),
            stbo_iters: per_task,
            seed,
            inference: InferenceMode::Exact,
            y_best: YBestRule::Global,
            restarts: surrogate.restarts,
            max_iter: surrogate.max_iter,
            threshold: 0.05,
            record_timing: true,
        }
    }

    /// `Iter1 = 10` and 30 evaluations per task (`Iter2 = 190` for nine tasks).
    pub fn paper(m: usize, seed: u64) -> Self {
        Self::with_budget(m, 10, 30, seed)
    }

    pub fn surrogate(&self) -> SurrogateSettings {
        SurrogateSettings { restarts: self.restarts, max_iter: self.max_iter, ..SurrogateSettings::default() }
    }

    pub fn stbo(&self) -> StboConfig {
        StboConfig {
            iters: self.stbo_iters,
            seed: self.seed,
            surrogate: self.surrogate(),
            record_timing: self.record_timing,
        }
    }

    pub fn mtbo(&self) -> MtboConfig {
        MtboConfig {
            iter1: self.iter1,
            iter2: self.iter2,
            seed: self.seed,
            inference: self.inference,
            y_best: self.y_best,
            surrogate: self.surrogate(),
            record_timing: self.record_timing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimumSummary {
    pub log10_c: f64,
    pub log10_gamma: f64,
    pub c: f64,
    pub gamma: f64,
    pub raw_loss: f64,
    pub global_iter: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    /// One-based, as in the trace files.
    pub task: usize,
    pub label: String,
    pub stbo: Option<OptimumSummary>,
    pub mtbo: Option<OptimumSummary>,
    pub reference_loss: f64,
    pub target_loss: f64,
    pub stbo_evals_to_target: Option<usize>,
    pub mtbo_evals_to_target: Option<usize>,
    pub rmse_single: Option<Rmse>,
    pub rmse_multi: Option<Rmse>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    /// Sum over tasks of evaluations to target; a miss counts as budget + 1.
    pub stbo_total_evals_to_target: usize,
    pub mtbo_total_evals_to_target: usize,
    pub multi_rmse_wins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: CompareConfig,
    pub num_tasks: usize,
    pub tasks: Vec<TaskReport>,
    pub summary: ReportSummary,
    pub rejected_cases: Vec<RejectedCase>,
    pub notes: Vec<String>,
    /// Posterior-mean surfaces behind the RMSE values, per task.
    #[serde(skip)]
    pub surfaces: Vec<TaskSurface>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSurface {
    pub task: usize,
    pub single: Vec<f64>,
    pub multi: Vec<f64>,
}

/// Reference optimum per task used for "evaluations to target".
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    /// Known optimum values, e.g. from a grid oracle.
    Known(&'a [f64]),
    /// Minimum over each task's landscape grid.
    Landscape,
    /// Best value either method found.
    BestFound,
}

/// 1-based number of `task` evaluations until the running best is ≤ `target`.
pub fn evals_to_target(trace: &[TraceRecord], task: usize, target: f64) -> Option<usize> {
    best_so_far(trace, task).iter().position(|&b| b <= target).map(|i| i + 1)
}

/// Concatenates per-task single-task traces (task 0 each) into one trace
/// with task ids, task-major. `global_iter` stays the per-task iteration.
pub fn merge_task_traces(traces: &[Vec<TraceRecord>]) -> Vec<TraceRecord> {
    let m = traces.len();
    let mut best = vec![f64::INFINITY; m];
    let mut out = Vec::new();
    for (t, trace) in traces.iter().enumerate() {
        for r in trace {
            best[t] = best[t].min(r.raw_loss);
            out.push(TraceRecord { task: t, best_so_far_per_task: best.clone(), ..r.clone() });
        }
    }
    out
}

fn summarize(o: &TaskOptimum, trace: &[TraceRecord]) -> OptimumSummary {
    OptimumSummary {
        log10_c: o.point.coords[0],
        log10_gamma: o.point.coords[1],
        c: o.c,
        gamma: o.gamma,
        raw_loss: o.raw_loss,
        global_iter: o.global_iter,
        evaluations: trace.iter().filter(|r| r.task == o.task).count(),
    }
}

fn observations(trace: &[TraceRecord], task: Option<usize>) -> Vec<Observation> {
    trace
        .iter()
        .filter(|r| task.map_or(true, |t| r.task == t))
        .map(|r| Observation::new(r.point, if task.is_some() { 0 } else { r.task }, r.transformed_loss))
        .collect()
}

fn fit_options(cfg: &CompareConfig, tag: u64, mode: InferenceMode) -> FitOptions {
    FitOptions {
        restarts: cfg.restarts,
        seed: derive_seed(cfg.seed, &[stream::REPORT, tag]),
        mode,
        max_iter: cfg.max_iter,
    }
}

/// Posterior-mean surfaces: a one-task GP per task on its STBO data and one
/// multi-task GP on the whole MTBO trace.
fn surfaces(
    stbo: &[TraceRecord],
    mtbo: &[TraceRecord],
    m: usize,
    landscapes: &[LandscapeGrid],
    cfg: &CompareConfig,
) -> Result<Vec<TaskSurface>, HarnessError> {
    let multi_set = ObservationSet::from_observations(m, observations(mtbo, None))?;
    let multi = fit(&multi_set, &fit_options(cfg, m as u64, cfg.inference))?;
    landscapes
        .par_iter()
        .map(|g| {
            let single_set = ObservationSet::from_observations(1, observations(stbo, Some(g.task)))?;
            let single = fit(&single_set, &fit_options(cfg, g.task as u64, InferenceMode::Exact))?;
            Ok(TaskSurface {
                task: g.task,
                single: predicted_surface(&single, g, 0),
                multi: predicted_surface(&multi, g, g.task),
            })
        })
        .collect()
}

/// Builds the report purely from the two traces (plus landscapes for RMSE).
/// Surrogates for RMSE are refitted with seeds derived from `cfg.seed`.
pub fn build_report(
    stbo: &[TraceRecord],
    mtbo: &[TraceRecord],
    labels: &[String],
    landscapes: Option<&[LandscapeGrid]>,
    reference: Reference<'_>,
    cfg: &CompareConfig,
) -> Result<RunReport, HarnessError> {
    let m = labels.len();
    let stbo_opt = task_optima(stbo, m);
    let mtbo_opt = task_optima(mtbo, m);
    let find = |opts: &[TaskOptimum], t: usize| opts.iter().find(|o| o.task == t).cloned();

    let surfaces = match landscapes {
        Some(grids) => surfaces(stbo, mtbo, m, grids, cfg)?,
        None => Vec::new(),
    };

    let mut tasks = Vec::with_capacity(m);
    for (t, label) in labels.iter().enumerate() {
        let found = [find(&stbo_opt, t), find(&mtbo_opt, t)];
        let reference_loss = match reference {
            Reference::Known(v) => v[t],
            Reference::Landscape => landscapes
                .and_then(|g| g.iter().find(|g| g.task == t))
                .map(|g| g.argmin().1)
                .ok_or_else(|| HarnessError::InvalidSpec(format!("no landscape for task {}", t + 1)))?,
            Reference::BestFound => found.iter().flatten().map(|o| o.raw_loss).fold(f64::INFINITY, f64::min),
        };
        let target_loss = reference_loss + cfg.threshold * reference_loss.abs();
        let grid = landscapes.and_then(|g| g.iter().find(|g| g.task == t));
        let surface = surfaces.iter().find(|s| s.task == t);
        let (rmse_single, rmse_multi) = match (grid, surface) {
            (Some(g), Some(s)) => (Some(rmse_of_surface(&s.single, g)), Some(rmse_of_surface(&s.multi, g))),
            _ => (None, None),
        };
        tasks.push(TaskReport {
            task: t + 1,
            label: label.clone(),
            stbo: found[0].as_ref().map(|o| summarize(o, stbo)),
            mtbo: found[1].as_ref().map(|o| summarize(o, mtbo)),
            reference_loss,
            target_loss,
            stbo_evals_to_target: evals_to_target(stbo, t, target_loss),
            mtbo_evals_to_target: evals_to_target(mtbo, t, target_loss),
            rmse_single,
            rmse_multi,
        });
    }

    let per_task_budget = |trace: &[TraceRecord], t: usize| trace.iter().filter(|r| r.task == t).count() + 1;
    let summary = ReportSummary {
        stbo_total_evals_to_target: tasks
            .iter()
            .map(|r| r.stbo_evals_to_target.unwrap_or_else(|| per_task_budget(stbo, r.task - 1)))
            .sum(),
        mtbo_total_evals_to_target: tasks
            .iter()
            .map(|r| r.mtbo_evals_to_target.unwrap_or_else(|| per_task_budget(mtbo, r.task - 1)))
            .sum(),
        multi_rmse_wins: landscapes.map(|_| {
            tasks
                .iter()
                .filter(
                    |r| matches!((r.rmse_multi, r.rmse_single), (Some(a), Some(b)) if a.transformed <= b.transformed),
                )
                .count()
        }),
    };
    let mut notes = Vec::new();
    if landscapes.is_some() {
        notes.push(RMSE_FOOTER.to_string());
    }
    Ok(RunReport { config: *cfg, num_tasks: m, tasks, summary, rejected_cases: Vec::new(), notes, surfaces })
}

/// Output of [`compare_runs`]: both traces and the report. A failed MTBO run
/// leaves its partial trace in place and is described in the report notes.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub stbo_trace: Vec<TraceRecord>,
    pub mtbo_trace: Vec<TraceRecord>,
    pub report: RunReport,
}

/// Runs STBO on every task (concurrently) and MTBO on all tasks with the
/// same seed, then reports.
pub fn compare_runs(
    objectives: &[&dyn Objective],
    labels: &[String],
    landscapes: Option<&[LandscapeGrid]>,
    reference: Reference<'_>,
    cfg: &CompareConfig,
) -> Result<Comparison, HarnessError> {
    if labels.len() != objectives.len() {
        return Err(HarnessError::InvalidSpec(format!("{} labels for {} tasks", labels.len(), objectives.len())));
    }
    let mut notes = Vec::new();
    let stbo_cfg = cfg.stbo();
    let per_task: Vec<Vec<TraceRecord>> = objectives
        .par_iter()
        .enumerate()
        .map(|(t, f)| match stbo_run(*f, &stbo_cfg) {
            Ok(trace) => (trace, None),
            Err(BoError::Aborted { source, trace }) => (trace, Some(format!("STBO task {} aborted: {source}", t + 1))),
            Err(e) => (Vec::new(), Some(format!("STBO task {}: {e}", t + 1))),
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(trace, note)| {
            notes.extend(note);
            trace
        })
        .collect();
    let stbo_trace = merge_task_traces(&per_task);
    let mtbo_trace = match mtbo_run(objectives, &cfg.mtbo()) {
        Ok(res) => res.trace,
        Err(BoError::Aborted { source, trace }) => {
            notes.push(format!("MTBO aborted: {source}"));
            trace
        }
        Err(e) => return Err(e.into()),
    };
    let mut report = build_report(&stbo_trace, &mtbo_trace, labels, landscapes, reference, cfg)?;
    report.notes.extend(notes);
    Ok(Comparison { stbo_trace, mtbo_trace, report })
}

pub const CURVE_COLUMNS: [&str; 4] = ["method", "task", "evaluation", "best_so_far"];

/// Best-so-far curves for both methods (one-based tasks and evaluations).
pub fn write_curves<W: Write>(stbo: &[TraceRecord], mtbo: &[TraceRecord], m: usize, w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CURVE_COLUMNS)?;
    for (method, trace) in [("stbo", stbo), ("mtbo", mtbo)] {
        for t in 0..m {
            for (i, b) in best_so_far(trace, t).iter().enumerate() {
                out.write_record([method.to_string(), (t + 1).to_string(), (i + 1).to_string(), b.to_string()])?;
            }
        }
    }
    out.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

pub const SURFACE_COLUMNS: [&str; 6] =
    ["task", "log10_c", "log10_gamma", "raw_loss", "single_task_mean", "multi_task_mean"];

/// True landscapes next to both surrogates' posterior means (transformed space).
pub fn write_surfaces<W: Write>(report: &RunReport, landscapes: &[LandscapeGrid], w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SURFACE_COLUMNS)?;
    for s in &report.surfaces {
        let Some(g) = landscapes.iter().find(|g| g.task == s.task) else { continue };
        for (r, p) in g.points().enumerate() {
            out.write_record([
                (s.task + 1).to_string(),
                p.coords[0].to_string(),
                p.coords[1].to_string(),
                g.losses[r].to_string(),
                s.single[r].to_string(),
                s.multi[r].to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::landscape::eval_grid;
    use crate::harness::synthetic::synthetic_tasks;

    #[test]
    fn evals_to_target_counts_task_evaluations() {
        let tasks = synthetic_tasks(1, 1.0, 0).unwrap();
        let cfg = StboConfig { record_timing: false, ..StboConfig::new(3, 0) };
        let trace = merge_task_traces(&[stbo_run(&tasks[0], &cfg).unwrap(), stbo_run(&tasks[0], &cfg).unwrap()]);
        assert_eq!(trace.iter().filter(|r| r.task == 1).count(), 3);
        assert_eq!(evals_to_target(&trace, 1, f64::INFINITY), Some(1));
        assert_eq!(evals_to_target(&trace, 1, -1.0), None);
    }

    #[test]
    fn small_comparison_is_consistent() {
        let tasks = synthetic_tasks(2, 0.9, 3).unwrap();
        let objs: Vec<&dyn Objective> = tasks.iter().map(|t| t as &dyn Objective).collect();
        let labels = vec!["a".to_string(), "b".to_string()];
        let grids: Vec<LandscapeGrid> = tasks.iter().enumerate().map(|(t, f)| eval_grid(f, t, 11).unwrap()).collect();
        let optima: Vec<f64> = tasks.iter().map(|t| t.optimum_value).collect();
        let mut cfg = CompareConfig::with_budget(2, 4, 8, 1);
        cfg.restarts = 2;
        cfg.max_iter = 60;
        cfg.record_timing = false;
        let cmp = compare_runs(&objs, &labels, Some(&grids), Reference::Known(&optima), &cfg).unwrap();
        let r = &cmp.report;
        assert_eq!(r.tasks.len(), 2);
        for tr in &r.tasks {
            let t = tr.task - 1;
            for (opt, trace) in [(&tr.stbo, &cmp.stbo_trace), (&tr.mtbo, &cmp.mtbo_trace)] {
                let o = opt.as_ref().unwrap();
                assert_eq!(o.evaluations, 8);
                assert!(trace
                    .iter()
                    .any(|x| x.task == t && x.raw_loss == o.raw_loss && x.point.coords == [o.log10_c, o.log10_gamma]));
            }
            assert!(tr.rmse_single.is_some() && tr.rmse_multi.is_some());
        }
        assert!(r.summary.multi_rmse_wins.is_some());
        // a pure projection of the traces
        let again =
            build_report(&cmp.stbo_trace, &cmp.mtbo_trace, &labels, Some(&grids), Reference::Known(&optima), &cfg)
                .unwrap();
        assert_eq!(again.tasks, r.tasks);
        let mut buf = Vec::new();
        write_curves(&cmp.stbo_trace, &cmp.mtbo_trace, 2, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 2 * 2 * 8);
    }
}
