use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::acquisition::{maximize_ei, AcquisitionBudget};
use super::trace::{TraceFlag, TraceRecord};
use super::BoError;
use crate::mtgp::{
    fit_from, FitOptions, GpError, InferenceMode, MtgpHyperparams, MtgpModel, Observation, ObservationSet, SearchPoint,
};
use crate::rng::derive_seed;
use crate::svm::transform_loss;

/// Result of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub raw_loss: f64,
    pub non_converged: bool,
}

impl ObjectiveValue {
    pub fn new(raw_loss: f64) -> Self {
        Self { raw_loss, non_converged: false }
    }
}

/// An expensive black-box loss over the search box.
pub trait Objective: Send + Sync {
    fn evaluate(&self, x: &SearchPoint) -> ObjectiveValue;
}

/// Adapts a closure into an [`Objective`].
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: Fn(&SearchPoint) -> ObjectiveValue + Send + Sync,
{
    fn evaluate(&self, x: &SearchPoint) -> ObjectiveValue {
        (self.0)(x)
    }
}

/// Which observations define `y_best` for per-task EI.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum YBestRule {
    /// Minimum transformed loss over every task.
    #[default]
    Global,
    /// Minimum over the task being optimized.
    PerTask,
}

/// GP fitting and acquisition settings shared by both loops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateSettings {
    pub restarts: usize,
    pub max_iter: usize,
    pub acquisition: AcquisitionBudget,
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        Self { restarts: 5, max_iter: 200, acquisition: AcquisitionBudget::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StboConfig {
    pub iters: usize,
    pub seed: u64,
    pub surrogate: SurrogateSettings,
    /// When false, `wall_time_ms` is written as 0 so traces are byte-stable.
    pub record_timing: bool,
}

impl StboConfig {
    pub fn new(iters: usize, seed: u64) -> Self {
        Self { iters, seed, surrogate: SurrogateSettings::default(), record_timing: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MtboConfig {
    pub iter1: usize,
    pub iter2: usize,
    pub seed: u64,
    pub inference: InferenceMode,
    pub y_best: YBestRule,
    pub surrogate: SurrogateSettings,
    pub record_timing: bool,
}

impl MtboConfig {
    pub fn new(iter1: usize, iter2: usize, seed: u64) -> Self {
        Self {
            iter1,
            iter2,
            seed,
            inference: InferenceMode::Exact,
            y_best: YBestRule::Global,
            surrogate: SurrogateSettings::default(),
            record_timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskOptimum {
    pub task: usize,
    pub global_iter: usize,
    pub point: SearchPoint,
    pub c: f64,
    pub gamma: f64,
    pub raw_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MtboResult {
    pub trace: Vec<TraceRecord>,
    pub optima: Vec<TaskOptimum>,
    /// Hyperparameters of the last surrogate fitted.
    pub final_params: Option<MtgpHyperparams>,
}

struct Recorder {
    start: Instant,
    timing: bool,
    best: Vec<f64>,
    trace: Vec<TraceRecord>,
}

impl Recorder {
    fn new(num_tasks: usize, timing: bool) -> Self {
        Self { start: Instant::now(), timing, best: vec![f64::INFINITY; num_tasks], trace: Vec::new() }
    }

    fn record(
        &mut self,
        iter: usize,
        task: usize,
        point: SearchPoint,
        v: ObjectiveValue,
        mut flags: Vec<TraceFlag>,
    ) -> Observation {
        let transformed = transform_loss(v.raw_loss);
        self.best[task] = self.best[task].min(v.raw_loss);
        if v.non_converged {
            flags.insert(0, TraceFlag::NonConvergence);
        }
        self.trace.push(TraceRecord {
            global_iter: iter,
            task,
            point,
            raw_loss: v.raw_loss,
            transformed_loss: transformed,
            best_so_far_per_task: self.best.clone(),
            wall_time_ms: if self.timing { self.start.elapsed().as_millis() as u64 } else { 0 },
            flags,
        });
        Observation::new(point, task, transformed)
    }

    fn abort(self, source: GpError) -> BoError {
        BoError::Aborted { source, trace: self.trace }
    }
}

fn fit_options(s: &SurrogateSettings, seed: u64, iter: usize, mode: InferenceMode) -> FitOptions {
    FitOptions { restarts: s.restarts, seed: derive_seed(seed, &[iter as u64]), mode, max_iter: s.max_iter }
}

/// Warm start only from hyperparameters of the same shape.
fn warm_for(prev: &Option<MtgpHyperparams>, num_tasks: usize) -> Option<&MtgpHyperparams> {
    prev.as_ref().filter(|p| p.num_tasks() == num_tasks)
}

fn min_y(set: &ObservationSet, task: Option<usize>) -> f64 {
    set.observations().iter().filter(|o| task.map_or(true, |t| o.task == t)).map(|o| o.y).fold(f64::INFINITY, f64::min)
}

/// One single-task BO selection on `set` (a one-task set).
fn single_task_select(
    set: &ObservationSet,
    prev: &mut Option<MtgpHyperparams>,
    s: &SurrogateSettings,
    seed: u64,
    iter: usize,
) -> Result<SearchPoint, GpError> {
    let model = fit_from(set, &fit_options(s, seed, iter, InferenceMode::Exact), warm_for(prev, 1))?;
    *prev = Some(model.params().clone());
    let acq = maximize_ei(&model, 0, min_y(set, None), &s.acquisition, seed, &[iter as u64, 0]);
    Ok(acq.point)
}

/// Single-task BO from `(C, γ) = (1, 1)`: refit a one-task GP on the
/// transformed losses every iteration, maximize EI, evaluate.
pub fn stbo_run(objective: &dyn Objective, cfg: &StboConfig) -> Result<Vec<TraceRecord>, BoError> {
    if cfg.iters == 0 {
        return Err(BoError::InvalidConfig("iters must be at least 1".into()));
    }
    let mut rec = Recorder::new(1, cfg.record_timing);
    let mut set = ObservationSet::new(1);
    let mut prev = None;
    let x0 = SearchPoint::origin();
    let o = rec.record(0, 0, x0, objective.evaluate(&x0), Vec::new());
    set.push(o).expect("first observation");
    for i in 1..cfg.iters {
        let x = match single_task_select(&set, &mut prev, &cfg.surrogate, cfg.seed, i) {
            Ok(x) => x,
            Err(e) => return Err(rec.abort(e)),
        };
        let o = rec.record(i, 0, x, objective.evaluate(&x), Vec::new());
        set.push(o).expect("acquisition never repeats an observed point");
    }
    Ok(rec.trace)
}

fn evaluate_all(objectives: &[&dyn Objective], x: &SearchPoint) -> Vec<ObjectiveValue> {
    objectives.par_iter().map(|f| f.evaluate(x)).collect()
}

/// Multi-task BO:
///
/// 1. iteration 0 evaluates every task at `(C, γ) = (1, 1)`;
/// 2. iterations `1..iter1` pick points by single-task BO on task 0 and
///    evaluate every task there (a block design);
/// 3. iterations `iter1..iter2` cycle through tasks, `t = (i − iter1) mod M`,
///    maximizing that task's EI under the multi-task GP and evaluating only
///    task `t`. Hyperparameters are refit at the start of every sweep;
///    in between, new observations extend the factorization.
pub fn mtbo_run(objectives: &[&dyn Objective], cfg: &MtboConfig) -> Result<MtboResult, BoError> {
    let m = objectives.len();
    if m == 0 || cfg.iter1 == 0 || cfg.iter2 <= cfg.iter1 {
        return Err(BoError::InvalidConfig(format!(
            "need M ≥ 1, iter1 ≥ 1 and iter2 > iter1 (M = {m}, iter1 = {}, iter2 = {})",
            cfg.iter1, cfg.iter2
        )));
    }
    let s = &cfg.surrogate;
    let mut rec = Recorder::new(m, cfg.record_timing);
    let mut all = ObservationSet::new(m);
    let mut first = ObservationSet::new(1);
    let mut prev: Option<MtgpHyperparams> = None;

    for i in 0..cfg.iter1 {
        let x = if i == 0 {
            SearchPoint::origin()
        } else {
            match single_task_select(&first, &mut prev, s, cfg.seed, i) {
                Ok(x) => x,
                Err(e) => return Err(rec.abort(e)),
            }
        };
        for (t, v) in evaluate_all(objectives, &x).into_iter().enumerate() {
            let o = rec.record(i, t, x, v, Vec::new());
            if t == 0 {
                first.push(o).expect("fresh point");
            }
            all.push(o).expect("fresh point");
        }
    }

    let extra = if cfg.inference == InferenceMode::Impute { vec![TraceFlag::Imputed] } else { Vec::new() };
    let mut model: Option<MtgpModel> = None;
    for i in cfg.iter1..cfg.iter2 {
        let t = (i - cfg.iter1) % m;
        let mut flags = extra.clone();
        if t == 0 || model.is_none() {
            match fit_from(&all, &fit_options(s, cfg.seed, i, cfg.inference), warm_for(&prev, m)) {
                Ok(fresh) => {
                    prev = Some(fresh.params().clone());
                    model = Some(fresh);
                }
                Err(e) if model.is_none() => return Err(rec.abort(e)),
                Err(_) => flags.push(TraceFlag::RefitFallback),
            }
        }
        let current = model.as_mut().expect("model fitted above");
        let y_best = match cfg.y_best {
            YBestRule::Global => min_y(&all, None),
            YBestRule::PerTask => min_y(&all, Some(t)),
        };
        let acq = maximize_ei(&*current, t, y_best, &s.acquisition, cfg.seed, &[i as u64, t as u64]);
        let v = objectives[t].evaluate(&acq.point);
        let o = rec.record(i, t, acq.point, v, flags);
        all.push(o).expect("acquisition never repeats an observed point");
        if let Err(e) = current.add_observation(o) {
            return Err(rec.abort(e));
        }
    }

    let optima = task_optima(&rec.trace, m);
    Ok(MtboResult { trace: rec.trace, optima, final_params: prev })
}

/// Per task, the first record attaining the minimum raw loss.
pub fn task_optima(trace: &[TraceRecord], num_tasks: usize) -> Vec<TaskOptimum> {
    (0..num_tasks)
        .filter_map(|t| {
            trace
                .iter()
                .filter(|r| r.task == t)
                .fold(None::<&TraceRecord>, |best, r| match best {
                    Some(b) if b.raw_loss <= r.raw_loss => Some(b),
                    _ => Some(r),
                })
                .map(|r| TaskOptimum {
                    task: t,
                    global_iter: r.global_iter,
                    point: r.point,
                    c: r.point.c(),
                    gamma: r.point.gamma(),
                    raw_loss: r.raw_loss,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(shift: f64) -> impl Fn(&SearchPoint) -> ObjectiveValue + Send + Sync {
        move |x: &SearchPoint| {
            let d2 = (x.coords[0] - 0.7 - shift).powi(2) + (x.coords[1] + 0.4).powi(2);
            ObjectiveValue::new(0.05 + 0.9 * (1.0 - (-d2 / 8.0).exp()))
        }
    }

    fn quick() -> SurrogateSettings {
        SurrogateSettings { restarts: 2, max_iter: 60, acquisition: AcquisitionBudget::default() }
    }

    #[test]
    fn stbo_finds_bowl_centre() {
        let f = FnObjective(bowl(0.0));
        let cfg = StboConfig { surrogate: quick(), record_timing: false, ..StboConfig::new(30, 1) };
        let trace = stbo_run(&f, &cfg).unwrap();
        let best = trace.iter().min_by(|a, b| a.raw_loss.total_cmp(&b.raw_loss)).unwrap();
        let d = best.point.distance(&SearchPoint::new(0.7, -0.4).unwrap());
        assert!(d < 0.2, "{best:?}");
    }

    #[test]
    fn single_iteration_trace() {
        let f = FnObjective(bowl(0.0));
        let trace = stbo_run(&f, &StboConfig::new(1, 0)).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].point, SearchPoint::origin());
    }

    #[test]
    fn mtbo_schedule_and_counts() {
        let fs: Vec<FnObjective<_>> = (0..3).map(|t| FnObjective(bowl(0.1 * t as f64))).collect();
        let objs: Vec<&dyn Objective> = fs.iter().map(|f| f as &dyn Objective).collect();
        let cfg = MtboConfig { surrogate: quick(), record_timing: false, ..MtboConfig::new(3, 12, 2) };
        let res = mtbo_run(&objs, &cfg).unwrap();
        let counts: Vec<usize> = (0..3).map(|t| res.trace.iter().filter(|r| r.task == t).count()).collect();
        assert_eq!(counts, vec![6, 6, 6]);
        for r in res.trace.iter().filter(|r| r.global_iter >= 3) {
            assert_eq!(r.task, (r.global_iter - 3) % 3);
        }
        for i in 0..3 {
            let pts: Vec<SearchPoint> = res.trace.iter().filter(|r| r.global_iter == i).map(|r| r.point).collect();
            assert_eq!(pts.len(), 3);
            assert!(pts.iter().all(|p| *p == pts[0]));
        }
        for t in 0..3 {
            let seq: Vec<f64> = res.trace.iter().map(|r| r.best_so_far_per_task[t]).collect();
            assert!(seq.windows(2).all(|w| w[1] <= w[0]));
        }
        for o in &res.optima {
            assert!(res.trace.iter().any(|r| r.task == o.task && r.point == o.point && r.raw_loss == o.raw_loss));
        }
    }

    #[test]
    fn one_task_mtbo_matches_stbo() {
        let f = FnObjective(bowl(0.0));
        let surrogate = quick();
        let st = stbo_run(&f, &StboConfig { surrogate, record_timing: false, ..StboConfig::new(10, 5) }).unwrap();
        let mt = mtbo_run(&[&f], &MtboConfig { surrogate, record_timing: false, ..MtboConfig::new(4, 10, 5) }).unwrap();
        let a: Vec<_> = st.iter().map(|r| r.point).collect();
        let b: Vec<_> = mt.trace.iter().map(|r| r.point).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let f = FnObjective(bowl(0.0));
        assert!(mtbo_run(&[&f], &MtboConfig::new(3, 3, 0)).is_err());
        assert!(stbo_run(&f, &StboConfig::new(0, 0)).is_err());
    }
}
