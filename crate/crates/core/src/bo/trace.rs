use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::mtgp::SearchPoint;
use crate::svm::transform_loss;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceFlag {
    /// The SVM solver hit its iteration cap; the loss was recorded as 1.0.
    NonConvergence,
    /// The posterior that chose this point conditioned on imputed responses.
    Imputed,
    /// Hyperparameter refit failed; the previous hyperparameters were kept.
    RefitFallback,
}

impl fmt::Display for TraceFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceFlag::NonConvergence => "NonConvergence",
            TraceFlag::Imputed => "Imputed",
            TraceFlag::RefitFallback => "RefitFallback",
        })
    }
}

/// One objective evaluation. `task` is zero-based here and one-based in CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub global_iter: usize,
    pub task: usize,
    pub point: SearchPoint,
    pub raw_loss: f64,
    pub transformed_loss: f64,
    /// Running minimum raw loss per task after this record (`inf` before a
    /// task's first evaluation).
    pub best_so_far_per_task: Vec<f64>,
    pub wall_time_ms: u64,
    pub flags: Vec<TraceFlag>,
}

impl TraceRecord {
    pub fn best_so_far(&self) -> f64 {
        self.best_so_far_per_task[self.task]
    }
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "global_iter",
    "task",
    "log10_c",
    "log10_gamma",
    "c",
    "gamma",
    "raw_loss",
    "transformed_loss",
    "best_so_far",
    "wall_time_ms",
    "flags",
];

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_COLUMNS)?;
    for r in trace {
        let flags: Vec<String> = r.flags.iter().map(ToString::to_string).collect();
        out.write_record([
            r.global_iter.to_string(),
            (r.task + 1).to_string(),
            r.point.coords[0].to_string(),
            r.point.coords[1].to_string(),
            r.point.c().to_string(),
            r.point.gamma().to_string(),
            r.raw_loss.to_string(),
            r.transformed_loss.to_string(),
            r.best_so_far().to_string(),
            r.wall_time_ms.to_string(),
            flags.join(";"),
        ])?;
    }
    out.flush()?;
    Ok(())
}

impl std::str::FromStr for TraceFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NonConvergence" => Ok(TraceFlag::NonConvergence),
            "Imputed" => Ok(TraceFlag::Imputed),
            "RefitFallback" => Ok(TraceFlag::RefitFallback),
            other => Err(format!("unknown flag {other:?}")),
        }
    }
}

/// Reads a trace written by [`write_trace_csv`] for `num_tasks` tasks. The
/// per-task running minima are rebuilt from the raw losses; the transformed
/// loss is recomputed and must agree with the file.
pub fn read_trace_csv<R: Read>(r: R, num_tasks: usize) -> Result<Vec<TraceRecord>, String> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().ne(TRACE_COLUMNS) {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut best = vec![f64::INFINITY; num_tasks];
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        let err = |what: &str| format!("row {}: bad {what}", line + 1);
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| err(TRACE_COLUMNS[i]));
        let int = |i: usize| row[i].parse::<usize>().map_err(|_| err(TRACE_COLUMNS[i]));
        let task = int(1)?;
        if task == 0 || task > num_tasks {
            return Err(err("task"));
        }
        let point = SearchPoint::new(num(2)?, num(3)?).map_err(|e| e.to_string())?;
        let raw_loss = num(6)?;
        if transform_loss(raw_loss) != num(7)? {
            return Err(err("transformed_loss"));
        }
        best[task - 1] = best[task - 1].min(raw_loss);
        let flags = if row[10].is_empty() {
            Vec::new()
        } else {
            row[10].split(';').map(str::parse).collect::<Result<Vec<_>, _>>()?
        };
        out.push(TraceRecord {
            global_iter: int(0)?,
            task: task - 1,
            point,
            raw_loss,
            transformed_loss: transform_loss(raw_loss),
            best_so_far_per_task: best.clone(),
            wall_time_ms: row[9].parse().map_err(|_| err("wall_time_ms"))?,
            flags,
        });
    }
    Ok(out)
}

/// Running minimum of raw loss over `task`'s evaluations, in trace order.
pub fn best_so_far(trace: &[TraceRecord], task: usize) -> Vec<f64> {
    let mut best = f64::INFINITY;
    trace
        .iter()
        .filter(|r| r.task == task)
        .map(|r| {
            best = best.min(r.raw_loss);
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(task: usize, loss: f64) -> TraceRecord {
        TraceRecord {
            global_iter: 0,
            task,
            point: SearchPoint::origin(),
            raw_loss: loss,
            transformed_loss: crate::svm::transform_loss(loss),
            best_so_far_per_task: vec![loss; 2],
            wall_time_ms: 0,
            flags: vec![TraceFlag::NonConvergence, TraceFlag::Imputed],
        }
    }

    #[test]
    fn running_minimum() {
        let t = vec![rec(0, 0.3), rec(1, 0.1), rec(0, 0.5), rec(0, 0.2)];
        assert_eq!(best_so_far(&t, 0), vec![0.3, 0.3, 0.2]);
        assert_eq!(best_so_far(&t, 1), vec![0.1]);
        let dec = vec![rec(0, 0.4), rec(0, 0.3), rec(0, 0.1)];
        assert_eq!(best_so_far(&dec, 0), vec![0.4, 0.3, 0.1]);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_trace_csv(&[rec(1, 0.5)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "0,2,0,0,1,1,0.5,0,0.5,0,NonConvergence;Imputed");
    }

    #[test]
    fn csv_round_trip() {
        let mut a = rec(0, 0.25);
        a.best_so_far_per_task = vec![0.25, f64::INFINITY];
        let mut b = rec(1, 0.125);
        b.point = SearchPoint::new(-2.9, 0.1234567890123).unwrap();
        b.flags.clear();
        b.best_so_far_per_task = vec![0.25, 0.125];
        let trace = vec![a, b];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        assert_eq!(read_trace_csv(&buf[..], 2).unwrap(), trace);
        assert!(read_trace_csv(&buf[..], 1).is_err());
    }
}
