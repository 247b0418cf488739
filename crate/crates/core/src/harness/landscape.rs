use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bo::{Objective, ObjectiveValue, Posterior};
use crate::mtgp::{SearchPoint, BOX_LOWER, BOX_UPPER};
use crate::svm::{cv_loss, inverse_transform, transform_loss, CvConfig, Dataset};

/// Cross-validated SVM loss of one dataset as a BO objective.
#[derive(Clone, Debug)]
pub struct DatasetObjective {
    pub data: Dataset,
    pub cv: CvConfig,
}

impl Objective for DatasetObjective {
    fn evaluate(&self, x: &SearchPoint) -> ObjectiveValue {
        let hp = x.hyperparams().expect("search box lies inside the hyperparameter box");
        let out = cv_loss(&self.data, hp, &self.cv);
        ObjectiveValue { raw_loss: out.loss, non_converged: out.non_converged }
    }
}

/// Log10 coordinate `j` of a `side`-point axis spanning the box end to end.
pub fn grid_coord(j: usize, side: usize) -> f64 {
    if j + 1 == side {
        return BOX_UPPER;
    }
    BOX_LOWER + (BOX_UPPER - BOX_LOWER) * j as f64 / (side - 1) as f64
}

/// Raw losses of one task on a `side × side` grid over the box. Row `r`
/// holds `(log10 C, log10 γ) = (coord(r / side), coord(r % side))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub grid_side: usize,
    pub task: usize,
    pub losses: Vec<f64>,
    pub non_converged: Vec<bool>,
}

impl LandscapeGrid {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn point(&self, row: usize) -> SearchPoint {
        grid_point(row, self.grid_side)
    }

    pub fn points(&self) -> impl Iterator<Item = SearchPoint> + '_ {
        (0..self.len()).map(|r| self.point(r))
    }

    /// Row and raw loss of the grid minimum (first on ties).
    pub fn argmin(&self) -> (usize, f64) {
        self.losses
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
    }
}

pub fn grid_point(row: usize, side: usize) -> SearchPoint {
    SearchPoint::new(grid_coord(row / side, side), grid_coord(row % side, side)).expect("grid inside box")
}

/// Evaluates `objective` at every grid point (in parallel, stored in row order).
pub fn eval_grid(objective: &dyn Objective, task: usize, grid_side: usize) -> Result<LandscapeGrid, HarnessError> {
    if grid_side < 2 {
        return Err(HarnessError::InvalidSpec(format!("grid_side = {grid_side} < 2")));
    }
    let values: Vec<ObjectiveValue> =
        (0..grid_side * grid_side).into_par_iter().map(|r| objective.evaluate(&grid_point(r, grid_side))).collect();
    Ok(LandscapeGrid {
        grid_side,
        task,
        losses: values.iter().map(|v| v.raw_loss).collect(),
        non_converged: values.iter().map(|v| v.non_converged).collect(),
    })
}

pub fn eval_landscape(
    dataset: &Dataset,
    cv: &CvConfig,
    task: usize,
    grid_side: usize,
) -> Result<LandscapeGrid, HarnessError> {
    eval_grid(&DatasetObjective { data: dataset.clone(), cv: *cv }, task, grid_side)
}

/// Grid RMSE of a surrogate, in transformed space and back in raw-loss space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rmse {
    pub transformed: f64,
    pub raw: f64,
}

/// Root mean square difference, divided by the number of points.
pub fn rms_error(truth: &[f64], predicted: &[f64]) -> f64 {
    assert_eq!(truth.len(), predicted.len());
    (truth.iter().zip(predicted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64).sqrt()
}

/// Posterior means of `task` at every landscape point.
pub fn predicted_surface<P: Posterior + Sync + ?Sized>(model: &P, landscape: &LandscapeGrid, task: usize) -> Vec<f64> {
    (0..landscape.len()).into_par_iter().map(|r| model.posterior(&landscape.point(r), task).0).collect()
}

/// RMSE of the posterior mean against the landscape: in transformed space
/// (where the GP is fitted), and after mapping predictions back to losses.
pub fn rmse<P: Posterior + Sync + ?Sized>(model: &P, landscape: &LandscapeGrid, task: usize) -> Rmse {
    rmse_of_surface(&predicted_surface(model, landscape, task), landscape)
}

pub fn rmse_of_surface(predicted: &[f64], landscape: &LandscapeGrid) -> Rmse {
    let truth: Vec<f64> = landscape.losses.iter().map(|&l| transform_loss(l)).collect();
    let raw_pred: Vec<f64> = predicted.iter().map(|&f| inverse_transform(f)).collect();
    Rmse { transformed: rms_error(&truth, predicted), raw: rms_error(&landscape.losses, &raw_pred) }
}

pub const LANDSCAPE_COLUMNS: [&str; 8] =
    ["task", "log10_c", "log10_gamma", "c", "gamma", "raw_loss", "transformed_loss", "non_converged"];

/// Writes landscapes row by row; `task` is one-based in the file.
pub fn write_landscapes<W: Write>(grids: &[LandscapeGrid], w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LANDSCAPE_COLUMNS)?;
    for g in grids {
        for (r, p) in g.points().enumerate() {
            out.write_record([
                (g.task + 1).to_string(),
                p.coords[0].to_string(),
                p.coords[1].to_string(),
                p.c().to_string(),
                p.gamma().to_string(),
                g.losses[r].to_string(),
                transform_loss(g.losses[r]).to_string(),
                u8::from(g.non_converged[r]).to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

/// Reads landscapes written by [`write_landscapes`], one grid per task in
/// order of first appearance.
pub fn read_landscapes<R: Read>(r: R) -> Result<Vec<LandscapeGrid>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut grids: Vec<LandscapeGrid> = Vec::new();
    let bad = |m: String| HarnessError::Parse(m);
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<f64, HarnessError> {
            row.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad(format!("row {}: bad column {i}", line + 1)))
        };
        let task = num(0)? as usize;
        if task == 0 {
            return Err(bad(format!("row {}: tasks are one-based", line + 1)));
        }
        if grids.last().map_or(true, |g| g.task != task - 1) {
            grids.push(LandscapeGrid { grid_side: 0, task: task - 1, losses: Vec::new(), non_converged: Vec::new() });
        }
        let g = grids.last_mut().unwrap();
        g.losses.push(num(5)?);
        g.non_converged.push(num(7)? != 0.0);
    }
    for g in &mut grids {
        let side = (g.losses.len() as f64).sqrt().round() as usize;
        if side < 2 || side * side != g.losses.len() {
            return Err(bad(format!("task {}: {} rows is not a square grid", g.task + 1, g.losses.len())));
        }
        g.grid_side = side;
    }
    Ok(grids)
}
