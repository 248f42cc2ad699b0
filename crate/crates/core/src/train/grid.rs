use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Result of one training run in a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub val_rmspe: f64,
    pub test_rmspe: f64,
    pub best_epoch: usize,
}

/// One cell of the results table; failures are recorded, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell<P> {
    pub point: P,
    pub point_index: usize,
    pub repeat: usize,
    pub seed: u64,
    pub outcome: std::result::Result<RunOutcome, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult<P> {
    pub best_index: usize,
    pub best: P,
    pub best_mean_val_rmspe: f64,
    pub cells: Vec<GridCell<P>>,
}

/// Seed of repeat `r`: equal base seeds give equal repeats.
pub fn repeat_seed(seed: u64, repeat: usize) -> u64 {
    derive_seed(seed, repeat as u64)
}

/// Every `(point, repeat)` job in table order.
pub fn grid_jobs<P: Clone>(points: &[P], repeats: usize, seed: u64) -> Vec<(usize, usize, u64, P)> {
    let mut out = Vec::with_capacity(points.len() * repeats);
    for (i, p) in points.iter().enumerate() {
        for r in 0..repeats {
            out.push((i, r, repeat_seed(seed, r), p.clone()));
        }
    }
    out
}

/// Lowest mean validation RMSPE over successful repeats; ties go to the
/// earliest point. Points whose every repeat failed are never selected.
pub fn select_best<P: Clone>(points: &[P], cells: Vec<GridCell<P>>) -> Result<GridResult<P>> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..points.len() {
        let vals: Vec<f64> = cells
            .iter()
            .filter(|c| c.point_index == i)
            .filter_map(|c| c.outcome.as_ref().ok().map(|o| o.val_rmspe))
            .collect();
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        if best.is_none_or(|(_, b)| mean < b) {
            best = Some((i, mean));
        }
    }
    let (best_index, mean) = best.ok_or_else(|| Error::Training("every grid run failed".into()))?;
    Ok(GridResult {
        best_index,
        best: points[best_index].clone(),
        best_mean_val_rmspe: mean,
        cells,
    })
}

/// Sequential exhaustive search.
pub fn grid_search<P, F>(points: &[P], repeats: usize, seed: u64, mut run: F) -> Result<GridResult<P>>
where
    P: Clone,
    F: FnMut(&P, u64) -> Result<RunOutcome>,
{
    if points.is_empty() || repeats == 0 {
        return Err(Error::Config("grid needs at least one point and one repeat".into()));
    }
    let cells = grid_jobs(points, repeats, seed)
        .into_iter()
        .map(|(point_index, repeat, s, point)| {
            let outcome = run(&point, s).map_err(|e| e.to_string());
            GridCell {
                point,
                point_index,
                repeat,
                seed: s,
                outcome,
            }
        })
        .collect();
    select_best(points, cells)
}
