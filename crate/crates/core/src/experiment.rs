//! Source-task runs and the one-factor sweeps built on them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::battery::FleetDataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_scaled, MetricsReport};
use crate::model::{ViTConfig, ViTFc};
use crate::preprocess::{prepare_dataset, ChannelSet, Dataset, SplitName, SplitPlan, WindowSpec};
use crate::preprocess::SampleMatrix;
use crate::train::{
    fine_tune, grid_jobs, select_best, train, FineTuneConfig, GridCell, RunOutcome, TrainConfig, TrainHistory,
};

/// Model size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelScale {
    #[default]
    Desk,
    Paper,
}

impl ModelScale {
    pub fn config(self, l_v: usize, f: usize) -> ViTConfig {
        match self {
            ModelScale::Desk => ViTConfig::desk(l_v, f),
            ModelScale::Paper => ViTConfig::paper(l_v, f),
        }
    }
}

pub struct SourceRun {
    pub model: ViTFc,
    pub history: TrainHistory,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// Trains a fresh model (initialized from `cfg.seed`) on the source split of
/// `ds` and scores it on source validation and test.
pub fn run_source(ds: &Dataset, vit: ViTConfig, cfg: &TrainConfig) -> Result<SourceRun> {
    if vit.l_v != ds.l_v() || vit.f != ds.channels().count() {
        return Err(Error::Config(format!(
            "model expects {}x{} inputs but the dataset has {}x{}",
            vit.f,
            vit.l_v,
            ds.channels().count(),
            ds.l_v()
        )));
    }
    let model = ViTFc::new(vit, cfg.seed)?;
    let train_set = ds.scaled(SplitName::SourceTrain)?;
    let val_set = ds.scaled(SplitName::SourceVal)?;
    let (model, history) = train(model, &train_set, &val_set, cfg)?;
    let val = evaluate_scaled(&model, &val_set)?;
    let test = evaluate_scaled(&model, &ds.scaled(SplitName::SourceTest)?)?;
    Ok(SourceRun {
        model,
        history,
        val,
        test,
    })
}

/// Scaled samples of one target cell, split into its first `c` cycles and
/// the rest.
#[derive(Debug, Clone)]
pub struct TargetTask {
    pub cell: u32,
    pub train: Vec<SampleMatrix>,
    pub test: Vec<SampleMatrix>,
}

/// Regroups the dataset's target samples per cell with a fresh cycle count
/// `c`; `c` may differ from the one the dataset was split with.
pub fn target_tasks(ds: &Dataset, c: usize) -> Result<Vec<TargetTask>> {
    if c == 0 {
        return Err(Error::Config("target training cycle count must be at least 1".into()));
    }
    let mut all = ds.scaled(SplitName::TargetTrain)?;
    all.extend(ds.scaled(SplitName::TargetTest)?);
    let mut tasks = Vec::new();
    for &cell in &ds.plan.target_cells {
        let mut mine: Vec<SampleMatrix> = all.iter().filter(|s| s.cell_id == cell).cloned().collect();
        mine.sort_by_key(|s| s.cycle);
        if mine.len() <= c {
            return Err(Error::Config(format!(
                "target cell {cell} has {} samples, too few to hold out any after the first {c}",
                mine.len()
            )));
        }
        let test = mine.split_off(c);
        tasks.push(TargetTask { cell, train: mine, test });
    }
    if tasks.is_empty() {
        return Err(Error::Config("the dataset has no target cells".into()));
    }
    Ok(tasks)
}

pub struct TransferRun {
    pub cell: u32,
    pub model: ViTFc,
    pub losses: Vec<f64>,
    pub before: MetricsReport,
    pub after: MetricsReport,
}

/// Fine-tunes a separate copy of the head for each target cell, each on
/// that cell's first cycles only.
pub fn run_transfer(
    source: &ViTFc,
    tasks: &[TargetTask],
    ft: &FineTuneConfig,
    cfg: &TrainConfig,
) -> Result<Vec<TransferRun>> {
    tasks
        .iter()
        .map(|t| {
            let before = evaluate_scaled(source, &t.test)?;
            let (model, losses) = fine_tune(source.clone(), &t.train, ft, cfg)?;
            let after = evaluate_scaled(&model, &t.test)?;
            log::info!(
                "cell {}: target test RMSPE {:.4}% -> {:.4}%",
                t.cell,
                before.rmspe,
                after.rmspe
            );
            Ok(TransferRun {
                cell: t.cell,
                model,
                losses,
                before,
                after,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Depth,
    Granularity,
    Ratio,
    Channels,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Depth => "depth",
            SweepKind::Granularity => "granularity",
            SweepKind::Ratio => "ratio",
            SweepKind::Channels => "channels",
        }
    }

    pub fn default_grid(self) -> Vec<SweepValue> {
        match self {
            SweepKind::Depth => (1..=6).map(SweepValue::Depth).collect(),
            SweepKind::Granularity => [100, 200, 300, 400, 500].map(SweepValue::Points).to_vec(),
            SweepKind::Ratio => [0.1, 0.3, 0.5, 0.7, 0.9].map(SweepValue::Ratio).to_vec(),
            SweepKind::Channels => vec![
                SweepValue::Channels(ChannelSet::Raw),
                SweepValue::Channels(ChannelSet::Supplementary),
            ],
        }
    }

    /// Parses a comma-separated grid such as `1,2,3` or `raw,supplementary`.
    pub fn parse_grid(self, s: &str) -> Result<Vec<SweepValue>> {
        let bad = |v: &str| Error::Config(format!("bad {} grid value '{v}'", self.as_str()));
        s.split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| {
                Ok(match self {
                    SweepKind::Depth => SweepValue::Depth(v.parse().map_err(|_| bad(v))?),
                    SweepKind::Granularity => SweepValue::Points(v.parse().map_err(|_| bad(v))?),
                    SweepKind::Ratio => SweepValue::Ratio(v.parse().map_err(|_| bad(v))?),
                    SweepKind::Channels => SweepValue::Channels(v.parse()?),
                })
            })
            .collect()
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(SweepKind::Depth),
            "granularity" => Ok(SweepKind::Granularity),
            "ratio" => Ok(SweepKind::Ratio),
            "channels" => Ok(SweepKind::Channels),
            _ => Err(Error::Config(format!(
                "unknown sweep '{s}' (expected depth, granularity, ratio or channels)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepValue {
    Depth(usize),
    Points(usize),
    Ratio(f64),
    Channels(ChannelSet),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Depth(d) => write!(f, "{d}"),
            SweepValue::Points(n) => write!(f, "{n}"),
            SweepValue::Ratio(r) => write!(f, "{r}"),
            SweepValue::Channels(c) => f.write_str(c.as_str()),
        }
    }
}

/// Everything a sweep holds fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBase {
    pub window: WindowSpec,
    pub targets: Vec<u32>,
    pub r_t: f64,
    pub c: usize,
    pub scale: ModelScale,
    pub depth: Option<usize>,
    pub train: TrainConfig,
}

impl SweepBase {
    /// Window, split plan and model config for one grid value. The split
    /// and the model both use `seed`, so repeats redraw the partition.
    pub fn resolve(&self, fleet: &FleetDataset, value: SweepValue, seed: u64) -> (WindowSpec, SplitPlan, ViTConfig) {
        let mut window = self.window;
        let mut r_t = self.r_t;
        let mut depth = self.depth;
        match value {
            SweepValue::Depth(d) => depth = Some(d),
            SweepValue::Points(n) => window.points = n,
            SweepValue::Ratio(r) => r_t = r,
            SweepValue::Channels(c) => window.channels = c,
        }
        let ids: Vec<u32> = fleet.cells.iter().map(|c| c.condition.cell_id).collect();
        let plan = SplitPlan::with_targets(&ids, &self.targets, r_t, self.c, seed);
        let mut vit = self.scale.config(window.points, window.channels.count());
        if let Some(d) = depth {
            vit.depth = d;
        }
        (window, plan, vit)
    }
}

/// One row of the box-plot table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: SweepKind,
    pub value: String,
    pub repeat: usize,
    pub seed: u64,
    pub val_rmspe: Option<f64>,
    pub test_rmspe: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

/// Five-number summary of test RMSPE over a grid value's successful repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub value: String,
    pub ok: usize,
    pub failed: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
    pub mean_val_rmspe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub sweep: SweepKind,
    pub repeats: usize,
    pub seed: u64,
    pub best_value: Option<String>,
    pub best_mean_val_rmspe: Option<f64>,
    pub stats: Vec<BoxStats>,
}

pub const SWEEP_CSV_HEADER: [&str; 8] = [
    "sweep",
    "value",
    "repeat",
    "seed",
    "val_rmspe",
    "test_rmspe",
    "best_epoch",
    "error",
];

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn box_stats(value: String, rows: &[&SweepRow]) -> BoxStats {
    let mut test: Vec<f64> = rows.iter().filter_map(|r| r.test_rmspe).collect();
    test.sort_by(f64::total_cmp);
    let vals: Vec<f64> = rows.iter().filter_map(|r| r.val_rmspe).collect();
    let q = |p| (!test.is_empty()).then(|| quantile(&test, p));
    BoxStats {
        value,
        ok: test.len(),
        failed: rows.len() - test.len(),
        min: q(0.0),
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: q(1.0),
        mean_val_rmspe: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
    }
}

fn run_job(fleet: &FleetDataset, base: &SweepBase, value: SweepValue, seed: u64) -> Result<RunOutcome> {
    let (window, plan, vit) = base.resolve(fleet, value, seed);
    let ds = prepare_dataset(fleet, &window, &plan)?;
    let cfg = TrainConfig { seed, ..base.train.clone() };
    let run = run_source(&ds, vit, &cfg)?;
    Ok(RunOutcome {
        val_rmspe: run.val.rmspe,
        test_rmspe: run.test.rmspe,
        best_epoch: run.history.best_epoch,
    })
}

/// Runs every `(value, repeat)` job. With `threads > 1` jobs run on a
/// private pool; rows come back in table order either way, and each job is
/// fully determined by its seed.
pub fn run_sweep(
    fleet: &FleetDataset,
    base: &SweepBase,
    kind: SweepKind,
    grid: &[SweepValue],
    repeats: usize,
    seed: u64,
    threads: usize,
) -> Result<(Vec<SweepRow>, SweepSummary)> {
    if grid.is_empty() || repeats == 0 {
        return Err(Error::Config("a sweep needs at least one value and one repeat".into()));
    }
    let jobs = grid_jobs(grid, repeats, seed);
    let work = |job: &(usize, usize, u64, SweepValue)| {
        let (i, r, s, v) = *job;
        log::info!("sweep {} = {v}, repeat {r}", kind.as_str());
        let outcome = run_job(fleet, base, v, s).map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::warn!("sweep {} = {v}, repeat {r} failed: {e}", kind.as_str());
        }
        GridCell {
            point: v,
            point_index: i,
            repeat: r,
            seed: s,
            outcome,
        }
    };
    let cells: Vec<GridCell<SweepValue>> = if threads > 1 {
        run_parallel(&jobs, threads, work)?
    } else {
        jobs.iter().map(work).collect()
    };

    let rows: Vec<SweepRow> = cells
        .iter()
        .map(|c| {
            let ok = c.outcome.as_ref().ok();
            SweepRow {
                sweep: kind,
                value: c.point.to_string(),
                repeat: c.repeat,
                seed: c.seed,
                val_rmspe: ok.map(|o| o.val_rmspe),
                test_rmspe: ok.map(|o| o.test_rmspe),
                best_epoch: ok.map(|o| o.best_epoch),
                error: c.outcome.as_ref().err().cloned(),
            }
        })
        .collect();
    let stats = grid
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mine: Vec<&SweepRow> = rows.iter().zip(&cells).filter(|(_, c)| c.point_index == i).map(|(r, _)| r).collect();
            box_stats(v.to_string(), &mine)
        })
        .collect();
    let best = select_best(grid, cells).ok();
    let summary = SweepSummary {
        sweep: kind,
        repeats,
        seed,
        best_value: best.as_ref().map(|b| b.best.to_string()),
        best_mean_val_rmspe: best.as_ref().map(|b| b.best_mean_val_rmspe),
        stats,
    };
    Ok((rows, summary))
}

#[cfg(feature = "parallel")]
fn run_parallel<J: Sync, T: Send>(jobs: &[J], threads: usize, work: impl Fn(&J) -> T + Sync) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(&work).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<J, T>(jobs: &[J], _threads: usize, work: impl Fn(&J) -> T) -> Result<Vec<T>> {
    log::warn!("built without the parallel feature; running sweep jobs sequentially");
    Ok(jobs.iter().map(work).collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    w.write_record(SWEEP_CSV_HEADER).map_err(fmt)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.sweep.as_str().to_string(),
            r.value.clone(),
            r.repeat.to_string(),
            r.seed.to_string(),
            opt(r.val_rmspe),
            opt(r.test_rmspe),
            r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(fmt)?;
    }
    w.flush()?;
    Ok(())
}
