use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use soh_core::battery::{generate_fleet, load_fleet, write_fleet, FleetDataset, FLEET_FORMAT_VERSION};
use soh_core::experiment::{
    run_source, run_sweep, run_transfer, target_tasks, write_sweep_csv, SweepKind,
};
use soh_core::metrics::{evaluate_scaled, MetricsReport, ReportRow};
use soh_core::model::{Checkpoint, Part, ViTFc};
use soh_core::preprocess::{prepare_dataset, Dataset, SplitName, SplitPlan};

use crate::settings::Settings;
use crate::CliError;

pub const RUN_FORMAT_VERSION: &str = "soh-run/1";
pub const RUN_RECORD: &str = "run.json";

#[derive(Serialize)]
struct RunRecord<'a> {
    format_version: &'static str,
    command: &'static str,
    inputs: BTreeMap<&'static str, String>,
    settings: &'a Settings,
    outputs: Vec<String>,
    summary: Value,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn record(
    out: &Path,
    command: &'static str,
    inputs: &[(&'static str, &Path)],
    settings: &Settings,
    outputs: Vec<String>,
    summary: Value,
) -> Result<(), CliError> {
    let rec = RunRecord {
        format_version: RUN_FORMAT_VERSION,
        command,
        inputs: inputs.iter().map(|(k, p)| (*k, p.display().to_string())).collect(),
        settings,
        outputs,
        summary,
    };
    write_json(&out.join(RUN_RECORD), &rec)
}

fn metrics(r: &MetricsReport) -> Value {
    json!({ "rmspe": r.rmspe, "mape": r.mape, "sde": r.sde, "m": r.m })
}

fn write_report(dir: &Path, stem: &str, r: &MetricsReport, outputs: &mut Vec<String>) -> Result<(), CliError> {
    let (j, c) = (format!("{stem}.json"), format!("{stem}.csv"));
    r.write_json(&dir.join(&j))?;
    r.write_csv(&dir.join(&c))?;
    outputs.extend([j, c]);
    Ok(())
}

fn wall(what: &str, t: Instant) {
    eprintln!("{what} took {:.1} s", t.elapsed().as_secs_f64());
}

fn cell_ids(fleet: &FleetDataset) -> Vec<u32> {
    fleet.cells.iter().map(|c| c.condition.cell_id).collect()
}

pub fn generate(s: &Settings, out: &Path) -> Result<(), CliError> {
    let t = Instant::now();
    let fleet = generate_fleet(&s.fleet_config(), s.seed)?;
    let manifest = write_fleet(&fleet, out)?;
    wall("generate", t);
    // the manifest is what downstream loading trusts, so re-read it
    let check: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json"))?)?;
    if check["format_version"] != FLEET_FORMAT_VERSION {
        return Err(CliError::Usage("fleet manifest failed validation".into()));
    }
    let mut outputs = vec!["manifest.json".to_string()];
    let mut cells = Vec::new();
    for (entry, cell) in manifest.cells.iter().zip(&fleet.cells) {
        outputs.push(entry.file.clone());
        let last = cell.cycles.last().map(|c| c.discharge_capacity / cell.condition.c_fresh);
        println!(
            "cell {:02}: charge {}C, discharge {}C, {} cycles, final SOH {}",
            entry.cell_id,
            cell.condition.charge_c_rate,
            cell.condition.discharge_c_rate,
            cell.cycles.len(),
            last.map_or("-".into(), |v| format!("{v:.3}"))
        );
        cells.push(json!({ "cell": entry.cell_id, "cycles": cell.cycles.len(), "final_soh": last }));
    }
    record(out, "generate", &[], s, outputs, json!({ "cells": cells }))
}

pub fn preprocess(s: &Settings, fleet_dir: &Path, out: &Path) -> Result<(), CliError> {
    let fleet = load_fleet(fleet_dir)?;
    let ids = cell_ids(&fleet);
    let plan = SplitPlan::with_targets(&ids, &s.target_cells(&ids), s.rt, s.cycles, s.seed);
    let ds = prepare_dataset(&fleet, &s.window(), &plan)?;
    fs::create_dir_all(out)?;
    ds.write(out)?;
    let reread = Dataset::load(out)?;
    if reread.samples.len() != ds.samples.len() {
        return Err(CliError::Usage("dataset failed validation after writing".into()));
    }
    let mut counts = BTreeMap::new();
    for name in SplitName::ALL {
        let n = ds.splits.get(name).len();
        println!("{:<13} {n}", name.as_str());
        counts.insert(name.as_str(), n);
    }
    for sk in &ds.skipped {
        println!("skipped cell {} cycle {}: {}", sk.cell, sk.cycle, sk.reason);
    }
    let summary = json!({
        "samples": ds.samples.len(),
        "skipped": ds.skipped.len(),
        "splits": counts,
        "source_cells": plan.source_cells,
        "target_cells": plan.target_cells,
    });
    record(
        out,
        "preprocess",
        &[("fleet", fleet_dir)],
        s,
        vec!["dataset.json".into(), "dataset.bin".into()],
        summary,
    )
}

pub fn train(s: &Settings, data: &Path, out: &Path) -> Result<(), CliError> {
    let ds = Dataset::load(data)?;
    let vit = s.model_config(ds.l_v(), ds.channels().count());
    let t = Instant::now();
    let run = run_source(&ds, vit, &s.train_config())?;
    wall("training", t);
    let mut ck = Checkpoint {
        model: run.model,
        channels: ds.channels(),
        scaler: ds.scaler.clone(),
    };
    // report on exactly what gets saved
    ck.quantize();
    fs::create_dir_all(out)?;
    ck.save(out)?;
    Checkpoint::load(out)?;
    let val = evaluate_scaled(&ck.model, &ds.scaled(SplitName::SourceVal)?)?;
    let test = evaluate_scaled(&ck.model, &ds.scaled(SplitName::SourceTest)?)?;
    run.history.write_csv(&out.join("history.csv"))?;
    let mut outputs = vec!["model.json".into(), "model.bin".into(), "history.csv".into()];
    write_report(out, "report", &test, &mut outputs)?;
    println!(
        "stopped after {} epochs ({:?}); best epoch {}; source test RMSPE {:.4}% MAPE {:.4}% SDE {:.4}%",
        run.history.epochs.len(),
        run.history.stop_reason,
        run.history.best_epoch,
        test.rmspe,
        test.mape,
        test.sde
    );
    let summary = json!({
        "parameters": ck.model.parameter_count(),
        "epochs_run": run.history.epochs.len(),
        "best_epoch": run.history.best_epoch,
        "stop_reason": run.history.stop_reason,
        "best_val_rmspe": run.history.best_val_rmspe,
        "source_val": metrics(&val),
        "source_test": metrics(&test),
    });
    record(out, "train", &[("data", data)], s, outputs, summary)
}

/// True when every encoder tensor of `a` equals `b`'s bit for bit.
fn vit_identical(a: &ViTFc, b: &ViTFc) -> bool {
    a.params().iter().zip(b.params()).filter(|(p, _)| p.part == Part::Vit).all(|(p, q)| {
        p.name == q.name
            && p.value.shape() == q.value.shape()
            && p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

pub fn transfer(s: &Settings, data: &Path, model: &Path, out: &Path) -> Result<(), CliError> {
    let ds = Dataset::load(data)?;
    let source = Checkpoint::load(model)?;
    source.check_dataset(&ds.index())?;
    let tasks = target_tasks(&ds, s.cycles)?;
    let t = Instant::now();
    let runs = run_transfer(&source.model, &tasks, &s.fine_tune_config(), &s.train_config())?;
    wall("fine-tuning", t);
    fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    let mut cells = Vec::new();
    let (mut before_rows, mut after_rows): (Vec<ReportRow>, Vec<ReportRow>) = (Vec::new(), Vec::new());
    for (run, task) in runs.into_iter().zip(&tasks) {
        let sub = format!("cell{:02}", run.cell);
        let dir = out.join(&sub);
        fs::create_dir_all(&dir)?;
        let mut ck = Checkpoint {
            model: run.model,
            channels: source.channels,
            scaler: source.scaler.clone(),
        };
        ck.quantize();
        ck.save(&dir)?;
        let saved = Checkpoint::load(&dir)?;
        let after = evaluate_scaled(&saved.model, &task.test)?;
        let unchanged = vit_identical(&saved.model, &source.model);
        let mut local = Vec::new();
        write_report(&dir, "before", &run.before, &mut local)?;
        write_report(&dir, "after", &after, &mut local)?;
        let mut losses = String::from("epoch,loss\n");
        for (i, l) in run.losses.iter().enumerate() {
            losses.push_str(&format!("{},{l}\n", i + 1));
        }
        fs::write(dir.join("finetune_loss.csv"), losses)?;
        local.extend(["model.json".into(), "model.bin".into(), "finetune_loss.csv".into()]);
        outputs.extend(local.into_iter().map(|f| format!("{sub}/{f}")));
        println!(
            "cell {:02}: target test RMSPE {:.4}% -> {:.4}% ({} fine-tuning samples, encoder unchanged: {unchanged})",
            run.cell,
            run.before.rmspe,
            after.rmspe,
            task.train.len()
        );
        cells.push(json!({
            "cell": run.cell,
            "train_cycles": task.train.iter().map(|x| x.cycle).collect::<Vec<_>>(),
            "before": metrics(&run.before),
            "after": metrics(&after),
            "final_loss": run.losses.last(),
            "encoder_unchanged": unchanged,
        }));
        before_rows.extend(run.before.rows);
        after_rows.extend(after.rows);
    }
    let before = MetricsReport::from_rows(before_rows)?;
    let after = MetricsReport::from_rows(after_rows)?;
    println!("all targets: RMSPE {:.4}% -> {:.4}%", before.rmspe, after.rmspe);
    let summary = json!({ "cells": cells, "pooled_before": metrics(&before), "pooled_after": metrics(&after) });
    record(out, "transfer", &[("data", data), ("model", model)], s, outputs, summary)
}

pub fn evaluate(s: &Settings, data: &Path, model: &Path, split: SplitName, out: &Path) -> Result<(), CliError> {
    let ds = Dataset::load(data)?;
    let ck = Checkpoint::load(model)?;
    ck.check_dataset(&ds.index())?;
    let r = evaluate_scaled(&ck.model, &ds.scaled(split)?)?;
    fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    write_report(out, "report", &r, &mut outputs)?;
    println!(
        "{}: RMSPE {:.4}% MAPE {:.4}% SDE {:.4}% over {} samples",
        split.as_str(),
        r.rmspe,
        r.mape,
        r.sde,
        r.m
    );
    let summary = json!({ "split": split, "metrics": metrics(&r) });
    record(out, "evaluate", &[("data", data), ("model", model)], s, outputs, summary)
}

pub fn sweep(
    s: &Settings,
    kind: SweepKind,
    fleet_dir: Option<&Path>,
    grid: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let fleet = match fleet_dir {
        Some(d) => load_fleet(d)?,
        None => generate_fleet(&s.fleet_config(), s.seed)?,
    };
    let grid = match grid {
        Some(g) => kind.parse_grid(g)?,
        None => kind.default_grid(),
    };
    let base = s.sweep_base(s.target_cells(&cell_ids(&fleet)));
    let t = Instant::now();
    let (rows, summary) = run_sweep(&fleet, &base, kind, &grid, s.repeats, s.seed, s.threads)?;
    wall("sweep", t);
    fs::create_dir_all(out)?;
    let (csv, js) = (format!("sweep_{}.csv", kind.as_str()), format!("sweep_{}_summary.json", kind.as_str()));
    write_sweep_csv(&rows, &out.join(&csv))?;
    write_json(&out.join(&js), &summary)?;
    for b in &summary.stats {
        let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.3}"));
        println!(
            "{} = {:<13} test RMSPE median {} [{} .. {}], {} ok, {} failed",
            kind.as_str(),
            b.value,
            f(b.median),
            f(b.min),
            f(b.max),
            b.ok,
            b.failed
        );
    }
    let inputs: Vec<(&'static str, &Path)> = fleet_dir.map(|d| ("fleet", d)).into_iter().collect();
    let brief = json!({
        "sweep": kind,
        "grid": grid.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        "rows": rows.len(),
        "failed": rows.iter().filter(|r| r.error.is_some()).count(),
        "best_value": summary.best_value,
    });
    record(out, "sweep", &inputs, s, vec![csv, js], brief)
}
