//! Browser bindings. Every export returns JSON text; the page parses it.
//! The plain functions are what the native tests exercise.

use serde_json::{json, Value};
use soh_core::battery::{aged_state, simulate_cycle, CellCondition, FleetConfig, StepSeries};
use soh_core::preprocess::{discretize, extract_voltage_window};
use soh_core::rng::derive_seed;
use soh_core::{Error, Result};
use wasm_bindgen::prelude::*;

const DT: f64 = 1.0;

fn condition(cell: u32, seed: u32) -> Result<CellCondition> {
    let mut cond = FleetConfig::default()
        .conditions
        .into_iter()
        .find(|c| c.cell_id == cell)
        .ok_or_else(|| Error::Config(format!("no default condition for cell {cell}")))?;
    // same per-cell stream as a generated fleet with this seed
    cond.seed = derive_seed(seed as u64, cell as u64);
    Ok(cond)
}

fn thin(s: &StepSeries, every: usize) -> Value {
    let pick = |v: &[f64]| v.iter().step_by(every.max(1)).copied().collect::<Vec<_>>();
    json!({
        "t": pick(&s.time_s),
        "i": pick(&s.current_a),
        "v": pick(&s.voltage_v),
        "temp": pick(&s.temp_c),
    })
}

pub fn conditions_value() -> Value {
    let rows: Vec<Value> = FleetConfig::default()
        .conditions
        .iter()
        .map(|c| json!({ "cell": c.cell_id, "charge_c": c.charge_c_rate, "discharge_c": c.discharge_c_rate }))
        .collect();
    Value::Array(rows)
}

/// One simulated cycle, every step thinned to every `every`-th sample.
pub fn cycle_value(cell: u32, cycle: u32, seed: u32, every: usize) -> Result<Value> {
    let cond = condition(cell, seed)?;
    let rec = simulate_cycle(&cond, cycle, DT, cond.seed)?;
    let (c_aged, r_aged) = aged_state(&cond, cycle);
    Ok(json!({
        "cell": cell,
        "cycle": cycle,
        "soh": rec.discharge_capacity / cond.c_fresh,
        "c_aged": c_aged,
        "r_aged": r_aged,
        "steps": {
            "cc": thin(&rec.cc, every),
            "cv": thin(&rec.cv, every),
            "rest": thin(&rec.rest, every),
            "dis": thin(&rec.discharge, every),
        },
    }))
}

/// Configured SOH and resistance-growth curves of every default condition.
pub fn fade_value(max_cycles: u32, step: u32) -> Result<Value> {
    if step == 0 {
        return Err(Error::Config("step must be positive".into()));
    }
    let ks: Vec<u32> = (0..=max_cycles).step_by(step as usize).collect();
    let cells: Vec<Value> = FleetConfig::default()
        .conditions
        .iter()
        .map(|c| {
            let (soh, r): (Vec<f64>, Vec<f64>) = ks
                .iter()
                .map(|&k| {
                    let (cap, res) = aged_state(c, k);
                    (cap / c.c_fresh, res / c.r_fresh)
                })
                .unzip();
            json!({ "cell": c.cell_id, "soh": soh, "r_rel": r })
        })
        .collect();
    Ok(json!({ "k": ks, "cells": cells }))
}

/// The raw channels of one cycle's charge window, resampled to `points`.
pub fn window_value(cell: u32, cycle: u32, seed: u32, v_low: f64, v_high: f64, points: usize) -> Result<Value> {
    let cond = condition(cell, seed)?;
    let rec = simulate_cycle(&cond, cycle, DT, cond.seed)?;
    let (t_low, t_high) = extract_voltage_window(&rec, v_low, v_high)?;
    let cc = &rec.cc;
    let ch = |v: &[f64]| discretize(&cc.time_s, v, t_low, t_high, points);
    Ok(json!({
        "t_low": t_low,
        "t_high": t_high,
        "i": ch(&cc.current_a)?,
        "v": ch(&cc.voltage_v)?,
        "temp": ch(&cc.temp_c)?,
        "soh": rec.discharge_capacity / cond.c_fresh,
    }))
}

fn js(r: Result<Value>) -> std::result::Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn conditions() -> String {
    conditions_value().to_string()
}

#[wasm_bindgen]
pub fn cycle_curves(cell: u32, cycle: u32, seed: u32, every: usize) -> std::result::Result<String, JsError> {
    js(cycle_value(cell, cycle, seed, every))
}

#[wasm_bindgen]
pub fn fade_curves(max_cycles: u32, step: u32) -> std::result::Result<String, JsError> {
    js(fade_value(max_cycles, step))
}

#[wasm_bindgen]
pub fn window_matrix(
    cell: u32,
    cycle: u32,
    seed: u32,
    v_low: f64,
    v_high: f64,
    points: usize,
) -> std::result::Result<String, JsError> {
    js(window_value(cell, cycle, seed, v_low, v_high, points))
}
