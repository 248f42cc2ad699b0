//! Fleet files: one `cellNN.csv` per cell plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fleet::{CellData, FleetConfig, FleetDataset};
use super::sim::HppcResult;
use super::{CellCondition, CycleRecord, Step, StepSeries};
use crate::error::{Error, Result};

pub const FLEET_FORMAT_VERSION: &str = "soh-fleet/1";
pub const CYCLE_CSV_HEADER: [&str; 6] = ["cycle", "step", "time_s", "current_A", "voltage_V", "temp_C"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub cycle: u32,
    pub discharge_capacity_ah: f64,
    pub capacity_test: bool,
    pub hppc: Option<HppcResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub cell_id: u32,
    pub file: String,
    pub condition: CellCondition,
    pub cycles: Vec<CycleSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetManifest {
    pub format_version: String,
    pub seed: u64,
    pub config: FleetConfig,
    pub cells: Vec<CellEntry>,
}

pub fn cell_file_name(cell_id: u32) -> String {
    format!("cell{cell_id:02}.csv")
}

pub fn write_fleet(fleet: &FleetDataset, dir: &Path) -> Result<FleetManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(fleet.cells.len());
    for cell in &fleet.cells {
        let id = cell.condition.cell_id;
        let file = cell_file_name(id);
        write_cell_csv(&cell.cycles, &dir.join(&file))?;
        entries.push(CellEntry {
            cell_id: id,
            file,
            condition: cell.condition.clone(),
            cycles: cell
                .cycles
                .iter()
                .map(|r| CycleSummary {
                    cycle: r.cycle,
                    discharge_capacity_ah: r.discharge_capacity,
                    capacity_test: r.cycle % fleet.capacity_test_interval() == 0,
                    hppc: r.hppc,
                })
                .collect(),
        });
    }
    let manifest = FleetManifest {
        format_version: FLEET_FORMAT_VERSION.into(),
        seed: fleet.seed,
        config: fleet.config.clone(),
        cells: entries,
    };
    let mut f = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(manifest)
}

fn write_cell_csv(cycles: &[CycleRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(CYCLE_CSV_HEADER).map_err(csv_err)?;
    for rec in cycles {
        let cycle = rec.cycle.to_string();
        for step in Step::ALL {
            let s = rec.step(step);
            for j in 0..s.len() {
                w.write_record([
                    cycle.as_str(),
                    step.tag(),
                    &format!("{:.3}", s.time_s[j]),
                    &format!("{:.6}", s.current_a[j]),
                    &format!("{:.6}", s.voltage_v[j]),
                    &format!("{:.4}", s.temp_c[j]),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Reads a fleet directory written by [`write_fleet`].
pub fn load_fleet(dir: &Path) -> Result<FleetDataset> {
    let manifest: FleetManifest =
        serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
    if manifest.format_version != FLEET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "fleet format {} (expected {FLEET_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut cells = Vec::with_capacity(manifest.cells.len());
    for entry in &manifest.cells {
        let mut by_cycle = read_cell_csv(&dir.join(&entry.file), entry.cell_id)?;
        let mut cycles = Vec::with_capacity(entry.cycles.len());
        for summary in &entry.cycles {
            let mut rec = by_cycle.remove(&summary.cycle).ok_or_else(|| {
                Error::Format(format!("{}: cycle {} missing", entry.file, summary.cycle))
            })?;
            rec.discharge_capacity = summary.discharge_capacity_ah;
            rec.hppc = summary.hppc;
            cycles.push(rec);
        }
        cells.push(CellData {
            condition: entry.condition.clone(),
            cycles,
        });
    }
    Ok(FleetDataset {
        config: manifest.config,
        seed: manifest.seed,
        cells,
    })
}

fn read_cell_csv(path: &Path, cell_id: u32) -> Result<BTreeMap<u32, CycleRecord>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header != CYCLE_CSV_HEADER {
        return Err(Error::Format(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut out: BTreeMap<u32, CycleRecord> = BTreeMap::new();
    let bad = |line: u64, what: &str| Error::Format(format!("{}:{line}: bad {what}", path.display()));
    for (n, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = n as u64 + 2;
        let num = |i: usize, what: &str| -> Result<f64> {
            row.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad(line, what))
        };
        let cycle: u32 = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad(line, "cycle"))?;
        let step = row.get(1).and_then(Step::from_tag).ok_or_else(|| bad(line, "step"))?;
        let rec = out.entry(cycle).or_insert_with(|| CycleRecord {
            cell_id,
            cycle,
            cc: StepSeries::default(),
            cv: StepSeries::default(),
            rest: StepSeries::default(),
            discharge: StepSeries::default(),
            discharge_capacity: 0.0,
            hppc: None,
        });
        rec.step_mut(step)
            .push(num(2, "time")?, num(3, "current")?, num(4, "voltage")?, num(5, "temperature")?);
    }
    Ok(out)
}
