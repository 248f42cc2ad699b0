//! Preprocessed dataset: `dataset.bin` (f32 LE, one `F × L_V` matrix per
//! sample, unscaled) and `dataset.json` (index, scaler, split plan).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sample::{build_cell_samples, ChannelSet, SampleMatrix, Skipped, WindowSpec};
use super::scaler::MinMaxScaler;
use super::split::{split_dataset, SplitName, SplitPlan, Splits};
use crate::battery::FleetDataset;
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: &str = "soh-dataset/1";
pub const DATASET_BLOB: &str = "dataset.bin";
pub const DATASET_INDEX: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub cell: u32,
    pub cycle: u32,
    pub y: f64,
    /// Byte offset into the blob.
    pub offset: u64,
    pub split: Option<SplitName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format_version: String,
    pub l_v: usize,
    pub channels: Vec<String>,
    pub window: WindowSpec,
    pub fleet_seed: u64,
    pub seed: u64,
    pub plan: SplitPlan,
    pub scaler: MinMaxScaler,
    pub samples: Vec<SampleEntry>,
    pub skipped: Vec<Skipped>,
}

/// Samples with their split membership and the source-train scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub window: WindowSpec,
    pub fleet_seed: u64,
    pub plan: SplitPlan,
    pub samples: Vec<SampleMatrix>,
    pub splits: Splits,
    pub scaler: MinMaxScaler,
    pub skipped: Vec<Skipped>,
}

/// Builds samples for every fleet cycle, splits them and fits the scaler on
/// the source training split (validation excluded).
pub fn prepare_dataset(fleet: &FleetDataset, window: &WindowSpec, plan: &SplitPlan) -> Result<Dataset> {
    plan.validate()?;
    for id in plan.source_cells.iter().chain(&plan.target_cells) {
        if fleet.cell(*id).is_none() {
            return Err(Error::Config(format!("cell {id} is not in the fleet")));
        }
    }
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for cell in &fleet.cells {
        let (s, k) = build_cell_samples(cell, window)?;
        samples.extend(s);
        skipped.extend(k);
    }
    if samples.is_empty() {
        return Err(Error::Coverage(format!(
            "no cycle covers the window [{}, {}] V",
            window.v_low, window.v_high
        )));
    }
    let splits = split_dataset(&samples, plan)?;
    let scaler = MinMaxScaler::fit(splits.source_train.iter().map(|&i| &samples[i]))?;
    Ok(Dataset {
        window: *window,
        fleet_seed: fleet.seed,
        plan: plan.clone(),
        samples,
        splits,
        scaler,
        skipped,
    })
}

impl Dataset {
    pub fn l_v(&self) -> usize {
        self.window.points
    }

    pub fn channels(&self) -> ChannelSet {
        self.window.channels
    }

    /// Scaled copies of the samples of one split.
    pub fn scaled(&self, name: SplitName) -> Result<Vec<SampleMatrix>> {
        self.splits
            .get(name)
            .iter()
            .map(|&i| self.scaler.apply_sample(&self.samples[i]))
            .collect()
    }

    pub fn index(&self) -> DatasetIndex {
        let membership = self.splits.membership(self.samples.len());
        let stride = (self.channels().count() * self.l_v() * 4) as u64;
        DatasetIndex {
            format_version: DATASET_FORMAT_VERSION.into(),
            l_v: self.l_v(),
            channels: self.channels().names().iter().map(|s| s.to_string()).collect(),
            window: self.window,
            fleet_seed: self.fleet_seed,
            seed: self.plan.seed,
            plan: self.plan.clone(),
            scaler: self.scaler.clone(),
            samples: self
                .samples
                .iter()
                .zip(membership)
                .enumerate()
                .map(|(i, (s, split))| SampleEntry {
                    cell: s.cell_id,
                    cycle: s.cycle,
                    y: s.y,
                    offset: i as u64 * stride,
                    split,
                })
                .collect(),
            skipped: self.skipped.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<DatasetIndex> {
        fs::create_dir_all(dir)?;
        let mut blob = BufWriter::new(File::create(dir.join(DATASET_BLOB))?);
        for s in &self.samples {
            for &v in &s.x {
                blob.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        blob.flush()?;
        let index = self.index();
        let mut f = BufWriter::new(File::create(dir.join(DATASET_INDEX))?);
        serde_json::to_writer_pretty(&mut f, &index)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(index)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: DatasetIndex = serde_json::from_reader(BufReader::new(File::open(dir.join(DATASET_INDEX))?))?;
        if index.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "dataset format {} (expected {DATASET_FORMAT_VERSION})",
                index.format_version
            )));
        }
        let channels = index.window.channels;
        if index.l_v != index.window.points || index.channels != channels.names() {
            return Err(Error::Format("dataset index header is inconsistent".into()));
        }
        if index.scaler.channels() != channels.count() {
            return Err(Error::Format("scaler channel count differs from dataset".into()));
        }
        let mut bytes = Vec::new();
        File::open(dir.join(DATASET_BLOB))?.read_to_end(&mut bytes)?;
        let per = channels.count() * index.l_v;
        let mut samples = Vec::with_capacity(index.samples.len());
        let mut splits = Splits::default();
        for (i, e) in index.samples.iter().enumerate() {
            let start = e.offset as usize;
            let end = start + per * 4;
            let raw = bytes
                .get(start..end)
                .ok_or_else(|| Error::Format(format!("sample {i} lies outside the blob")))?;
            let x = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            samples.push(SampleMatrix {
                x,
                channels,
                points: index.l_v,
                y: e.y,
                cell_id: e.cell,
                cycle: e.cycle,
            });
            match e.split {
                Some(SplitName::SourceTrain) => splits.source_train.push(i),
                Some(SplitName::SourceVal) => splits.source_val.push(i),
                Some(SplitName::SourceTest) => splits.source_test.push(i),
                Some(SplitName::TargetTrain) => splits.target_train.push(i),
                Some(SplitName::TargetTest) => splits.target_test.push(i),
                None => {}
            }
        }
        Ok(Self {
            window: index.window,
            fleet_seed: index.fleet_seed,
            plan: index.plan,
            samples,
            splits,
            scaler: index.scaler,
            skipped: index.skipped,
        })
    }
}
