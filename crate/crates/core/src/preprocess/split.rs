use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::sample::SampleMatrix;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Share of the source training set held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub source_cells: Vec<u32>,
    pub target_cells: Vec<u32>,
    /// Training-set ratio over source samples.
    pub r_t: f64,
    /// Leading cycles per target cell used for fine-tuning.
    pub c: usize,
    pub seed: u64,
}

impl SplitPlan {
    /// Target cells as given; every other fleet cell is a source cell.
    pub fn with_targets(all_cells: &[u32], target_cells: &[u32], r_t: f64, c: usize, seed: u64) -> Self {
        Self {
            source_cells: all_cells.iter().copied().filter(|id| !target_cells.contains(id)).collect(),
            target_cells: target_cells.to_vec(),
            r_t,
            c,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_t > 0.0 && self.r_t < 1.0) {
            return Err(Error::Config(format!("training ratio must lie in (0, 1), got {}", self.r_t)));
        }
        if self.c < 1 {
            return Err(Error::Config("target training cycle count must be at least 1".into()));
        }
        let source: BTreeSet<_> = self.source_cells.iter().collect();
        if let Some(id) = self.target_cells.iter().find(|id| source.contains(id)) {
            return Err(Error::Config(format!("cell {id} is both source and target")));
        }
        if self.source_cells.is_empty() {
            return Err(Error::Config("no source cells".into()));
        }
        Ok(())
    }
}

/// Sample indices of every split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub source_train: Vec<usize>,
    pub source_val: Vec<usize>,
    pub source_test: Vec<usize>,
    pub target_train: Vec<usize>,
    pub target_test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    SourceTrain,
    SourceVal,
    SourceTest,
    TargetTrain,
    TargetTest,
}

impl SplitName {
    pub const ALL: [SplitName; 5] = [
        SplitName::SourceTrain,
        SplitName::SourceVal,
        SplitName::SourceTest,
        SplitName::TargetTrain,
        SplitName::TargetTest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::SourceTrain => "source_train",
            SplitName::SourceVal => "source_val",
            SplitName::SourceTest => "source_test",
            SplitName::TargetTrain => "target_train",
            SplitName::TargetTest => "target_test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split '{s}'")))
    }
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::SourceTrain => &self.source_train,
            SplitName::SourceVal => &self.source_val,
            SplitName::SourceTest => &self.source_test,
            SplitName::TargetTrain => &self.target_train,
            SplitName::TargetTest => &self.target_test,
        }
    }

    /// Split membership of every sample, `None` for samples of unused cells.
    pub fn membership(&self, n: usize) -> Vec<Option<SplitName>> {
        let mut out = vec![None; n];
        for name in SplitName::ALL {
            for &i in self.get(name) {
                out[i] = Some(name);
            }
        }
        out
    }
}

/// Partitions samples per the plan. Source samples are pooled and shuffled;
/// target cells contribute their `c` lowest cycles to training.
pub fn split_dataset(samples: &[SampleMatrix], plan: &SplitPlan) -> Result<Splits> {
    plan.validate()?;
    let mut source: Vec<usize> = (0..samples.len())
        .filter(|&i| plan.source_cells.contains(&samples[i].cell_id))
        .collect();
    source.shuffle(&mut stream(plan.seed, Purpose::Split, 0, 0));
    let n_train = (plan.r_t * source.len() as f64).floor() as usize;
    let n_val = (VALIDATION_FRACTION * n_train as f64).floor() as usize;
    let mut out = Splits {
        source_val: source[..n_val].to_vec(),
        source_train: source[n_val..n_train].to_vec(),
        source_test: source[n_train..].to_vec(),
        ..Splits::default()
    };
    for &cell in &plan.target_cells {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].cell_id == cell).collect();
        idx.sort_by_key(|&i| samples[i].cycle);
        let cut = plan.c.min(idx.len());
        out.target_train.extend_from_slice(&idx[..cut]);
        out.target_test.extend_from_slice(&idx[cut..]);
    }
    // membership is random, order is canonical
    out.source_train.sort_unstable();
    out.source_val.sort_unstable();
    out.source_test.sort_unstable();
    out.target_train.sort_unstable();
    out.target_test.sort_unstable();
    for name in SplitName::ALL {
        let empty_target = matches!(name, SplitName::TargetTrain | SplitName::TargetTest) && plan.target_cells.is_empty();
        if out.get(name).is_empty() && !empty_target {
            return Err(Error::Config(format!("split {} is empty", name.as_str())));
        }
    }
    Ok(out)
}
