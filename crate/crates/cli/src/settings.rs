//! Flat run settings. Sources merge as defaults < config file < `--set` <
//! dedicated flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use soh_core::battery::{FleetConfig, NoiseLevels};
use soh_core::experiment::{ModelScale, SweepBase};
use soh_core::model::ViTConfig;
use soh_core::preprocess::{ChannelSet, WindowSpec};
use soh_core::train::{FineTuneConfig, HeadNorm, TrainConfig};

use crate::CliError;

/// Target cells used when none are named, mirroring the paper's two
/// held-out batteries.
pub const DEFAULT_TARGETS: [u32; 2] = [2, 7];
pub const FAST_FINE_TUNE_EPOCHS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,

    pub cells: usize,
    pub max_cycles: u32,
    pub cycle_stride: u32,
    pub noise: bool,

    pub channels: ChannelSet,
    pub v_low: f64,
    pub v_high: f64,
    pub lv: usize,
    pub rt: f64,
    /// `None` picks the default targets present in the fleet.
    pub targets: Option<Vec<u32>>,
    /// Leading target cycles used for fine-tuning.
    pub cycles: usize,

    pub paper_config: bool,
    pub depth: Option<usize>,

    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,

    pub ft_epochs: usize,
    pub head_norm: HeadNorm,

    pub repeats: usize,
    pub threads: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let fleet = FleetConfig::default();
        let window = WindowSpec::default();
        let train = TrainConfig::default();
        Self {
            seed: 42,
            cells: fleet.conditions.len(),
            max_cycles: fleet.max_cycles,
            cycle_stride: fleet.cycle_stride,
            noise: true,
            channels: window.channels,
            v_low: window.v_low,
            v_high: window.v_high,
            lv: window.points,
            rt: 0.7,
            targets: None,
            cycles: 4,
            paper_config: false,
            depth: None,
            lr: train.lr,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            ft_epochs: 20000,
            head_norm: HeadNorm::Fixed,
            repeats: 10,
            threads: 1,
        }
    }
}

impl Settings {
    /// Resolves the layers in precedence order. `file` may be a flat settings
    /// object or a run record, whose `settings` member is used.
    pub fn resolve(file: Option<&Path>, sets: &[String], flags: Map<String, Value>) -> Result<Self, CliError> {
        let Value::Object(mut merged) = serde_json::to_value(Settings::default())? else {
            unreachable!("settings serialize to an object")
        };
        let mut apply = |layer: Map<String, Value>, origin: &str| -> Result<(), CliError> {
            for (k, v) in layer {
                if !merged.contains_key(&k) {
                    return Err(CliError::Usage(format!("unknown setting '{k}' in {origin}")));
                }
                merged.insert(k, v);
            }
            Ok(())
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let mut v: Value = serde_json::from_str(&text)?;
            if let Some(inner) = v.get_mut("settings") {
                v = inner.take();
            }
            match v {
                Value::Object(m) => apply(m, &path.display().to_string())?,
                _ => return Err(CliError::Usage(format!("config {} is not a JSON object", path.display()))),
            }
        }
        let mut set_layer = Map::new();
        for kv in sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{kv}'")))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            set_layer.insert(k.trim().to_string(), value);
        }
        apply(set_layer, "--set")?;
        apply(flags, "flags")?;
        let s: Settings = serde_json::from_value(Value::Object(merged))
            .map_err(|e| CliError::Usage(format!("invalid settings: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.cells == 0 {
            return bad("cells must be at least 1");
        }
        if self.cycle_stride == 0 {
            return bad("cycle_stride must be at least 1");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }

    pub fn fleet_config(&self) -> FleetConfig {
        let mut c = FleetConfig::default().with_cells(self.cells);
        c.max_cycles = self.max_cycles;
        c.cycle_stride = self.cycle_stride;
        if !self.noise {
            c = c.with_noise(NoiseLevels::off());
        }
        c
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            channels: self.channels,
            v_low: self.v_low,
            v_high: self.v_high,
            points: self.lv,
        }
    }

    /// Named targets, or the default ones among `available`.
    pub fn target_cells(&self, available: &[u32]) -> Vec<u32> {
        match &self.targets {
            Some(t) => t.clone(),
            None => DEFAULT_TARGETS.into_iter().filter(|id| available.contains(id)).collect(),
        }
    }

    pub fn scale(&self) -> ModelScale {
        if self.paper_config {
            ModelScale::Paper
        } else {
            ModelScale::Desk
        }
    }

    pub fn model_config(&self, l_v: usize, f: usize) -> ViTConfig {
        let mut c = self.scale().config(l_v, f);
        if let Some(d) = self.depth {
            c.depth = d;
        }
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn fine_tune_config(&self) -> FineTuneConfig {
        FineTuneConfig {
            epochs: self.ft_epochs,
            head_norm: self.head_norm,
        }
    }

    pub fn sweep_base(&self, targets: Vec<u32>) -> SweepBase {
        SweepBase {
            window: self.window(),
            targets,
            r_t: self.rt,
            c: self.cycles,
            scale: self.scale(),
            depth: self.depth,
            train: self.train_config(),
        }
    }
}
