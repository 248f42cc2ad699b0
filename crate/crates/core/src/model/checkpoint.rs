//! Checkpoint pair: `model.json` (config, tensor table, scaler) and
//! `model.bin` (f32 LE, row-major, in table order).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ViTConfig;
use super::vit::{Part, ViTFc};
use crate::autodiff::BatchNormState;
use crate::error::{Error, Result};
use crate::preprocess::{ChannelSet, DatasetIndex, MinMaxScaler};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: &str = "soh-vit-fc/1";
pub const CHECKPOINT_MANIFEST: &str = "model.json";
pub const CHECKPOINT_BLOB: &str = "model.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Param,
    /// Batch-norm running statistic.
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub kind: TensorKind,
    pub part: Part,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: String,
    pub config: ViTConfig,
    pub channels: ChannelSet,
    pub scaler: MinMaxScaler,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub tensors: Vec<TensorEntry>,
}

/// A model together with the input conventions it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ViTFc,
    pub channels: ChannelSet,
    pub scaler: MinMaxScaler,
}

const RUNNING_MEAN: &str = "head.bn.running_mean";
const RUNNING_VAR: &str = "head.bn.running_var";

impl Checkpoint {
    /// Errors unless the model was built for this dataset's shape.
    pub fn check_dataset(&self, index: &DatasetIndex) -> Result<()> {
        let cfg = self.model.config();
        if cfg.l_v != index.l_v || cfg.f != index.window.channels.count() || self.channels != index.window.channels {
            return Err(Error::Config(format!(
                "checkpoint expects L_V = {} with {} channels ({:?}), dataset has L_V = {} with {:?}",
                cfg.l_v, cfg.f, self.channels, index.l_v, index.window.channels
            )));
        }
        Ok(())
    }

    /// Every tensor, parameters then running statistics, as f32 values.
    fn table(&self) -> Vec<(TensorEntry, Vec<f32>)> {
        let mut out = Vec::new();
        let mut offset = 0u64;
        let mut push = |name: &str, t: &Tensor, kind, part, frozen| {
            let data: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
            let entry = TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                kind,
                part,
                frozen,
            };
            offset += 4 * data.len() as u64;
            out.push((entry, data));
        };
        for p in self.model.params() {
            push(&p.name, &p.value, TensorKind::Param, p.part, p.frozen);
        }
        let bn = &self.model.bn;
        let head_frozen = self
            .model
            .params()
            .iter()
            .any(|p| p.part == Part::Head && p.frozen);
        push(
            RUNNING_MEAN,
            &Tensor::vector(bn.running_mean.clone()),
            TensorKind::Buffer,
            Part::Head,
            head_frozen,
        );
        push(
            RUNNING_VAR,
            &Tensor::vector(bn.running_var.clone()),
            TensorKind::Buffer,
            Part::Head,
            head_frozen,
        );
        out
    }

    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION.into(),
            config: self.model.config().clone(),
            channels: self.channels,
            scaler: self.scaler.clone(),
            bn_momentum: self.model.bn.momentum,
            bn_eps: self.model.bn.eps,
            tensors: self.table().into_iter().map(|(e, _)| e).collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<CheckpointManifest> {
        fs::create_dir_all(dir)?;
        let table = self.table();
        let mut blob = BufWriter::new(File::create(dir.join(CHECKPOINT_BLOB))?);
        for (_, data) in &table {
            for v in data {
                blob.write_all(&v.to_le_bytes())?;
            }
        }
        blob.flush()?;
        let manifest = self.manifest();
        let mut f = BufWriter::new(File::create(dir.join(CHECKPOINT_MANIFEST))?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest =
            serde_json::from_reader(BufReader::new(File::open(dir.join(CHECKPOINT_MANIFEST))?))?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format {} (expected {CHECKPOINT_FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        if manifest.config.f != manifest.channels.count() || manifest.scaler.channels() != manifest.channels.count() {
            return Err(Error::Format("checkpoint channel counts disagree".into()));
        }
        let mut bytes = Vec::new();
        File::open(dir.join(CHECKPOINT_BLOB))?.read_to_end(&mut bytes)?;
        let mut model = ViTFc::new(manifest.config.clone(), 0)?;
        let mut values = Vec::new();
        let mut running_mean = None;
        let mut running_var = None;
        for e in &manifest.tensors {
            if e.dtype != "f32" {
                return Err(Error::Format(format!("tensor {} has dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = bytes
                .get(start..start + 4 * n)
                .ok_or_else(|| Error::Format(format!("tensor {} lies outside the blob", e.name)))?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            match (e.kind, e.name.as_str()) {
                (TensorKind::Param, _) => values.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?, e.frozen)),
                (TensorKind::Buffer, RUNNING_MEAN) => running_mean = Some(data),
                (TensorKind::Buffer, RUNNING_VAR) => running_var = Some(data),
                (TensorKind::Buffer, other) => return Err(Error::Format(format!("unknown buffer {other}"))),
            }
        }
        let bn = BatchNormState {
            running_mean: running_mean.ok_or_else(|| Error::Format("missing running mean".into()))?,
            running_var: running_var.ok_or_else(|| Error::Format("missing running variance".into()))?,
            momentum: manifest.bn_momentum,
            eps: manifest.bn_eps,
        };
        model.load_values(values, bn)?;
        Ok(Self {
            model,
            channels: manifest.channels,
            scaler: manifest.scaler,
        })
    }

    /// Rounds every value through f32 so the in-memory model equals what
    /// [`Checkpoint::load`] would return.
    pub fn quantize(&mut self) {
        for p in self.model.params_mut() {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        let bn = &mut self.model.bn;
        for v in bn.running_mean.iter_mut().chain(bn.running_var.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let mut model = ViTFc::new(ViTConfig::desk(20, 3), 5).unwrap();
        model.apply_freeze(Part::Vit, true);
        model.bn.running_mean[0] = 0.25;
        Checkpoint {
            model,
            channels: ChannelSet::Raw,
            scaler: MinMaxScaler {
                min: vec![0.0, 3.4, 25.0],
                max: vec![5.0, 4.0, 30.0],
            },
        }
    }

    #[test]
    fn save_load_round_trip() {
        let mut c = ckpt();
        let dir = tempfile::tempdir().unwrap();
        let manifest = c.save(dir.path()).unwrap();
        assert_eq!(manifest.tensors.len(), c.model.params().len() + 2);
        let back = Checkpoint::load(dir.path()).unwrap();
        c.quantize();
        assert_eq!(back, c);
        // resaving the loaded checkpoint reproduces the bytes
        let dir2 = tempfile::tempdir().unwrap();
        back.save(dir2.path()).unwrap();
        for f in [CHECKPOINT_BLOB, CHECKPOINT_MANIFEST] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap());
        }
    }

    #[test]
    fn truncated_blob_rejected() {
        let c = ckpt();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        let blob = dir.path().join(CHECKPOINT_BLOB);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Format(_))));
    }
}
