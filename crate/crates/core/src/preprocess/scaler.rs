use serde::{Deserialize, Serialize};

use super::sample::SampleMatrix;
use crate::error::{dim_err, Error, Result};

/// Per-channel min-max normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits over every value of every channel row in `samples`.
    pub fn fit<'a, I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a SampleMatrix>,
    {
        let mut it = samples.into_iter().peekable();
        let first = it
            .peek()
            .ok_or_else(|| Error::Config("cannot fit a scaler on an empty training set".into()))?;
        let f = first.n_channels();
        let mut min = vec![f64::INFINITY; f];
        let mut max = vec![f64::NEG_INFINITY; f];
        for s in it {
            if s.n_channels() != f {
                return dim_err(format!("sample has {} channels, expected {f}", s.n_channels()));
            }
            for c in 0..f {
                for &v in s.channel(c) {
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        for c in 0..f {
            if max[c] == min[c] {
                log::warn!("channel {c} is constant ({}) over the training set; mapped to 0.5", min[c]);
            }
        }
        Ok(Self { min, max })
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    pub fn scale_value(&self, c: usize, v: f64) -> f64 {
        let span = self.max[c] - self.min[c];
        if span == 0.0 {
            0.5
        } else {
            (v - self.min[c]) / span
        }
    }

    pub fn invert_value(&self, c: usize, u: f64) -> f64 {
        let span = self.max[c] - self.min[c];
        if span == 0.0 {
            self.min[c]
        } else {
            self.min[c] + u * span
        }
    }

    /// Scales a channel-major `F × points` matrix in place. No clamping.
    pub fn apply(&self, x: &mut [f64], points: usize) -> Result<()> {
        if x.len() != self.channels() * points {
            return dim_err(format!(
                "matrix of {} values does not hold {} channels of {points}",
                x.len(),
                self.channels()
            ));
        }
        for (c, row) in x.chunks_mut(points).enumerate() {
            for v in row {
                *v = self.scale_value(c, *v);
            }
        }
        Ok(())
    }

    pub fn invert(&self, x: &mut [f64], points: usize) -> Result<()> {
        if x.len() != self.channels() * points {
            return dim_err("matrix does not match scaler channels");
        }
        for (c, row) in x.chunks_mut(points).enumerate() {
            for v in row {
                *v = self.invert_value(c, *v);
            }
        }
        Ok(())
    }

    pub fn apply_sample(&self, s: &SampleMatrix) -> Result<SampleMatrix> {
        let mut out = s.clone();
        self.apply(&mut out.x, s.points)?;
        Ok(out)
    }
}
