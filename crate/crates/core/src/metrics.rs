//! Percentage error measures and evaluation reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::ViTFc;
use crate::preprocess::{MinMaxScaler, SampleMatrix};

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return dim_err(format!("{} targets vs {} predictions", y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(Error::Domain("no samples".into()));
    }
    Ok(())
}

fn check_nonzero(y: &[f64]) -> Result<()> {
    if let Some(i) = y.iter().position(|&v| v == 0.0) {
        return Err(Error::Domain(format!("target {i} is zero; relative error undefined")));
    }
    Ok(())
}

/// Root mean square percentage error, in percent.
pub fn rmspe(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    check_nonzero(y)?;
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| ((a - b) / a).powi(2)).sum();
    Ok((s / y.len() as f64).sqrt() * 100.0)
}

/// Mean absolute percentage error, in percent.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    check_nonzero(y)?;
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs() / a.abs()).sum();
    Ok(s / y.len() as f64 * 100.0)
}

/// Population standard deviation of `y − ŷ`, with SOH fractions expressed
/// in percentage points.
pub fn sde(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let m = y.len() as f64;
    let err: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| (a - b) * 100.0).collect();
    let mean = err.iter().sum::<f64>() / m;
    Ok((err.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / m).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell: u32,
    pub cycle: u32,
    pub y: f64,
    pub yhat: f64,
    /// `y − ŷ` as a fraction.
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmspe: f64,
    pub mape: f64,
    pub sde: f64,
    pub m: usize,
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<ReportRow>) -> Result<Self> {
        let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
        let yhat: Vec<f64> = rows.iter().map(|r| r.yhat).collect();
        Ok(Self {
            rmspe: rmspe(&y, &yhat)?,
            mape: mape(&y, &yhat)?,
            sde: sde(&y, &yhat)?,
            m: rows.len(),
            rows,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    /// Per-sample rows as `cell,cycle,y,yhat,err`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Eval-mode predictions on unscaled `samples`, scaled with the training-fit
/// `scaler`.
pub fn evaluate(model: &ViTFc, samples: &[SampleMatrix], scaler: &MinMaxScaler) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let scaled: Vec<SampleMatrix> = samples.iter().map(|s| scaler.apply_sample(s)).collect::<Result<_>>()?;
    evaluate_scaled(model, &scaled)
}

/// As [`evaluate`] for samples that are already scaled.
pub fn evaluate_scaled(model: &ViTFc, scaled: &[SampleMatrix]) -> Result<MetricsReport> {
    if scaled.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let inputs: Vec<&[f64]> = scaled.iter().map(|s| s.x.as_slice()).collect();
    let pred = model.predict(&inputs)?;
    let rows = scaled
        .iter()
        .zip(pred)
        .map(|(s, p)| ReportRow {
            cell: s.cell_id,
            cycle: s.cycle,
            y: s.y,
            yhat: p,
            err: s.y - p,
        })
        .collect();
    MetricsReport::from_rows(rows)
}
