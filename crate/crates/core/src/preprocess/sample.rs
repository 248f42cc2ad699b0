use serde::{Deserialize, Serialize};

use super::soh::{internal_resistance, soh_from_capacity};
use super::window::{coulomb_count, discretize, extract_voltage_window};
use crate::battery::{CellData, CycleRecord, HppcResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSet {
    /// Current, voltage, temperature.
    Raw,
    /// Raw plus coulomb-counted capacity and pulse resistance.
    Supplementary,
}

impl ChannelSet {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelSet::Raw => "raw",
            ChannelSet::Supplementary => "supplementary",
        }
    }

    pub fn names(self) -> &'static [&'static str] {
        match self {
            ChannelSet::Raw => &["I", "V", "T"],
            ChannelSet::Supplementary => &["I", "V", "T", "C", "R"],
        }
    }

    pub fn count(self) -> usize {
        self.names().len()
    }
}

impl std::str::FromStr for ChannelSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "supplementary" | "supp" => Ok(Self::Supplementary),
            other => Err(Error::Config(format!("unknown channel set '{other}'"))),
        }
    }
}

/// Window and resolution of the input matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub channels: ChannelSet,
    pub v_low: f64,
    pub v_high: f64,
    /// Discretization points per channel.
    pub points: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            channels: ChannelSet::Raw,
            v_low: 3.4,
            v_high: 4.0,
            points: 100,
        }
    }
}

/// One model input/target pair: `x` is channels × points, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    pub x: Vec<f64>,
    pub channels: ChannelSet,
    pub points: usize,
    /// SOH fraction.
    pub y: f64,
    pub cell_id: u32,
    pub cycle: u32,
}

impl SampleMatrix {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.x[c * self.points..(c + 1) * self.points]
    }

    pub fn n_channels(&self) -> usize {
        self.channels.count()
    }
}

/// Builds the input matrix of one cycle. `hppc` is the most recent pulse
/// result at or before this cycle; required for supplementary channels.
pub fn build_sample(
    cycle: &CycleRecord,
    spec: &WindowSpec,
    c_fresh: f64,
    hppc: Option<&HppcResult>,
) -> Result<SampleMatrix> {
    let (t_low, t_high) = extract_voltage_window(cycle, spec.v_low, spec.v_high)?;
    let cc = &cycle.cc;
    let mut x = Vec::with_capacity(spec.channels.count() * spec.points);
    for series in [&cc.current_a, &cc.voltage_v, &cc.temp_c] {
        x.extend(discretize(&cc.time_s, series, t_low, t_high, spec.points)?);
    }
    if spec.channels == ChannelSet::Supplementary {
        let pulse = hppc.ok_or_else(|| {
            Error::Coverage(format!(
                "cell {} cycle {}: no pulse test at or before this cycle",
                cycle.cell_id, cycle.cycle
            ))
        })?;
        let counted = coulomb_count(&cc.time_s, &cc.current_a, 0.0, 1.0);
        let on_grid = discretize(&cc.time_s, &counted, t_low, t_high, spec.points)?;
        let offset = c_fresh - on_grid[0];
        x.extend(on_grid.iter().map(|q| q + offset));
        let r_in = internal_resistance(pulse.delta_v, pulse.delta_i)?;
        x.extend(std::iter::repeat_n(r_in, spec.points));
    }
    let y = soh_from_capacity(cycle.discharge_capacity, c_fresh)?;
    if !(y > 0.0 && y <= 1.05) {
        return Err(Error::Domain(format!(
            "cell {} cycle {}: SOH label {y} outside (0, 1.05]",
            cycle.cell_id, cycle.cycle
        )));
    }
    Ok(SampleMatrix {
        x,
        channels: spec.channels,
        points: spec.points,
        y,
        cell_id: cycle.cell_id,
        cycle: cycle.cycle,
    })
}

/// A cycle that could not be turned into a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub cell: u32,
    pub cycle: u32,
    pub reason: String,
}

/// Samples for every cycle of a cell, carrying the latest pulse result
/// forward. Coverage failures are reported, not fatal.
pub fn build_cell_samples(cell: &CellData, spec: &WindowSpec) -> Result<(Vec<SampleMatrix>, Vec<Skipped>)> {
    let mut last_pulse: Option<HppcResult> = None;
    let mut samples = Vec::with_capacity(cell.cycles.len());
    let mut skipped = Vec::new();
    for rec in &cell.cycles {
        if rec.hppc.is_some() {
            last_pulse = rec.hppc;
        }
        match build_sample(rec, spec, cell.condition.c_fresh, last_pulse.as_ref()) {
            Ok(s) => samples.push(s),
            Err(e @ (Error::Coverage(_) | Error::Domain(_))) => skipped.push(Skipped {
                cell: rec.cell_id,
                cycle: rec.cycle,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((samples, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::{simulate_cycle, CellCondition, NoiseLevels};

    fn cycle(k: u32, noise: bool) -> (CellCondition, CycleRecord) {
        let mut c = CellCondition::with_rates(1, 1.0, 1.0);
        if !noise {
            c.noise = NoiseLevels::off();
        }
        let mut rec = simulate_cycle(&c, k, 1.0, 5).unwrap();
        rec.hppc = Some(HppcResult {
            delta_v: 0.1,
            delta_i: 4.0,
        });
        (c, rec)
    }

    #[test]
    fn raw_shape_and_order() {
        let (c, rec) = cycle(100, true);
        let s = build_sample(&rec, &WindowSpec::default(), c.c_fresh, None).unwrap();
        assert_eq!(s.x.len(), 3 * 100);
        assert_eq!(s.n_channels(), 3);
        // voltage row spans the window
        let v = s.channel(1);
        assert!((v[0] - 3.4).abs() < 0.02 && (v[99] - 4.0).abs() < 0.02);
        // current row sits at the CC current
        assert!(s.channel(0).iter().all(|i| (i - 4.8).abs() < 0.1));
    }

    #[test]
    fn supplementary_shape_and_constant_resistance_row() {
        let (c, rec) = cycle(100, true);
        let spec = WindowSpec {
            channels: ChannelSet::Supplementary,
            ..WindowSpec::default()
        };
        let s = build_sample(&rec, &spec, c.c_fresh, rec.hppc.as_ref()).unwrap();
        assert_eq!(s.x.len(), 5 * 100);
        assert!(s.channel(4).iter().all(|&r| r == 0.025));
        let cap = s.channel(3);
        assert!((cap[0] - c.c_fresh).abs() < 1e-12);
        assert!(cap.windows(2).all(|w| w[1] < w[0]));
        assert!(matches!(build_sample(&rec, &spec, c.c_fresh, None), Err(Error::Coverage(_))));
    }

    #[test]
    fn fresh_cell_label_is_one() {
        let (c, rec) = cycle(0, false);
        let s = build_sample(&rec, &WindowSpec::default(), c.c_fresh, None).unwrap();
        assert!((s.y - 1.0).abs() < 0.005);
    }

    #[test]
    fn window_outside_cc_is_skipped() {
        let (c, rec) = cycle(0, false);
        let cell = CellData {
            condition: c,
            cycles: vec![rec],
        };
        let spec = WindowSpec {
            v_high: 4.5,
            ..WindowSpec::default()
        };
        let (samples, skipped) = build_cell_samples(&cell, &spec).unwrap();
        assert!(samples.is_empty());
        assert_eq!(skipped.len(), 1);
    }
}
