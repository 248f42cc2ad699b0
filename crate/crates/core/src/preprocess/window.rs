use crate::battery::CycleRecord;
use crate::error::{Error, Result};

/// Times at which the CC-step voltage first crosses `v_low` and `v_high`,
/// linearly interpolated between samples.
pub fn extract_voltage_window(cycle: &CycleRecord, v_low: f64, v_high: f64) -> Result<(f64, f64)> {
    voltage_window(&cycle.cc.time_s, &cycle.cc.voltage_v, v_low, v_high).map_err(|e| match e {
        Error::Coverage(m) => Error::Coverage(format!("cell {} cycle {}: {m}", cycle.cell_id, cycle.cycle)),
        other => other,
    })
}

pub fn voltage_window(times: &[f64], volts: &[f64], v_low: f64, v_high: f64) -> Result<(f64, f64)> {
    if !(v_low < v_high) {
        return Err(Error::Config(format!("window [{v_low}, {v_high}] is empty")));
    }
    let first = *volts
        .first()
        .ok_or_else(|| Error::Coverage("CC step has no samples".into()))?;
    if first > v_low {
        return Err(Error::Coverage(format!(
            "CC step starts at {first:.4} V, above the window floor {v_low} V"
        )));
    }
    let t_low = first_crossing(times, volts, v_low)
        .ok_or_else(|| Error::Coverage(format!("CC step never reaches {v_low} V")))?;
    let t_high = first_crossing(times, volts, v_high)
        .ok_or_else(|| Error::Coverage(format!("CC step never reaches {v_high} V")))?;
    Ok((t_low, t_high))
}

fn first_crossing(times: &[f64], volts: &[f64], level: f64) -> Option<f64> {
    let j = volts.iter().position(|&v| v >= level)?;
    if j == 0 {
        return Some(times[0]);
    }
    let (v0, v1) = (volts[j - 1], volts[j]);
    let (t0, t1) = (times[j - 1], times[j]);
    Some(t0 + (level - v0) / (v1 - v0) * (t1 - t0))
}

/// Values of the series at `points` equally spaced times from `t_low` to
/// `t_high` inclusive, by linear interpolation.
pub fn discretize(times: &[f64], values: &[f64], t_low: f64, t_high: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::Config(format!("need at least 2 discretization points, got {points}")));
    }
    if times.len() != values.len() || times.is_empty() {
        return Err(Error::Dimension("series time/value lengths differ or are empty".into()));
    }
    let (start, end) = (times[0], times[times.len() - 1]);
    if t_low < start || t_high > end || !(t_low <= t_high) {
        return Err(Error::Coverage(format!(
            "series spans [{start}, {end}] but [{t_low}, {t_high}] was requested"
        )));
    }
    let span = t_high - t_low;
    let out = (0..points)
        .map(|i| {
            let t = if i + 1 == points {
                t_high
            } else {
                t_low + span * i as f64 / (points - 1) as f64
            };
            interpolate(times, values, t)
        })
        .collect();
    Ok(out)
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let j = times.partition_point(|&x| x < t);
    if j == 0 {
        return values[0];
    }
    if j >= times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[j - 1], times[j]);
    if t1 == t0 {
        return values[j];
    }
    values[j - 1] + (t - t0) / (t1 - t0) * (values[j] - values[j - 1])
}

/// Remaining capacity `C_N − ∫ η·I dτ` (Ah) at every sample, trapezoidal rule.
pub fn coulomb_count(times: &[f64], current: &[f64], c_n: f64, eta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut q = 0.0;
    for j in 0..times.len() {
        if j > 0 {
            q += 0.5 * (current[j] + current[j - 1]) * (times[j] - times[j - 1]);
        }
        out.push(c_n - eta * q / 3600.0);
    }
    out
}
