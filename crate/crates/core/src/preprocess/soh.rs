use crate::error::{Error, Result};

/// Capacity-based SOH as a fraction.
pub fn soh_from_capacity(c_aged: f64, c_fresh: f64) -> Result<f64> {
    if !(c_fresh > 0.0) {
        return Err(Error::Domain(format!("fresh capacity must be positive, got {c_fresh}")));
    }
    Ok(c_aged / c_fresh)
}

/// Impedance-based SOH as a fraction.
pub fn soh_from_resistance(r_aged: f64, r_fresh: f64, r_eol: f64) -> Result<f64> {
    if !(r_eol > r_fresh) {
        return Err(Error::Domain(format!(
            "end-of-life resistance {r_eol} must exceed fresh resistance {r_fresh}"
        )));
    }
    Ok((r_eol - r_aged) / (r_eol - r_fresh))
}

/// Pulse resistance `ΔV/ΔI`.
pub fn internal_resistance(delta_v: f64, delta_i: f64) -> Result<f64> {
    if delta_i == 0.0 {
        return Err(Error::Domain("current pulse of zero amplitude".into()));
    }
    Ok(delta_v / delta_i)
}
