use crate::error::{Error, Result};

/// Open-circuit voltage polynomial in SOC, ascending powers. Strictly
/// increasing on [0, 1] with ocv(0) = 3.0 V and ocv(1) = 4.2 V.
pub const OCV_COEFFS: [f64; 6] = [3.0, 3.2, -7.5, 10.2, -7.0, 2.3];
pub const OCV_MIN: f64 = 3.0;
pub const OCV_MAX: f64 = 4.2;

pub fn ocv(soc: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::Domain(format!("soc {soc} outside [0, 1]")));
    }
    Ok(ocv_unchecked(soc))
}

pub(crate) fn ocv_unchecked(soc: f64) -> f64 {
    OCV_COEFFS.iter().rev().fold(0.0, |acc, c| acc * soc + c)
}

/// SOC at which the OCV equals `v`, clamped to [0, 1] outside the curve's range.
pub fn ocv_inverse(v: f64) -> f64 {
    if v <= OCV_MIN {
        return 0.0;
    }
    if v >= OCV_MAX {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ocv_unchecked(mid) < v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
