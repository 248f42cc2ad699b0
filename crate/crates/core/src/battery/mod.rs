//! Synthetic CC-CV aging data: a single-resistance equivalent circuit over a
//! polynomial open-circuit-voltage curve, with closed-form capacity fade and
//! resistance growth.

mod fleet;
mod io;
mod ocv;
mod sim;

pub use fleet::{generate_fleet, CellData, FleetConfig, FleetDataset};
pub use io::{load_fleet, write_fleet, FleetManifest, FLEET_FORMAT_VERSION};
pub use ocv::{ocv, ocv_inverse, OCV_COEFFS, OCV_MAX, OCV_MIN};
pub use sim::{aged_state, hppc_pulse, simulate_cycle, HppcResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian sensor noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub voltage_v: f64,
    pub current_a: f64,
    pub temp_c: f64,
}

impl NoiseLevels {
    pub const fn off() -> Self {
        Self {
            voltage_v: 0.0,
            current_a: 0.0,
            temp_c: 0.0,
        }
    }

    pub fn is_off(&self) -> bool {
        self.voltage_v == 0.0 && self.current_a == 0.0 && self.temp_c == 0.0
    }
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            voltage_v: 0.002,
            current_a: 0.010,
            temp_c: 0.1,
        }
    }
}

/// Lumped first-order thermal model: `dθ/dt = (P·r_th − θ)/tau`, θ = T − T_ambient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    /// K/W
    pub r_th: f64,
    /// s
    pub tau_s: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            r_th: 8.0,
            tau_s: 900.0,
        }
    }
}

/// One working condition of the aging experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCondition {
    pub cell_id: u32,
    /// CC charge C-rate, relative to `c_fresh`.
    pub charge_c_rate: f64,
    /// CC discharge C-rate.
    pub discharge_c_rate: f64,
    pub ambient_c: f64,
    pub v_max: f64,
    pub v_min: f64,
    /// CV termination current, A.
    pub i_min: f64,
    /// Ah
    pub c_fresh: f64,
    /// Ω
    pub r_fresh: f64,
    /// Capacity fade `1 − alpha·k^beta`.
    pub fade_alpha: f64,
    pub fade_beta: f64,
    /// Resistance growth `1 + gamma·k^delta`.
    pub res_gamma: f64,
    pub res_delta: f64,
    pub noise: NoiseLevels,
    pub thermal: ThermalParams,
    /// Seed of this cell's sensor-noise and pulse streams.
    pub seed: u64,
}

/// Fade coefficient per unit of summed C-rate.
pub const DEFAULT_ALPHA_PER_C: f64 = 4.7e-4;
pub const DEFAULT_BETA: f64 = 0.85;
pub const DEFAULT_GAMMA_PER_C: f64 = 1.0e-3;
pub const DEFAULT_DELTA: f64 = 0.9;
/// SOH floor of the fade law.
pub const SOH_FLOOR: f64 = 0.15;

impl CellCondition {
    /// Condition with the default chemistry; fade and resistance growth scale
    /// with `charge_c_rate + discharge_c_rate`.
    pub fn with_rates(cell_id: u32, charge_c_rate: f64, discharge_c_rate: f64) -> Self {
        let stress = charge_c_rate + discharge_c_rate;
        Self {
            cell_id,
            charge_c_rate,
            discharge_c_rate,
            ambient_c: 25.0,
            v_max: 4.2,
            v_min: 2.0,
            i_min: 0.24,
            c_fresh: 4.8,
            r_fresh: 0.025,
            fade_alpha: DEFAULT_ALPHA_PER_C * stress,
            fade_beta: DEFAULT_BETA,
            res_gamma: DEFAULT_GAMMA_PER_C * stress,
            res_delta: DEFAULT_DELTA,
            noise: NoiseLevels::default(),
            thermal: ThermalParams::default(),
            seed: 0,
        }
    }

    pub fn charge_current(&self) -> f64 {
        self.charge_c_rate * self.c_fresh
    }

    pub fn discharge_current(&self) -> f64 {
        self.discharge_c_rate * self.c_fresh
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("cell {}: {m}", self.cell_id)));
        if !(self.v_min < self.v_max) {
            return bad("v_min must be below v_max");
        }
        if !(self.charge_c_rate > 0.0 && self.discharge_c_rate > 0.0) {
            return bad("C-rates must be positive");
        }
        if !(self.c_fresh > 0.0) {
            return bad("c_fresh must be positive");
        }
        if !(self.r_fresh >= 0.0) {
            return bad("r_fresh must be nonnegative");
        }
        if !(self.fade_alpha >= 0.0 && self.res_gamma >= 0.0) {
            return bad("alpha and gamma must be nonnegative");
        }
        if !(self.fade_beta > 0.0 && self.res_delta > 0.0) {
            return bad("beta and delta must be positive");
        }
        if !(self.i_min > 0.0 && self.i_min < self.charge_current()) {
            return bad("i_min must lie in (0, charge current)");
        }
        if !(self.thermal.tau_s > 0.0) {
            return bad("thermal time constant must be positive");
        }
        Ok(())
    }
}

/// Sampled series of one protocol step. Current is positive while charging.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepSeries {
    pub time_s: Vec<f64>,
    pub current_a: Vec<f64>,
    pub voltage_v: Vec<f64>,
    pub temp_c: Vec<f64>,
}

impl StepSeries {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub(crate) fn push(&mut self, t: f64, i: f64, v: f64, temp: f64) {
        self.time_s.push(t);
        self.current_a.push(i);
        self.voltage_v.push(v);
        self.temp_c.push(temp);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    Cc,
    Cv,
    Rest,
    Dis,
}

impl Step {
    pub const ALL: [Step; 4] = [Step::Cc, Step::Cv, Step::Rest, Step::Dis];

    pub fn tag(self) -> &'static str {
        match self {
            Step::Cc => "cc",
            Step::Cv => "cv",
            Step::Rest => "rest",
            Step::Dis => "dis",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.tag() == s)
    }
}

/// One full charge/rest/discharge cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cell_id: u32,
    /// Full-equivalent-cycle index.
    pub cycle: u32,
    pub cc: StepSeries,
    pub cv: StepSeries,
    pub rest: StepSeries,
    pub discharge: StepSeries,
    /// Coulomb count of the discharge step, Ah.
    pub discharge_capacity: f64,
    pub hppc: Option<HppcResult>,
}

impl CycleRecord {
    pub fn step(&self, s: Step) -> &StepSeries {
        match s {
            Step::Cc => &self.cc,
            Step::Cv => &self.cv,
            Step::Rest => &self.rest,
            Step::Dis => &self.discharge,
        }
    }

    pub(crate) fn step_mut(&mut self, s: Step) -> &mut StepSeries {
        match s {
            Step::Cc => &mut self.cc,
            Step::Cv => &mut self.cv,
            Step::Rest => &mut self.rest,
            Step::Dis => &mut self.discharge,
        }
    }
}
