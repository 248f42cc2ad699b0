use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::sim::{aged_state, hppc_pulse, simulate_cycle};
use super::{CellCondition, CycleRecord, NoiseLevels};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Charge C-rates of the default fleet, crossed with [`DEFAULT_DISCHARGE_RATES`].
pub const DEFAULT_CHARGE_RATES: [f64; 3] = [0.5, 0.75, 1.0];
pub const DEFAULT_DISCHARGE_RATES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub conditions: Vec<CellCondition>,
    /// Last full-equivalent-cycle index simulated.
    pub max_cycles: u32,
    /// Spacing of recorded cycles.
    pub cycle_stride: u32,
    /// Cycles between capacity tests (HPPC attached there).
    pub capacity_test_interval: u32,
    pub soh_floor: f64,
    /// Sampling step, s.
    pub dt: f64,
    /// HPPC pulse amplitude as a C-rate.
    pub hppc_c_rate: f64,
    pub hppc_pulse_s: f64,
}

impl Default for FleetConfig {
    /// Twelve working conditions sharing ambient temperature and voltage
    /// limits, differing only in charge/discharge rate.
    fn default() -> Self {
        let mut conditions = Vec::with_capacity(12);
        for &ic in &DEFAULT_CHARGE_RATES {
            for &id in &DEFAULT_DISCHARGE_RATES {
                let cell_id = conditions.len() as u32 + 1;
                conditions.push(CellCondition::with_rates(cell_id, ic, id));
            }
        }
        Self {
            conditions,
            max_cycles: 1000,
            cycle_stride: 25,
            capacity_test_interval: 50,
            soh_floor: super::SOH_FLOOR,
            dt: 1.0,
            hppc_c_rate: 1.0,
            hppc_pulse_s: 10.0,
        }
    }
}

impl FleetConfig {
    /// Keeps only the first `n` conditions.
    pub fn with_cells(mut self, n: usize) -> Self {
        self.conditions.truncate(n);
        self
    }

    pub fn with_noise(mut self, noise: NoiseLevels) -> Self {
        for c in &mut self.conditions {
            c.noise = noise;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .conditions
            .first()
            .ok_or_else(|| Error::Config("fleet has no conditions".into()))?;
        let mut rates = HashSet::new();
        let mut ids = HashSet::new();
        for c in &self.conditions {
            c.validate()?;
            if c.ambient_c != first.ambient_c || c.v_max != first.v_max || c.v_min != first.v_min {
                return Err(Error::Config(format!(
                    "cell {} does not share ambient temperature and voltage limits",
                    c.cell_id
                )));
            }
            if !rates.insert((c.charge_c_rate.to_bits(), c.discharge_c_rate.to_bits())) {
                return Err(Error::Config(format!("cell {} repeats a (I_c, I_d) pair", c.cell_id)));
            }
            if !ids.insert(c.cell_id) {
                return Err(Error::Config(format!("duplicate cell id {}", c.cell_id)));
            }
        }
        if self.cycle_stride == 0 || self.capacity_test_interval == 0 {
            return Err(Error::Config("cycle stride and test interval must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        Ok(())
    }

    /// Recorded cycle indices for one condition: every `cycle_stride` up to
    /// `max_cycles`, stopping once the fade curve reaches the SOH floor.
    pub fn cycle_schedule(&self, cond: &CellCondition) -> Vec<u32> {
        (0..=self.max_cycles)
            .step_by(self.cycle_stride as usize)
            .take_while(|&k| aged_state(cond, k).0 / cond.c_fresh > self.soh_floor)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellData {
    pub condition: CellCondition,
    pub cycles: Vec<CycleRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetDataset {
    pub config: FleetConfig,
    pub seed: u64,
    pub cells: Vec<CellData>,
}

impl FleetDataset {
    pub fn capacity_test_interval(&self) -> u32 {
        self.config.capacity_test_interval
    }

    pub fn cell(&self, cell_id: u32) -> Option<&CellData> {
        self.cells.iter().find(|c| c.condition.cell_id == cell_id)
    }
}

/// Simulates every condition of `config`. Each cell's streams derive from
/// `(seed, cell_id)` only, so per-cell output does not depend on order.
pub fn generate_fleet(config: &FleetConfig, seed: u64) -> Result<FleetDataset> {
    config.validate()?;
    let cells = config
        .conditions
        .iter()
        .map(|cond| generate_cell(config, cond, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(FleetDataset {
        config: config.clone(),
        seed,
        cells,
    })
}

pub(crate) fn generate_cell(config: &FleetConfig, cond: &CellCondition, seed: u64) -> Result<CellData> {
    let mut cond = cond.clone();
    cond.seed = derive_seed(seed, cond.cell_id as u64);
    let mut cycles = Vec::new();
    for k in config.cycle_schedule(&cond) {
        let mut rec = simulate_cycle(&cond, k, config.dt, cond.seed)?;
        if k % config.capacity_test_interval == 0 {
            let pulse = config.hppc_c_rate * cond.c_fresh;
            rec.hppc = Some(hppc_pulse(&cond, k, pulse, config.hppc_pulse_s, cond.seed)?);
        }
        cycles.push(rec);
    }
    Ok(CellData { condition: cond, cycles })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FleetConfig {
        let mut c = FleetConfig::default().with_noise(NoiseLevels::off());
        c.max_cycles = 200;
        c.cycle_stride = 50;
        c
    }

    #[test]
    fn default_has_twelve_valid_conditions() {
        let c = FleetConfig::default();
        assert_eq!(c.conditions.len(), 12);
        c.validate().unwrap();
    }

    #[test]
    fn no_fade_means_unit_soh() {
        let mut cfg = small().with_cells(3);
        for c in &mut cfg.conditions {
            c.fade_alpha = 0.0;
        }
        let fleet = generate_fleet(&cfg, 1).unwrap();
        for cell in &fleet.cells {
            for rec in &cell.cycles {
                let soh = rec.discharge_capacity / cell.condition.c_fresh;
                assert!((soh - 1.0).abs() < 1e-6, "{soh}");
            }
        }
    }

    #[test]
    fn capacity_non_increasing_without_noise() {
        let fleet = generate_fleet(&small(), 4).unwrap();
        assert_eq!(fleet.cells.len(), 12);
        for cell in &fleet.cells {
            let caps: Vec<f64> = cell.cycles.iter().map(|r| r.discharge_capacity).collect();
            assert!(caps.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            assert!(cell.cycles.iter().all(|r| r.hppc.is_some() == (r.cycle % 50 == 0)));
        }
    }

    #[test]
    fn harsher_conditions_fade_faster() {
        let c = FleetConfig::default();
        for a in &c.conditions {
            for b in &c.conditions {
                if a.charge_c_rate <= b.charge_c_rate && a.discharge_c_rate <= b.discharge_c_rate {
                    assert!(a.fade_alpha <= b.fade_alpha);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_condition_sets() {
        let mut c = small();
        c.conditions[1].v_max = 4.1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = small();
        c.conditions[1].charge_c_rate = c.conditions[0].charge_c_rate;
        c.conditions[1].discharge_c_rate = c.conditions[0].discharge_c_rate;
        assert!(c.validate().is_err());
        assert!(FleetConfig::default().with_cells(0).validate().is_err());
    }

    #[test]
    fn schedule_stops_at_floor() {
        let mut cfg = small();
        cfg.max_cycles = 100_000;
        cfg.cycle_stride = 1000;
        let cond = &cfg.conditions[11];
        let ks = cfg.cycle_schedule(cond);
        let last = *ks.last().unwrap();
        assert!(aged_state(cond, last).0 / cond.c_fresh > cfg.soh_floor);
        assert!(aged_state(cond, last + 1000).0 / cond.c_fresh <= cfg.soh_floor);
    }
}
