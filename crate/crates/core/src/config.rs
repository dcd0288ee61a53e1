//! Board configuration file.

use serde::{Deserialize, Serialize};

use crate::crossbar::Topology;
use crate::device::DeviceParams;
use crate::signal_chain::{CalibrationSettings, SignalChainConfig};
use crate::ControllerError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub topology: Topology,
    pub r_wire_segment: f64,
    pub r_transistor_on: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        // One of the two 512x32 1T1R blocks of the characterized chip.
        Self {
            rows: 512,
            cols: 32,
            topology: Topology::Active1T1R,
            r_wire_segment: 1.0,
            r_transistor_on: 500.0,
        }
    }
}

/// Firmware-level pulse and read conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSettings {
    pub read_voltage: f64,
    pub read_samples: usize,
    pub pulse_width_s: f64,
    /// Write amplitude beyond the nominal SET threshold.
    pub set_overdrive_v: f64,
    /// Write amplitude beyond the nominal RESET threshold (magnitude).
    pub reset_overdrive_v: f64,
    /// Overdrive used when programming into an intermediate band.
    pub fine_overdrive_v: f64,
    pub max_pulses: usize,
    /// SET verifies against `r_lrs * (1 + lrs_tolerance)`.
    pub lrs_tolerance: f64,
    /// RESET verifies against `r_hrs * (1 - hrs_tolerance)`.
    pub hrs_tolerance: f64,
    pub logic_step_width_s: f64,
    pub logic_steps: usize,
    /// Relative guard band applied to thresholds when choosing the NOR voltage.
    pub logic_margin: f64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            read_voltage: 0.2,
            read_samples: 50,
            pulse_width_s: 1e-6,
            set_overdrive_v: 0.5,
            reset_overdrive_v: 0.5,
            fine_overdrive_v: 0.15,
            max_pulses: 20,
            lrs_tolerance: 0.10,
            hrs_tolerance: 0.10,
            logic_step_width_s: 1e-6,
            logic_steps: 100,
            logic_margin: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoardConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub device: DeviceParams,
    pub array: ArrayConfig,
    pub signal_chain: SignalChainConfig,
    pub controller: ControllerSettings,
    pub calibration: CalibrationSettings,
}

impl Default for BoardConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 1,
            device: DeviceParams::default(),
            array: ArrayConfig::default(),
            signal_chain: SignalChainConfig::default(),
            controller: ControllerSettings::default(),
            calibration: CalibrationSettings::default(),
        }
    }
}

impl BoardConfig {
    /// Zero noise everywhere: device variability, TIA and ADC noise.
    pub fn noiseless(mut self) -> Self {
        self.device = self.device.noiseless();
        self.signal_chain = self.signal_chain.noiseless();
        self
    }

    /// No wire, selector or routing resistance.
    pub fn without_parasitics(mut self) -> Self {
        self.array.r_wire_segment = 0.0;
        self.array.r_transistor_on = 0.0;
        self.signal_chain.routing.r_path_ohm = 0.0;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_shape(mut self, rows: usize, cols: usize, topology: Topology) -> Self {
        self.array.rows = rows;
        self.array.cols = cols;
        self.array.topology = topology;
        self
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ControllerError::Config(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        self.device.validate()?;
        self.signal_chain.validate()?;
        let c = &self.controller;
        if !(c.read_voltage > 0.0 && c.read_voltage < self.device.v_set) {
            return Err(ControllerError::Config(format!(
                "read voltage {} V must be positive and below the SET threshold",
                c.read_voltage
            )));
        }
        if c.read_samples == 0 || c.max_pulses == 0 {
            return Err(ControllerError::Config(
                "read_samples and max_pulses must be >= 1".into(),
            ));
        }
        if !(c.pulse_width_s > 0.0 && c.logic_step_width_s > 0.0) {
            return Err(ControllerError::Config("pulse widths must be > 0".into()));
        }
        if !(c.lrs_tolerance >= 0.0 && c.hrs_tolerance >= 0.0 && c.hrs_tolerance < 1.0) {
            return Err(ControllerError::Config(
                "verify tolerances out of range".into(),
            ));
        }
        if !(0.0..1.0).contains(&c.logic_margin) {
            return Err(ControllerError::Config(
                "logic_margin must be in [0, 1)".into(),
            ));
        }
        if self.array.rows == 0 || self.array.cols == 0 {
            return Err(ControllerError::Config(
                "array needs at least one row and column".into(),
            ));
        }
        if !(self.array.r_wire_segment >= 0.0 && self.array.r_transistor_on >= 0.0) {
            return Err(ControllerError::Config("negative array resistance".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, ControllerError> {
        let cfg: Self = serde_json::from_str(s)
            .map_err(|e| ControllerError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
