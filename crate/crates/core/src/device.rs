//! Voltage-threshold memristor model.
//!
//! The internal state `x` runs from 0 (high-resistive state) to 1
//! (low-resistive state). Conductance interpolates linearly between the two
//! bounds. A pulse above the SET threshold moves `x` up, a pulse below the
//! RESET threshold moves it down, anything in between leaves the cell alone.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of resampling attempts before device-to-device sampling gives up.
pub const MAX_SAMPLE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("invalid device parameters: {0}")]
    InvalidParams(String),
    #[error("device sampling produced no valid cell after {0} attempts")]
    SamplingExhausted(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub r_lrs_ohm: f64,
    pub r_hrs_ohm: f64,
    pub v_set: f64,
    pub v_reset: f64,
    pub k_set: f64,
    pub k_reset: f64,
    pub alpha: f64,
    /// Lognormal sigma of the cycle-to-cycle update multiplier.
    pub sigma_c2c: f64,
    /// Relative sigma of the device-to-device threshold and bound spread.
    pub sigma_d2d: f64,
    /// Relative sigma of the multiplicative conductance read noise.
    pub sigma_read: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            r_lrs_ohm: 10_000.0,
            r_hrs_ohm: 100_000.0,
            v_set: 0.9,
            v_reset: -0.9,
            k_set: 1e6,
            k_reset: 1e6,
            alpha: 2.0,
            sigma_c2c: 0.05,
            sigma_d2d: 0.03,
            sigma_read: 0.002,
        }
    }
}

impl DeviceParams {
    /// Asymmetric-threshold device suited to row-wise stateful NOR.
    ///
    /// With symmetric thresholds an input cell that must stay in HRS sees a
    /// larger share of the gate voltage than the output cell that must RESET,
    /// so no gate voltage works. A small RESET threshold and a large SET
    /// threshold open the window.
    pub fn magic_logic() -> Self {
        Self {
            v_set: 1.5,
            v_reset: -0.5,
            ..Self::default()
        }
    }

    /// Same parameters with every stochastic term switched off.
    pub fn noiseless(self) -> Self {
        Self {
            sigma_c2c: 0.0,
            sigma_d2d: 0.0,
            sigma_read: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let finite = [
            self.r_lrs_ohm,
            self.r_hrs_ohm,
            self.v_set,
            self.v_reset,
            self.k_set,
            self.k_reset,
            self.alpha,
            self.sigma_c2c,
            self.sigma_d2d,
            self.sigma_read,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(DeviceError::InvalidParams("non-finite value".into()));
        }
        if !(self.r_lrs_ohm > 0.0 && self.r_lrs_ohm < self.r_hrs_ohm) {
            return Err(DeviceError::InvalidParams(format!(
                "need 0 < r_lrs ({}) < r_hrs ({})",
                self.r_lrs_ohm, self.r_hrs_ohm
            )));
        }
        if !(self.v_reset < 0.0 && self.v_set > 0.0) {
            return Err(DeviceError::InvalidParams(format!(
                "need v_reset ({}) < 0 < v_set ({})",
                self.v_reset, self.v_set
            )));
        }
        if self.sigma_c2c < 0.0 || self.sigma_d2d < 0.0 || self.sigma_read < 0.0 {
            return Err(DeviceError::InvalidParams("negative sigma".into()));
        }
        if self.alpha <= 0.0 {
            return Err(DeviceError::InvalidParams("alpha must be > 0".into()));
        }
        if self.k_set < 0.0 || self.k_reset < 0.0 {
            return Err(DeviceError::InvalidParams(
                "negative rate coefficient".into(),
            ));
        }
        Ok(())
    }

    pub fn g_lrs(&self) -> f64 {
        1.0 / self.r_lrs_ohm
    }

    pub fn g_hrs(&self) -> f64 {
        1.0 / self.r_hrs_ohm
    }

    /// State change for a pulse with the cycle-to-cycle multiplier fixed at 1.
    pub fn nominal_delta(&self, v: f64, width: f64) -> f64 {
        if v > self.v_set {
            self.k_set * (v - self.v_set).powf(self.alpha) * width
        } else if v < self.v_reset {
            -self.k_reset * (v.abs() - self.v_reset.abs()).powf(self.alpha) * width
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemristorCell {
    x: f64,
    params: DeviceParams,
}

impl MemristorCell {
    /// Fresh cell in HRS with exactly the given parameters.
    pub fn new(params: DeviceParams) -> Self {
        Self { x: 0.0, params }
    }

    pub fn with_state(params: DeviceParams, x: f64) -> Self {
        Self {
            x: x.clamp(0.0, 1.0),
            params,
        }
    }

    pub fn state(&self) -> f64 {
        self.x
    }

    pub fn set_state(&mut self, x: f64) {
        self.x = x.clamp(0.0, 1.0);
    }

    pub fn params(&self) -> &DeviceParams {
        &self.params
    }

    pub fn conductance(&self) -> f64 {
        let p = &self.params;
        p.g_hrs() + self.x * (p.g_lrs() - p.g_hrs())
    }

    pub fn resistance(&self) -> f64 {
        1.0 / self.conductance()
    }

    /// Conductance seen by one read, with multiplicative Gaussian noise.
    pub fn read_conductance<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = self.conductance();
        if self.params.sigma_read > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            (g * (1.0 + self.params.sigma_read * z)).max(0.0)
        } else {
            g
        }
    }

    /// Applies one rectangular pulse of `v` volts across the device.
    ///
    /// Sub-threshold pulses and non-positive widths leave the state unchanged
    /// and consume no randomness.
    pub fn apply_pulse<R: Rng + ?Sized>(&mut self, v: f64, width: f64, rng: &mut R) -> f64 {
        if !(width > 0.0) {
            return 0.0;
        }
        let nominal = self.params.nominal_delta(v, width);
        if nominal == 0.0 {
            return 0.0;
        }
        let m = if self.params.sigma_c2c > 0.0 {
            LogNormal::new(0.0, self.params.sigma_c2c)
                .expect("sigma validated")
                .sample(rng)
        } else {
            1.0
        };
        let before = self.x;
        self.x = (self.x + nominal * m).clamp(0.0, 1.0);
        self.x - before
    }
}

/// Draws one device with device-to-device spread applied to its thresholds
/// and resistance bounds. The returned cell starts in HRS.
pub fn sample_device<R: Rng + ?Sized>(
    params: &DeviceParams,
    rng: &mut R,
) -> Result<MemristorCell, DeviceError> {
    params.validate()?;
    let sigma = params.sigma_d2d;
    if sigma == 0.0 {
        return Ok(MemristorCell::new(*params));
    }
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let mut factor = || {
            let z: f64 = StandardNormal.sample(rng);
            1.0 + sigma * z
        };
        let candidate = DeviceParams {
            v_set: params.v_set * factor(),
            v_reset: params.v_reset * factor(),
            r_lrs_ohm: params.r_lrs_ohm * factor(),
            r_hrs_ohm: params.r_hrs_ohm * factor(),
            ..*params
        };
        if candidate.validate().is_ok() {
            return Ok(MemristorCell::new(candidate));
        }
    }
    Err(DeviceError::SamplingExhausted(MAX_SAMPLE_ATTEMPTS))
}
