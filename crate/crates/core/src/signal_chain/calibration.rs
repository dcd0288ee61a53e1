//! Per-stage calibration against known reference resistors.
//!
//! Each TIA stage gets a series-resistance estimate, which is de-embedded
//! first, and a linear conductance correction `G_true = a * G + b` fitted by
//! least squares on the de-embedded readings.

use serde::{Deserialize, Serialize};

use super::{SignalChain, SignalError, STAGE_COUNT};
use rand::Rng;

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

/// Largest accepted relative misfit of any reference after calibration.
pub const MAX_FIT_RESIDUAL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub stage_id: u8,
    pub a: f64,
    /// Conductance offset in siemens.
    pub b: f64,
    pub r_series_est: f64,
}

impl CalibrationEntry {
    pub fn identity(stage_id: u8) -> Self {
        Self {
            stage_id,
            a: 1.0,
            b: 0.0,
            r_series_est: 0.0,
        }
    }

    /// Corrected conductance for a raw reading, `None` when the correction
    /// leaves no physical (positive) value.
    pub fn correct(&self, g_raw: f64) -> Option<f64> {
        if !(g_raw > 0.0) {
            return None;
        }
        let r = 1.0 / g_raw - self.r_series_est;
        if !(r > 0.0) {
            return None;
        }
        let g = self.a / r + self.b;
        (g > 0.0 && g.is_finite()).then_some(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub schema_version: u32,
    pub seed: u64,
    pub calibration_timestamp: u64,
    pub stages: Vec<CalibrationEntry>,
}

impl CalibrationTable {
    pub fn identity() -> Self {
        Self {
            schema_version: CALIBRATION_SCHEMA_VERSION,
            seed: 0,
            calibration_timestamp: 0,
            stages: (0..STAGE_COUNT as u8)
                .map(CalibrationEntry::identity)
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.schema_version != CALIBRATION_SCHEMA_VERSION {
            return Err(SignalError::Calibration(format!(
                "unsupported calibration schema_version {}",
                self.schema_version
            )));
        }
        for stage in 0..STAGE_COUNT as u8 {
            let entry = self
                .entry(stage)
                .ok_or_else(|| SignalError::Calibration(format!("stage {stage} not calibrated")))?;
            if !(entry.a > 0.5 && entry.a < 2.0) {
                return Err(SignalError::Calibration(format!(
                    "stage {stage} gain {} outside (0.5, 2.0)",
                    entry.a
                )));
            }
            if !entry.b.is_finite() || !entry.r_series_est.is_finite() {
                return Err(SignalError::Calibration(format!(
                    "stage {stage} has non-finite terms"
                )));
            }
        }
        Ok(())
    }

    pub fn entry(&self, stage: u8) -> Option<&CalibrationEntry> {
        self.stages.iter().find(|e| e.stage_id == stage)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SignalError> {
        let table: Self = serde_json::from_str(s)
            .map_err(|e| SignalError::Calibration(format!("bad calibration file: {e}")))?;
        table.validate()?;
        Ok(table)
    }
}

/// Reference resistor sets per stage, lowest gain first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub references_ohm: Vec<Vec<f64>>,
    pub samples: usize,
    pub repeats: usize,
    /// Target fraction of ADC full scale when choosing the calibration voltage.
    pub target_fraction: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            references_ohm: vec![
                vec![470.0, 1_200.0, 2_200.0],
                vec![4_700.0, 12_000.0, 22_000.0],
                vec![47_000.0, 120_000.0, 220_000.0],
                vec![470_000.0, 1_200_000.0, 2_200_000.0],
            ],
            samples: 50,
            repeats: 20,
            target_fraction: 0.5,
        }
    }
}

/// Least-squares line through `(x, y)` pairs, `None` if `x` has no spread.
fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let a = sxy / sxx;
    Some((a, my - a * mx))
}

impl SignalChain {
    /// Calibrates one stage. Each reference is read through the routed path
    /// at a voltage that puts it near `target_fraction` of full scale.
    pub fn calibrate_stage<R: Rng + ?Sized>(
        &self,
        stage: u8,
        references_ohm: &[f64],
        settings: &CalibrationSettings,
        rng: &mut R,
    ) -> Result<CalibrationEntry, SignalError> {
        let stage_cfg = self.stage(stage)?;
        let mut distinct: Vec<f64> = references_ohm.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(SignalError::Calibration(format!(
                "stage {stage}: need at least two distinct references, got {}",
                distinct.len()
            )));
        }
        if references_ohm.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(SignalError::Calibration(
                "reference values must be positive".into(),
            ));
        }
        let samples = (settings.samples * settings.repeats).max(1);
        let full_current = self.adc_full_scale_v() / stage_cfg.r_feedback_ohm;
        let v_max = self.dac_max_voltage();

        let mut readings = Vec::with_capacity(references_ohm.len());
        for &r_ref in references_ohm {
            let v_target = (settings.target_fraction * full_current * r_ref).min(v_max);
            let dac = self.dac_auto(v_target)?;
            let i_true = self.reference_current(r_ref, dac.v_actual);
            let reading = self.read_current_at(i_true, stage, samples, rng);
            let frac = reading.mean_code / self.adc_max_code() as f64;
            let (lo, hi) = self.autorange_window();
            if !(frac >= lo && frac <= hi) {
                return Err(SignalError::Calibration(format!(
                    "stage {stage}: reference {r_ref} ohm reads at {:.1}% of full scale, outside the usable window",
                    frac * 100.0
                )));
            }
            readings.push((r_ref, reading.current_a / dac.v_actual));
        }

        let r_series_est = readings
            .iter()
            .map(|&(r_ref, g_raw)| 1.0 / g_raw - r_ref)
            .sum::<f64>()
            / readings.len() as f64;
        let mut points = Vec::with_capacity(readings.len());
        for &(r_ref, g_raw) in &readings {
            let r = 1.0 / g_raw - r_series_est;
            if !(r > 0.0) {
                return Err(SignalError::Calibration(format!(
                    "stage {stage}: series estimate {r_series_est} ohm exceeds reading of {r_ref} ohm"
                )));
            }
            points.push((1.0 / r, 1.0 / r_ref));
        }
        let (a, b) = fit_line(&points).ok_or_else(|| {
            SignalError::Calibration(format!("stage {stage}: references are indistinguishable"))
        })?;
        let entry = CalibrationEntry {
            stage_id: stage,
            a,
            b,
            r_series_est,
        };
        if !(a > 0.5 && a < 2.0) {
            return Err(SignalError::Calibration(format!(
                "stage {stage}: fitted gain {a} outside (0.5, 2.0)"
            )));
        }
        for &(r_ref, g_raw) in &readings {
            let fitted = entry.correct(g_raw).map(|g| 1.0 / g).ok_or_else(|| {
                SignalError::Calibration(format!("stage {stage}: fit is not physical"))
            })?;
            let rel = (fitted - r_ref).abs() / r_ref;
            if rel > MAX_FIT_RESIDUAL {
                return Err(SignalError::Calibration(format!(
                    "stage {stage}: residual {:.2}% at {r_ref} ohm exceeds {:.0}%",
                    rel * 100.0,
                    MAX_FIT_RESIDUAL * 100.0
                )));
            }
        }
        Ok(entry)
    }

    pub fn calibrate<R: Rng + ?Sized>(
        &self,
        settings: &CalibrationSettings,
        seed: u64,
        timestamp: u64,
        rng: &mut R,
    ) -> Result<CalibrationTable, SignalError> {
        if settings.references_ohm.len() != STAGE_COUNT {
            return Err(SignalError::Calibration(format!(
                "need reference sets for {STAGE_COUNT} stages, got {}",
                settings.references_ohm.len()
            )));
        }
        let stages = settings
            .references_ohm
            .iter()
            .enumerate()
            .map(|(s, refs)| self.calibrate_stage(s as u8, refs, settings, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CalibrationTable {
            schema_version: CALIBRATION_SCHEMA_VERSION,
            seed,
            calibration_timestamp: timestamp,
            stages,
        })
    }
}
