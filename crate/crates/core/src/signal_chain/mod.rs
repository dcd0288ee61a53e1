//! Analog front-end: multi-range DAC, routed paths, four-stage TIA and ADC.

pub mod calibration;
pub mod routing;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibration::{CalibrationEntry, CalibrationSettings, CalibrationTable};
pub use routing::{LineSource, RoutingConfig, RoutingMatrix};

pub const STAGE_COUNT: usize = 4;

/// Converters wider than this do not fit the integer code type.
pub const MAX_RESOLUTION_BITS: u32 = 48;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("{v} V outside DAC range [{lo}, {hi}] V")]
    OutOfRange { v: f64, lo: f64, hi: f64 },
    #[error("range error: {0}")]
    Range(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("routing error: {0}")]
    Routing(String),
    #[error("invalid signal-chain configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DacRange {
    pub lo: f64,
    pub hi: f64,
}

impl DacRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

pub const STANDARD_DAC_RANGES: [DacRange; 5] = [
    DacRange::new(0.0, 5.0),
    DacRange::new(0.0, 10.0),
    DacRange::new(-2.5, 2.5),
    DacRange::new(-5.0, 5.0),
    DacRange::new(-10.0, 10.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DacConfig {
    pub resolution_bits: u32,
    pub ranges: Vec<DacRange>,
    /// Independent output channels; each one is a routable potential.
    pub channels: usize,
}

impl Default for DacConfig {
    fn default() -> Self {
        Self {
            resolution_bits: 12,
            ranges: STANDARD_DAC_RANGES.to_vec(),
            channels: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DacOutput {
    pub code: u64,
    pub v_actual: f64,
    pub range: DacRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiaStage {
    pub stage_id: u8,
    pub r_feedback_ohm: f64,
    pub v_out_max: f64,
    /// Input-referred current noise, A rms.
    pub input_noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiaConfig {
    pub stages: Vec<TiaStage>,
    pub channels: usize,
}

impl Default for TiaConfig {
    fn default() -> Self {
        let gains = [2.5e3, 2.5e4, 2.5e5, 2.5e6];
        Self {
            stages: gains
                .iter()
                .enumerate()
                .map(|(i, &r)| TiaStage {
                    stage_id: i as u8,
                    r_feedback_ohm: r,
                    v_out_max: 5.0,
                    input_noise_sigma: 5e-9,
                })
                .collect(),
            channels: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcConfig {
    pub resolution_bits: u32,
    pub v_range: (f64, f64),
    pub noise_sigma_v: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            resolution_bits: 14,
            v_range: (0.0, 5.0),
            noise_sigma_v: 3e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutorangeConfig {
    /// Accepted window of the averaged code, as fractions of full scale.
    pub window_low: f64,
    pub window_high: f64,
    /// Samples averaged per stage while searching.
    pub probe_samples: usize,
}

impl Default for AutorangeConfig {
    fn default() -> Self {
        Self {
            window_low: 0.05,
            window_high: 0.90,
            probe_samples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalChainConfig {
    pub dac: DacConfig,
    pub tia: TiaConfig,
    pub adc: AdcConfig,
    pub routing: RoutingConfig,
    pub autorange: AutorangeConfig,
}

impl SignalChainConfig {
    /// Same chain with TIA and ADC noise switched off.
    pub fn noiseless(mut self) -> Self {
        self.adc.noise_sigma_v = 0.0;
        for s in &mut self.tia.stages {
            s.input_noise_sigma = 0.0;
        }
        self
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: String| Err(SignalError::InvalidConfig(m));
        for (name, bits) in [
            ("dac", self.dac.resolution_bits),
            ("adc", self.adc.resolution_bits),
        ] {
            if bits == 0 || bits > MAX_RESOLUTION_BITS {
                return bad(format!(
                    "{name} resolution {bits} bits out of 1..={MAX_RESOLUTION_BITS}"
                ));
            }
        }
        if self.dac.ranges.is_empty() || self.dac.ranges.iter().any(|r| !(r.hi > r.lo)) {
            return bad("DAC needs at least one non-empty range".into());
        }
        if self.dac.channels < 1 {
            return bad("DAC needs at least one channel".into());
        }
        if self.tia.stages.len() != STAGE_COUNT {
            return bad(format!(
                "expected {STAGE_COUNT} TIA stages, got {}",
                self.tia.stages.len()
            ));
        }
        for (i, s) in self.tia.stages.iter().enumerate() {
            if s.stage_id as usize != i {
                return bad(format!("TIA stage {i} has stage_id {}", s.stage_id));
            }
            if !(s.r_feedback_ohm > 0.0 && s.v_out_max > 0.0 && s.input_noise_sigma >= 0.0) {
                return bad(format!("TIA stage {i} has non-physical values"));
            }
        }
        if self
            .tia
            .stages
            .windows(2)
            .any(|w| w[1].r_feedback_ohm <= w[0].r_feedback_ohm)
        {
            return bad("TIA gains must increase strictly with stage_id".into());
        }
        if self.tia.channels < 1 {
            return bad("need at least one TIA channel".into());
        }
        let (lo, hi) = self.adc.v_range;
        if !(hi > lo) || self.adc.noise_sigma_v < 0.0 {
            return bad("ADC range must be non-empty and noise non-negative".into());
        }
        let w = &self.autorange;
        if !(0.0 <= w.window_low && w.window_low < w.window_high && w.window_high <= 1.0) {
            return bad("autorange window must satisfy 0 <= low < high <= 1".into());
        }
        if w.probe_samples == 0 {
            return bad("autorange needs at least one probe sample".into());
        }
        if !(self.routing.r_path_ohm >= 0.0) || self.routing.total_lines == 0 {
            return bad("routing needs lines and a non-negative path resistance".into());
        }
        Ok(())
    }
}

/// Averaged reading of one current at one TIA stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentReading {
    pub stage: u8,
    pub codes: Vec<u64>,
    pub mean_code: f64,
    pub current_a: f64,
    pub saturated_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub index: u64,
    pub stage: u8,
    pub dac_code: u64,
    pub v_actual: f64,
    pub raw_codes: Vec<u64>,
    pub mean_code: f64,
    pub current_a: f64,
    pub resistance_ohm: f64,
    pub saturated_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalChain {
    config: SignalChainConfig,
}

impl SignalChain {
    pub fn new(config: SignalChainConfig) -> Result<Self, SignalError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SignalChainConfig {
        &self.config
    }

    pub fn stage(&self, stage: u8) -> Result<&TiaStage, SignalError> {
        self.config
            .tia
            .stages
            .get(stage as usize)
            .ok_or_else(|| SignalError::InvalidConfig(format!("no TIA stage {stage}")))
    }

    pub fn dac_max_code(&self) -> u64 {
        (1u64 << self.config.dac.resolution_bits) - 1
    }

    pub fn adc_max_code(&self) -> u64 {
        (1u64 << self.config.adc.resolution_bits) - 1
    }

    pub fn adc_full_scale_v(&self) -> f64 {
        let (lo, hi) = self.config.adc.v_range;
        hi - lo
    }

    pub fn adc_lsb_v(&self) -> f64 {
        self.adc_full_scale_v() / self.adc_max_code() as f64
    }

    pub fn dac_lsb_v(&self, range: &DacRange) -> f64 {
        range.span() / self.dac_max_code() as f64
    }

    pub fn dac_max_voltage(&self) -> f64 {
        self.config
            .dac
            .ranges
            .iter()
            .map(|r| r.hi)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn autorange_window(&self) -> (f64, f64) {
        (
            self.config.autorange.window_low,
            self.config.autorange.window_high,
        )
    }

    pub fn r_path_ohm(&self) -> f64 {
        self.config.routing.r_path_ohm
    }

    pub fn dac_quantize(&self, v_request: f64, range: DacRange) -> Result<DacOutput, SignalError> {
        if !range.contains(v_request) {
            return Err(SignalError::OutOfRange {
                v: v_request,
                lo: range.lo,
                hi: range.hi,
            });
        }
        let max = self.dac_max_code();
        let code = (((v_request - range.lo) / range.span()) * max as f64)
            .round()
            .clamp(0.0, max as f64) as u64;
        Ok(DacOutput {
            code,
            v_actual: range.lo + code as f64 / max as f64 * range.span(),
            range,
        })
    }

    /// Narrowest configured range holding `v`; ties go to the first listed.
    pub fn dac_range_for(&self, v: f64) -> Result<DacRange, SignalError> {
        let mut best: Option<DacRange> = None;
        for r in &self.config.dac.ranges {
            if r.contains(v) && best.is_none_or(|b| r.span() < b.span()) {
                best = Some(*r);
            }
        }
        best.ok_or_else(|| {
            let lo = self
                .config
                .dac
                .ranges
                .iter()
                .map(|r| r.lo)
                .fold(f64::INFINITY, f64::min);
            SignalError::OutOfRange {
                v,
                lo,
                hi: self.dac_max_voltage(),
            }
        })
    }

    pub fn dac_auto(&self, v: f64) -> Result<DacOutput, SignalError> {
        self.dac_quantize(v, self.dac_range_for(v)?)
    }

    /// One TIA + ADC conversion of input current `i_in`.
    pub fn tia_adc_read<R: Rng + ?Sized>(&self, i_in: f64, stage: u8, rng: &mut R) -> (u64, f64) {
        let s = &self.config.tia.stages[stage as usize];
        let n_i = if s.input_noise_sigma > 0.0 {
            s.input_noise_sigma * {
                let z: f64 = StandardNormal.sample(rng);
                z
            }
        } else {
            0.0
        };
        let v_out = ((i_in + n_i) * s.r_feedback_ohm).clamp(0.0, s.v_out_max);
        let adc = &self.config.adc;
        let n_v = if adc.noise_sigma_v > 0.0 {
            adc.noise_sigma_v * {
                let z: f64 = StandardNormal.sample(rng);
                z
            }
        } else {
            0.0
        };
        let max = self.adc_max_code() as f64;
        let code = ((v_out + n_v - adc.v_range.0) / self.adc_full_scale_v() * max)
            .round()
            .clamp(0.0, max) as u64;
        (code, adc.v_range.0 + code as f64 * self.adc_lsb_v())
    }

    pub fn code_to_current(&self, code: f64, stage: u8) -> f64 {
        let s = &self.config.tia.stages[stage as usize];
        (self.config.adc.v_range.0 + code * self.adc_lsb_v()) / s.r_feedback_ohm
    }

    /// Reads `i_in` on a fixed stage, averaging `n` conversions.
    pub fn read_current_at<R: Rng + ?Sized>(
        &self,
        i_in: f64,
        stage: u8,
        n: usize,
        rng: &mut R,
    ) -> CurrentReading {
        let n = n.max(1);
        let max = self.adc_max_code();
        let codes: Vec<u64> = (0..n)
            .map(|_| self.tia_adc_read(i_in, stage, rng).0)
            .collect();
        let mean_code = codes.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
        CurrentReading {
            stage,
            saturated_samples: codes.iter().filter(|&&c| c >= max).count(),
            current_a: self.code_to_current(mean_code, stage),
            mean_code,
            codes,
        }
    }

    /// Sweeps stages from lowest gain upward and returns the highest-gain
    /// stage whose averaged code falls inside the acceptance window.
    /// `probe` returns the averaged code for a stage.
    pub fn autorange(&self, mut probe: impl FnMut(u8) -> f64) -> Result<u8, SignalError> {
        let max = self.adc_max_code() as f64;
        let (lo, hi) = self.autorange_window();
        let mut chosen = None;
        let mut last_frac = 0.0;
        for stage in 0..STAGE_COUNT as u8 {
            let frac = probe(stage) / max;
            last_frac = frac;
            if frac > hi {
                break;
            }
            if frac >= lo {
                chosen = Some(stage);
            }
        }
        chosen.ok_or_else(|| {
            if last_frac > hi {
                SignalError::Range("signal saturates every TIA stage".into())
            } else {
                SignalError::Range(format!(
                    "signal below {:.0}% of full scale on every TIA stage",
                    lo * 100.0
                ))
            }
        })
    }

    /// Autoranges, then averages `n_samples` conversions on the chosen stage.
    pub fn measure_current<R: Rng + ?Sized>(
        &self,
        i_in: f64,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<CurrentReading, SignalError> {
        let probes = self.config.autorange.probe_samples;
        let stage = self.autorange(|s| self.read_current_at(i_in, s, probes, rng).mean_code)?;
        Ok(self.read_current_at(i_in, stage, n_samples, rng))
    }

    /// Current through a reference resistor reached over two routed paths.
    pub fn reference_current(&self, r_ohm: f64, v_actual: f64) -> f64 {
        v_actual / (r_ohm + 2.0 * self.config.routing.r_path_ohm)
    }

    /// Full resistance measurement. `dut` maps the applied DAC voltage to the
    /// DC current arriving at the TIA.
    pub fn measure_resistance<R: Rng + ?Sized>(
        &self,
        dut: impl FnOnce(f64) -> f64,
        v_read: f64,
        n_samples: usize,
        cal: &CalibrationTable,
        rng: &mut R,
    ) -> Result<MeasurementRecord, SignalError> {
        let dac = self.dac_auto(v_read)?;
        if !(dac.v_actual > 0.0) {
            return Err(SignalError::Range("read voltage quantizes to 0 V".into()));
        }
        let i_true = dut(dac.v_actual);
        let reading = self.measure_current(i_true, n_samples, rng)?;
        let entry = cal.entry(reading.stage).ok_or_else(|| {
            SignalError::Calibration(format!("stage {} not calibrated", reading.stage))
        })?;
        let g = entry
            .correct(reading.current_a / dac.v_actual)
            .ok_or_else(|| SignalError::Range("calibrated conductance is not positive".into()))?;
        Ok(MeasurementRecord {
            index: 0,
            stage: reading.stage,
            dac_code: dac.code,
            v_actual: dac.v_actual,
            raw_codes: reading.codes,
            mean_code: reading.mean_code,
            current_a: reading.current_a,
            resistance_ohm: 1.0 / g,
            saturated_samples: reading.saturated_samples,
        })
    }

    /// Worst-case relative resistance error from converter quantization alone
    /// for a reading whose TIA output sits at `v_out` with DAC step `dac_lsb`
    /// around `v_read`. Half an LSB of rounding on each converter.
    pub fn quantization_bound(&self, v_out: f64, v_read: f64, dac_lsb: f64) -> f64 {
        let adc = 0.5 * self.adc_lsb_v() / v_out;
        let dac = 0.5 * dac_lsb / v_read;
        (1.0 + dac) / (1.0 - adc) - 1.0
    }
}
