//! Board firmware: routes each operation onto the array, applies pulses,
//! reads through the signal chain and keeps the calibration.

pub mod protocol;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::BoardConfig;
use crate::crossbar::{CrossbarArray, CrossbarError, NodalSolution, Rail, RailDrive, Topology};
use crate::device::{DeviceError, DeviceParams};
use crate::signal_chain::{
    CalibrationTable, LineSource, MeasurementRecord, RoutingMatrix, SignalChain, SignalError,
};

const STREAM_DEVICES: u64 = 1;
const STREAM_OPERATIONS: u64 = 2;

/// Independent ChaCha8 stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no calibration loaded")]
    NotCalibrated,
    #[error("write failed after {pulses} pulses: {message}")]
    WriteFailed {
        pulses: usize,
        /// Last verified reading, `None` if the write never started.
        resistance_ohm: Option<f64>,
        message: String,
    },
    #[error("logic: {0}")]
    Logic(String),
    #[error("experiment: {0}")]
    Experiment(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Crossbar(#[from] CrossbarError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

impl ControllerError {
    /// Stable wire code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "config_error",
            Self::InvalidParams(_) => "invalid_params",
            Self::NotCalibrated => "not_calibrated",
            Self::WriteFailed { .. } => "write_failed",
            Self::Logic(_) => "logic_error",
            Self::Experiment(_) => "experiment_error",
            Self::Device(DeviceError::InvalidParams(_)) => "invalid_params",
            Self::Device(DeviceError::SamplingExhausted(_)) => "device_error",
            Self::Crossbar(CrossbarError::SingularNetwork(_)) => "singular_network",
            Self::Crossbar(_) => "invalid_params",
            Self::Signal(SignalError::OutOfRange { .. }) => "out_of_range",
            Self::Signal(SignalError::Range(_)) => "range_error",
            Self::Signal(SignalError::Calibration(_)) => "calibration_error",
            Self::Signal(SignalError::Routing(_)) => "routing_error",
            Self::Signal(SignalError::InvalidConfig(_)) => "config_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteTarget {
    SetLrs,
    ResetHrs,
    Band { center_ohm: f64, tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WriteOptions {
    pub max_pulses: Option<usize>,
    /// One pulse in the target direction, no verify loop.
    pub single_shot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub v_applied: f64,
    pub width_s: f64,
    pub resistance_after_ohm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteOutcome {
    pub row: usize,
    pub col: usize,
    pub target: WriteTarget,
    pub pulses: usize,
    pub resistance_ohm: f64,
    pub in_band: bool,
    pub trace: Vec<PulseRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadOptions {
    pub n_samples: Option<usize>,
    pub gate_on: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            n_samples: None,
            gate_on: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MvmInput {
    #[serde(rename = "volts")]
    Volts(Vec<f64>),
    /// DAC codes on the `0..5 V` range.
    #[serde(rename = "codes")]
    Codes(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvmGroupReading {
    pub rows: Vec<usize>,
    pub stage: u8,
    pub mean_code: f64,
    pub current_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvmColumn {
    pub col: usize,
    /// Sum over row groups; `None` when any group could not be ranged.
    pub current_a: Option<f64>,
    pub readings: Vec<MvmGroupReading>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvmResult {
    /// DAC-quantized row voltages actually applied.
    pub applied_v: Vec<f64>,
    pub row_groups: Vec<Vec<usize>>,
    pub columns: Vec<MvmColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NorOutcome {
    pub row: usize,
    pub inputs: Vec<bool>,
    pub output: bool,
    pub expected: bool,
    pub v0: f64,
    pub output_resistance_ohm: f64,
}

/// Logic level of a read resistance; `None` inside the guard gap.
pub fn logic_level(params: &DeviceParams, r: f64) -> Option<bool> {
    let ratio = params.r_hrs_ohm / params.r_lrs_ohm;
    if r <= params.r_lrs_ohm * ratio.powf(1.0 / 3.0) {
        Some(true)
    } else if r >= params.r_lrs_ohm * ratio.powf(2.0 / 3.0) {
        Some(false)
    } else {
        None
    }
}

/// Feasible gate-voltage window `(lo, hi)` for a row-wise NOR with
/// `n_inputs` parallel inputs in series with one output, each branch having
/// `r_selector` extra series resistance. `None` when the window is empty.
pub fn nor_voltage_window(
    params: &DeviceParams,
    n_inputs: usize,
    r_selector: f64,
    margin: f64,
) -> Option<(f64, f64)> {
    if n_inputs == 0 {
        return None;
    }
    let n = n_inputs as f64;
    let (r_lrs, r_hrs) = (params.r_lrs_ohm, params.r_hrs_ohm);
    let on = r_lrs + r_selector;
    let off = r_hrs + r_selector;
    let par = |g: f64| 1.0 / g;
    // One input in LRS, the rest in HRS, output still LRS: output must RESET.
    let inputs_one = par(1.0 / on + (n - 1.0) / off);
    let out_share_one = on / (on + inputs_one) * (r_lrs / on);
    let lo = params.v_reset.abs() * (1.0 + margin) / out_share_one;
    // HRS inputs must not SET in either case; output must hold with all HRS.
    let inputs_zero = off / n;
    let in_share_zero = inputs_zero / (inputs_zero + on) * (r_hrs / off);
    let in_share_one = inputs_one / (inputs_one + on) * (r_hrs / off);
    let out_share_zero = on / (on + inputs_zero) * (r_lrs / on);
    let hi = [
        params.v_set * (1.0 - margin) / in_share_zero,
        params.v_set * (1.0 - margin) / in_share_one,
        params.v_reset.abs() * (1.0 - margin) / out_share_zero,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    (lo < hi).then_some((lo, hi))
}

#[derive(Debug, Clone)]
pub struct Controller {
    config: BoardConfig,
    chain: SignalChain,
    array: CrossbarArray,
    calibration: Option<CalibrationTable>,
    rng: ChaCha8Rng,
    measurements: u64,
}

impl Controller {
    pub fn new(config: BoardConfig) -> Result<Self, ControllerError> {
        config.validate()?;
        let chain = SignalChain::new(config.signal_chain.clone())?;
        let a = &config.array;
        let mut dev_rng = substream(config.seed, STREAM_DEVICES);
        let array =
            CrossbarArray::sampled(a.rows, a.cols, a.topology, &config.device, &mut dev_rng)?
                .with_wire_resistance(a.r_wire_segment)?
                .with_transistor_on_resistance(a.r_transistor_on)?;
        Ok(Self {
            rng: substream(config.seed, STREAM_OPERATIONS),
            config,
            chain,
            array,
            calibration: None,
            measurements: 0,
        })
    }

    pub fn config(&self) -> &BoardConfig {
        &self.config
    }

    pub fn chain(&self) -> &SignalChain {
        &self.chain
    }

    pub fn array(&self) -> &CrossbarArray {
        &self.array
    }

    pub fn array_mut(&mut self) -> &mut CrossbarArray {
        &mut self.array
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn calibration(&self) -> Option<&CalibrationTable> {
        self.calibration.as_ref()
    }

    pub fn calibrate(&mut self) -> Result<&CalibrationTable, ControllerError> {
        let table = self.chain.calibrate(
            &self.config.calibration,
            self.config.seed,
            self.measurements,
            &mut self.rng,
        )?;
        Ok(self.calibration.insert(table))
    }

    pub fn load_calibration(&mut self, table: CalibrationTable) -> Result<(), ControllerError> {
        table.validate()?;
        self.calibration = Some(table);
        Ok(())
    }

    pub fn cell_state(&self, row: usize, col: usize) -> Result<f64, ControllerError> {
        self.array.check(row, col)?;
        Ok(self.array.cell(row, col).state())
    }

    /// Overwrites a cell state without pulsing (simulation backdoor).
    pub fn force_state(&mut self, row: usize, col: usize, x: f64) -> Result<(), ControllerError> {
        self.array.check(row, col)?;
        if !(0.0..=1.0).contains(&x) {
            return Err(ControllerError::InvalidParams(format!(
                "state {x} outside [0, 1]"
            )));
        }
        self.array.cell_mut(row, col).set_state(x);
        Ok(())
    }

    pub fn sneak_ratio(
        &self,
        row: usize,
        col: usize,
        v_read: Option<f64>,
    ) -> Result<f64, ControllerError> {
        let v = v_read.unwrap_or(self.config.controller.read_voltage);
        Ok(self.array.sneak_current_ratio(row, col, v)?)
    }

    /// Checks that the drive fits the interconnection matrix. Rows map to
    /// lines `0..rows`, columns to `rows..rows+cols`.
    fn route(&self, drive: &RailDrive) -> Result<RoutingMatrix, ControllerError> {
        let sc = self.chain.config();
        let mut m = RoutingMatrix::new(sc.routing.total_lines, sc.dac.channels, sc.tia.channels);
        let mut potentials: Vec<f64> = Vec::new();
        let mut sense = 0u8;
        let rails = drive.rows.iter().chain(&drive.cols);
        for (line, rail) in rails.enumerate() {
            let source = match *rail {
                Rail::Floating => continue,
                Rail::Driven(v) if v == 0.0 => LineSource::Gnd,
                Rail::Driven(v) => {
                    let k = match potentials.iter().position(|&p| p == v) {
                        Some(k) => k,
                        None => {
                            potentials.push(v);
                            potentials.len() - 1
                        }
                    };
                    LineSource::Potential(u8::try_from(k).unwrap_or(u8::MAX))
                }
                Rail::VirtualGround => {
                    sense += 1;
                    LineSource::Sense(sense - 1)
                }
            };
            m.assign(line, source)?;
        }
        Ok(m)
    }

    fn solve(&self, drive: RailDrive) -> Result<NodalSolution, ControllerError> {
        self.route(&drive)?;
        let drive = drive.with_source_resistance(self.chain.r_path_ohm());
        Ok(self.array.solve_nodal(&drive)?)
    }

    fn read_drive(&self, row: usize, col: usize, v: f64) -> RailDrive {
        let (rows, cols) = (self.array.rows(), self.array.cols());
        match self.array.topology() {
            Topology::Active1T1R => RailDrive::single_cell(rows, cols, row, col, v),
            Topology::Passive1R => {
                // Unselected lines grounded so no sneak current reaches the TIA.
                let mut d = RailDrive {
                    rows: vec![Rail::Driven(0.0); rows],
                    cols: vec![Rail::Driven(0.0); cols],
                    source_resistance_ohm: 0.0,
                };
                d.rows[row] = Rail::Driven(v);
                d.cols[col] = Rail::VirtualGround;
                d
            }
        }
    }

    /// Calibrated resistance of one cell with the array access path
    /// de-embedded.
    pub fn read_cell(
        &mut self,
        row: usize,
        col: usize,
        opts: ReadOptions,
    ) -> Result<MeasurementRecord, ControllerError> {
        self.array.check(row, col)?;
        let cal = self
            .calibration
            .clone()
            .ok_or(ControllerError::NotCalibrated)?;
        let n = opts
            .n_samples
            .unwrap_or(self.config.controller.read_samples);
        if n == 0 {
            return Err(ControllerError::InvalidParams(
                "n_samples must be >= 1".into(),
            ));
        }
        if self.array.topology() == Topology::Active1T1R {
            let selected: &[(usize, usize)] = if opts.gate_on { &[(row, col)] } else { &[] };
            self.array.select_only(selected);
        }
        // The network is linear, so one solve at 1 V scales to the DAC level.
        let sol = self.solve(self.read_drive(row, col, 1.0))?;
        let amps_per_volt = sol.col_currents[col];
        let cell = self.array.cell(row, col);
        let g = cell.conductance();
        let noise = cell.read_conductance(&mut self.rng) / g;
        let mut rec = self.chain.measure_resistance(
            |v| v * amps_per_volt * noise,
            self.config.controller.read_voltage,
            n,
            &cal,
            &mut self.rng,
        )?;
        let r_cell = rec.resistance_ohm - self.array.access_resistance(row, col);
        if !(r_cell > 0.0) {
            return Err(SignalError::Range(format!(
                "reading {:.1} ohm is below the access resistance",
                rec.resistance_ohm
            ))
            .into());
        }
        rec.resistance_ohm = r_cell;
        rec.index = self.measurements;
        self.measurements += 1;
        Ok(rec)
    }

    fn apply_write_pulse(
        &mut self,
        row: usize,
        col: usize,
        v_request: f64,
        width: f64,
    ) -> Result<f64, ControllerError> {
        let v = self.chain.dac_auto(v_request)?.v_actual;
        let (rows, cols) = (self.array.rows(), self.array.cols());
        let drive = match self.array.topology() {
            Topology::Active1T1R => {
                self.array.select_only(&[(row, col)]);
                let mut d = RailDrive::floating(rows, cols);
                d.rows[row] = Rail::Driven(v);
                d.cols[col] = Rail::Driven(0.0);
                d
            }
            Topology::Passive1R => {
                let half = self.chain.dac_auto(v / 2.0)?.v_actual;
                let mut d = RailDrive {
                    rows: vec![Rail::Driven(half); rows],
                    cols: vec![Rail::Driven(half); cols],
                    source_resistance_ohm: 0.0,
                };
                d.rows[row] = Rail::Driven(v);
                d.cols[col] = Rail::Driven(0.0);
                d
            }
        };
        let sol = self.solve(drive)?;
        self.array.apply_operating_point(&sol, width, &mut self.rng);
        Ok(v)
    }

    /// Acceptance band `(lo, hi)` in ohms for a write target.
    pub fn write_band(&self, target: WriteTarget) -> Result<(f64, f64), ControllerError> {
        let p = &self.config.device;
        let c = &self.config.controller;
        match target {
            WriteTarget::SetLrs => Ok((0.0, p.r_lrs_ohm * (1.0 + c.lrs_tolerance))),
            WriteTarget::ResetHrs => Ok((p.r_hrs_ohm * (1.0 - c.hrs_tolerance), f64::INFINITY)),
            WriteTarget::Band {
                center_ohm,
                tolerance,
            } => {
                if !(tolerance > 0.0 && tolerance < 1.0) {
                    return Err(ControllerError::InvalidParams(format!(
                        "band tolerance {tolerance}"
                    )));
                }
                let (lo, hi) = (
                    center_ohm * (1.0 - tolerance),
                    center_ohm * (1.0 + tolerance),
                );
                if !(lo >= p.r_lrs_ohm && hi <= p.r_hrs_ohm) {
                    return Err(ControllerError::WriteFailed {
                        pulses: 0,
                        resistance_ohm: None,
                        message: format!(
                            "band [{lo:.0}, {hi:.0}] ohm is outside the device range [{}, {}]",
                            p.r_lrs_ohm, p.r_hrs_ohm
                        ),
                    });
                }
                Ok((lo, hi))
            }
        }
    }

    /// Program-and-verify: read, pulse toward the band, repeat.
    pub fn write_cell(
        &mut self,
        row: usize,
        col: usize,
        target: WriteTarget,
        opts: WriteOptions,
    ) -> Result<WriteOutcome, ControllerError> {
        self.array.check(row, col)?;
        if self.calibration.is_none() {
            return Err(ControllerError::NotCalibrated);
        }
        let (lo, hi) = self.write_band(target)?;
        let c = self.config.controller;
        let p = self.config.device;
        let max_pulses = opts.max_pulses.unwrap_or(c.max_pulses);
        if max_pulses == 0 {
            return Err(ControllerError::InvalidParams(
                "max_pulses must be >= 1".into(),
            ));
        }
        let fine = matches!(target, WriteTarget::Band { .. });
        let (v_up, v_down) = if fine {
            (p.v_set + c.fine_overdrive_v, p.v_reset - c.fine_overdrive_v)
        } else {
            (p.v_set + c.set_overdrive_v, p.v_reset - c.reset_overdrive_v)
        };
        let read = ReadOptions::default();

        let mut trace = Vec::new();
        let mut r = self.read_cell(row, col, read)?.resistance_ohm;
        let mut width = c.pulse_width_s;
        let mut last_up: Option<bool> = None;

        if opts.single_shot {
            let up = match target {
                WriteTarget::SetLrs => true,
                WriteTarget::ResetHrs => false,
                WriteTarget::Band { .. } => r > hi,
            };
            let v = self.apply_write_pulse(row, col, if up { v_up } else { v_down }, width)?;
            r = self.read_cell(row, col, read)?.resistance_ohm;
            trace.push(PulseRecord {
                v_applied: v,
                width_s: width,
                resistance_after_ohm: r,
            });
            return Ok(WriteOutcome {
                row,
                col,
                target,
                pulses: 1,
                resistance_ohm: r,
                in_band: r >= lo && r <= hi,
                trace,
            });
        }

        loop {
            if r >= lo && r <= hi {
                return Ok(WriteOutcome {
                    row,
                    col,
                    target,
                    pulses: trace.len(),
                    resistance_ohm: r,
                    in_band: true,
                    trace,
                });
            }
            if trace.len() >= max_pulses {
                return Err(ControllerError::WriteFailed {
                    pulses: trace.len(),
                    resistance_ohm: Some(r),
                    message: format!("last read {r:.1} ohm, not in [{lo:.0}, {hi:.0}] ohm"),
                });
            }
            let up = r > hi;
            if fine && last_up.is_some_and(|prev| prev != up) {
                width /= 2.0;
            }
            last_up = Some(up);
            let v = self.apply_write_pulse(row, col, if up { v_up } else { v_down }, width)?;
            r = self.read_cell(row, col, read)?.resistance_ohm;
            trace.push(PulseRecord {
                v_applied: v,
                width_s: width,
                resistance_after_ohm: r,
            });
        }
    }

    fn read_logic(&mut self, row: usize, col: usize) -> Result<bool, ControllerError> {
        let r = self
            .read_cell(row, col, ReadOptions::default())?
            .resistance_ohm;
        logic_level(&self.config.device, r).ok_or_else(|| {
            ControllerError::Logic(format!(
                "cell ({row}, {col}) reads {r:.0} ohm, between logic levels"
            ))
        })
    }

    fn selector_resistance(&self) -> f64 {
        match self.array.topology() {
            Topology::Active1T1R => self.array.r_transistor_on(),
            Topology::Passive1R => 0.0,
        }
    }

    /// Gate-voltage window for an `n_inputs` NOR on this board.
    pub fn nor_window(&self, n_inputs: usize) -> Option<(f64, f64)> {
        nor_voltage_window(
            &self.config.device,
            n_inputs,
            self.selector_resistance(),
            self.config.controller.logic_margin,
        )
    }

    /// Row-wise stateful NOR: the output cell is initialised to LRS, the
    /// input columns are driven at `-v0` and the output column grounded
    /// while the row floats.
    pub fn magic_nor(
        &mut self,
        row: usize,
        in_cols: &[usize],
        out_col: usize,
        v0: Option<f64>,
    ) -> Result<NorOutcome, ControllerError> {
        self.array.check(row, out_col)?;
        if in_cols.is_empty() {
            return Err(ControllerError::InvalidParams(
                "NOR needs at least one input".into(),
            ));
        }
        for (k, &c) in in_cols.iter().enumerate() {
            self.array.check(row, c)?;
            if c == out_col || in_cols[..k].contains(&c) {
                return Err(ControllerError::InvalidParams(format!(
                    "column {c} used twice"
                )));
            }
        }
        if self.calibration.is_none() {
            return Err(ControllerError::NotCalibrated);
        }
        let v0 = match v0 {
            Some(v) if v > 0.0 => v,
            Some(v) => {
                return Err(ControllerError::InvalidParams(format!(
                    "v0 {v} must be positive"
                )))
            }
            None => {
                let (lo, hi) = self.nor_window(in_cols.len()).ok_or_else(|| {
                    ControllerError::Logic(format!(
                        "no gate voltage satisfies the {}-input NOR margins for these device thresholds",
                        in_cols.len()
                    ))
                })?;
                0.5 * (lo + hi)
            }
        };
        let v_gate = self.chain.dac_auto(-v0)?.v_actual;

        let inputs = in_cols
            .iter()
            .map(|&c| self.read_logic(row, c))
            .collect::<Result<Vec<_>, _>>()?;
        self.write_cell(row, out_col, WriteTarget::SetLrs, WriteOptions::default())
            .map_err(|e| ControllerError::Logic(format!("output initialisation failed: {e}")))?;

        let (rows, cols) = (self.array.rows(), self.array.cols());
        if self.array.topology() == Topology::Active1T1R {
            let mut on: Vec<(usize, usize)> = in_cols.iter().map(|&c| (row, c)).collect();
            on.push((row, out_col));
            self.array.select_only(&on);
        }
        let mut drive = RailDrive::floating(rows, cols);
        for &c in in_cols {
            drive.cols[c] = Rail::Driven(v_gate);
        }
        drive.cols[out_col] = Rail::Driven(0.0);
        let step = self.config.controller.logic_step_width_s;
        for _ in 0..self.config.controller.logic_steps {
            let sol = self.solve(drive.clone())?;
            self.array.apply_operating_point(&sol, step, &mut self.rng);
        }

        let r_out = self
            .read_cell(row, out_col, ReadOptions::default())?
            .resistance_ohm;
        let output = logic_level(&self.config.device, r_out).ok_or_else(|| {
            ControllerError::Logic(format!("output reads {r_out:.0} ohm, between logic levels"))
        })?;
        for (&c, &before) in in_cols.iter().zip(&inputs) {
            if self.read_logic(row, c)? != before {
                return Err(ControllerError::Logic(format!(
                    "input ({row}, {c}) was disturbed"
                )));
            }
        }
        Ok(NorOutcome {
            row,
            expected: !inputs.iter().any(|&b| b),
            inputs,
            output,
            v0: -v_gate,
            output_resistance_ohm: r_out,
        })
    }

    /// Analog vector-matrix multiply: row voltages in, column currents out.
    /// Rows are time-multiplexed so each phase uses at most as many distinct
    /// potentials as there are DAC channels; unselected rows are grounded and
    /// phase currents add by superposition. Columns are sensed in batches of
    /// the TIA channel count with the other requested columns grounded.
    pub fn mvm(
        &mut self,
        input: &MvmInput,
        cols: Option<&[usize]>,
        n_samples: Option<usize>,
    ) -> Result<MvmResult, ControllerError> {
        let (rows, ncols) = (self.array.rows(), self.array.cols());
        let v_limit = self
            .config
            .device
            .v_set
            .min(self.config.device.v_reset.abs());
        let applied: Vec<f64> = match input {
            MvmInput::Volts(v) => {
                if v.len() != rows {
                    return Err(ControllerError::InvalidParams(format!(
                        "{} inputs for {rows} rows",
                        v.len()
                    )));
                }
                v.iter()
                    .map(|&x| {
                        if !(x >= 0.0) {
                            return Err(ControllerError::InvalidParams(format!(
                                "input {x} V: the sense path only takes non-negative inputs"
                            )));
                        }
                        Ok(if x == 0.0 {
                            0.0
                        } else {
                            self.chain.dac_auto(x)?.v_actual
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
            MvmInput::Codes(c) => {
                if c.len() != rows {
                    return Err(ControllerError::InvalidParams(format!(
                        "{} inputs for {rows} rows",
                        c.len()
                    )));
                }
                let range = crate::signal_chain::DacRange::new(0.0, 5.0);
                let max = self.chain.dac_max_code();
                c.iter()
                    .map(|&code| {
                        if code > max {
                            return Err(ControllerError::InvalidParams(format!(
                                "DAC code {code} > {max}"
                            )));
                        }
                        Ok(range.lo + code as f64 / max as f64 * range.span())
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        if let Some(v) = applied.iter().find(|&&v| v >= v_limit) {
            return Err(ControllerError::InvalidParams(format!(
                "input {v} V would disturb cells (threshold {v_limit} V)"
            )));
        }
        let cols: Vec<usize> = match cols {
            Some(c) => c.to_vec(),
            None => (0..ncols).collect(),
        };
        if cols.is_empty() {
            return Err(ControllerError::InvalidParams(
                "no columns requested".into(),
            ));
        }
        for (k, &c) in cols.iter().enumerate() {
            self.array.check(0, c)?;
            if cols[..k].contains(&c) {
                return Err(ControllerError::InvalidParams(format!(
                    "column {c} listed twice"
                )));
            }
        }
        let n = n_samples
            .unwrap_or(self.config.controller.read_samples)
            .max(1);

        let channels = self.chain.config().dac.channels;
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut distinct: Vec<f64> = Vec::new();
        for (i, &v) in applied.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let new_level = !distinct.contains(&v);
            if groups.is_empty() || (new_level && distinct.len() == channels) {
                groups.push(Vec::new());
                distinct.clear();
            }
            if !distinct.contains(&v) {
                distinct.push(v);
            }
            groups.last_mut().expect("group exists").push(i);
        }

        if self.array.topology() == Topology::Active1T1R {
            self.array.set_all_gates(true);
        }
        let mut columns: Vec<MvmColumn> = cols
            .iter()
            .map(|&c| MvmColumn {
                col: c,
                current_a: Some(0.0),
                readings: Vec::new(),
                error: None,
            })
            .collect();
        let tia = self.chain.config().tia.channels;
        for batch in (0..cols.len()).collect::<Vec<_>>().chunks(tia) {
            for group in &groups {
                let mut drive = RailDrive {
                    rows: vec![Rail::Driven(0.0); rows],
                    cols: vec![Rail::Floating; ncols],
                    source_resistance_ohm: 0.0,
                };
                for &i in group {
                    drive.rows[i] = Rail::Driven(applied[i]);
                }
                for &c in &cols {
                    drive.cols[c] = Rail::Driven(0.0);
                }
                for &k in batch {
                    drive.cols[cols[k]] = Rail::VirtualGround;
                }
                let sol = self.solve(drive)?;
                for &k in batch {
                    let column = &mut columns[k];
                    if column.error.is_some() {
                        continue;
                    }
                    match self
                        .chain
                        .measure_current(sol.col_currents[column.col], n, &mut self.rng)
                    {
                        Ok(reading) => {
                            column.current_a = column.current_a.map(|s| s + reading.current_a);
                            column.readings.push(MvmGroupReading {
                                rows: group.clone(),
                                stage: reading.stage,
                                mean_code: reading.mean_code,
                                current_a: reading.current_a,
                            });
                        }
                        Err(e) => {
                            column.current_a = None;
                            column.error = Some(e.to_string());
                        }
                    }
                }
            }
        }
        self.measurements += 1;
        Ok(MvmResult {
            applied_v: applied,
            row_groups: groups,
            columns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal(rows: usize, cols: usize, topo: Topology) -> Controller {
        let cfg = BoardConfig::default()
            .noiseless()
            .without_parasitics()
            .with_shape(rows, cols, topo);
        let mut c = Controller::new(cfg).unwrap();
        c.calibrate().unwrap();
        c
    }

    #[test]
    fn seeds_reproduce_arrays_and_streams_differ() {
        let cfg = BoardConfig::default().with_shape(4, 4, Topology::Passive1R);
        let a = Controller::new(cfg.clone()).unwrap();
        let b = Controller::new(cfg.clone()).unwrap();
        assert_eq!(a.array(), b.array());
        let c = Controller::new(cfg.with_seed(2)).unwrap();
        assert_ne!(a.array(), c.array());
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }

    #[test]
    fn set_from_hrs_takes_four_pulses() {
        let mut c = ideal(1, 1, Topology::Passive1R);
        let out = c
            .write_cell(0, 0, WriteTarget::SetLrs, WriteOptions::default())
            .unwrap();
        assert_eq!(out.pulses, 4);
        assert!(c.cell_state(0, 0).unwrap() > 0.99);
        assert!(out.in_band);
    }

    #[test]
    fn write_without_calibration_is_rejected() {
        let cfg = BoardConfig::default().with_shape(2, 2, Topology::Passive1R);
        let mut c = Controller::new(cfg).unwrap();
        assert_eq!(
            c.write_cell(0, 0, WriteTarget::SetLrs, WriteOptions::default())
                .unwrap_err(),
            ControllerError::NotCalibrated
        );
    }

    #[test]
    fn band_outside_device_range_fails_precondition() {
        let mut c = ideal(2, 2, Topology::Passive1R);
        let err = c
            .write_cell(
                0,
                0,
                WriteTarget::Band {
                    center_ohm: 5_000.0,
                    tolerance: 0.1,
                },
                WriteOptions::default(),
            )
            .unwrap_err();
        assert_eq!(err.code(), "write_failed");
        assert_eq!(c.cell_state(0, 0).unwrap(), 0.0);
    }

    #[test]
    fn band_write_lands_in_band() {
        let mut c = ideal(2, 2, Topology::Active1T1R);
        let target = WriteTarget::Band {
            center_ohm: 30_000.0,
            tolerance: 0.1,
        };
        let out = c.write_cell(1, 1, target, WriteOptions::default()).unwrap();
        assert!(out.in_band);
        assert!((out.resistance_ohm - 30_000.0).abs() <= 3_000.0);
    }

    #[test]
    fn passive_write_leaves_half_selected_cells() {
        let mut c = ideal(3, 3, Topology::Passive1R);
        c.write_cell(1, 1, WriteTarget::SetLrs, WriteOptions::default())
            .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if (i, j) != (1, 1) {
                    assert_eq!(c.cell_state(i, j).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn gate_off_read_is_a_range_error() {
        let mut c = ideal(2, 2, Topology::Active1T1R);
        let err = c
            .read_cell(
                0,
                0,
                ReadOptions {
                    n_samples: None,
                    gate_on: false,
                },
            )
            .unwrap_err();
        assert_eq!(err.code(), "range_error");
    }

    #[test]
    fn passive_read_of_large_array_exceeds_routing() {
        let cfg = BoardConfig::default().with_shape(64, 8, Topology::Passive1R);
        let mut c = Controller::new(cfg).unwrap();
        c.calibrate().unwrap();
        let err = c.read_cell(0, 0, ReadOptions::default()).unwrap_err();
        assert_eq!(err.code(), "routing_error");
    }

    #[test]
    fn default_thresholds_have_no_nor_window() {
        let p = DeviceParams::default();
        assert!(nor_voltage_window(&p, 2, 500.0, 0.12).is_none());
        let (lo, hi) = nor_voltage_window(&DeviceParams::magic_logic(), 2, 500.0, 0.12).unwrap();
        assert!(lo > 1.0 && hi < 2.0 && lo < hi);
    }

    #[test]
    fn nor_with_default_thresholds_is_a_logic_error() {
        let mut c = ideal(1, 3, Topology::Active1T1R);
        assert_eq!(
            c.magic_nor(0, &[0, 1], 2, None).unwrap_err().code(),
            "logic_error"
        );
    }

    #[test]
    fn logic_levels() {
        let p = DeviceParams::default();
        assert_eq!(logic_level(&p, 10_000.0), Some(true));
        assert_eq!(logic_level(&p, 100_000.0), Some(false));
        assert_eq!(logic_level(&p, 30_000.0), None);
    }

    #[test]
    fn mvm_groups_respect_dac_channels() {
        let mut c = ideal(8, 2, Topology::Passive1R);
        let v: Vec<f64> = (0..8).map(|k| 0.05 + 0.02 * k as f64).collect();
        let res = c.mvm(&MvmInput::Volts(v), None, Some(4)).unwrap();
        assert_eq!(res.row_groups, vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7]]);
    }

    #[test]
    fn mvm_zero_input_gives_zero() {
        let mut c = ideal(4, 3, Topology::Passive1R);
        let res = c.mvm(&MvmInput::Volts(vec![0.0; 4]), None, None).unwrap();
        assert!(res.columns.iter().all(|col| col.current_a == Some(0.0)));
    }

    #[test]
    fn mvm_rejects_negative_and_disturbing_inputs() {
        let mut c = ideal(2, 2, Topology::Passive1R);
        assert!(c
            .mvm(&MvmInput::Volts(vec![-0.1, 0.1]), None, None)
            .is_err());
        assert!(c.mvm(&MvmInput::Volts(vec![1.0, 0.1]), None, None).is_err());
        assert!(c.mvm(&MvmInput::Codes(vec![5000, 0]), None, None).is_err());
    }
}
