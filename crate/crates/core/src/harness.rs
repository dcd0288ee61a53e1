//! Reproducible experiments and CSV summaries.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::BoardConfig;
use crate::controller::{
    derive_seed, substream, Controller, ControllerError, MvmInput, ReadOptions, WriteOptions,
    WriteTarget,
};

/// Resistance of the nominal 100 kOhm reference used for histograms.
pub const HISTOGRAM_TRUTH_OHM: f64 = 99_896.0;

pub const DEFAULT_SWEEP_REFS: [f64; 11] = [
    1e3, 50e3, 100e3, 200e3, 300e3, 400e3, 500e3, 600e3, 700e3, 800e3, 1000e3,
];

/// Accuracy targets for readings inside the specified span.
pub const MAX_RELATIVE_ERROR_PCT: f64 = 5.0;
pub const MAX_RELATIVE_SIGMA_PCT: f64 = 1.0;
pub const ACCURACY_SPAN_OHM: (f64, f64) = (1e3, 1e6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Histogram,
    Sweep,
    Endurance,
    Mvm,
    Logic,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Histogram => "histogram",
            Self::Sweep => "sweep",
            Self::Endurance => "endurance",
            Self::Mvm => "mvm",
            Self::Logic => "logic",
        }
    }
}

fn default_mvm_rows() -> usize {
    8
}

fn default_mvm_cols() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Measurements (histogram, sweep), cycles (endurance), trials (mvm) or
    /// variability seeds (logic).
    #[serde(default)]
    pub repeats: Option<usize>,
    /// ADC conversions averaged per reading.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub refs_ohm: Option<Vec<f64>>,
    #[serde(default)]
    pub truth_ohm: Option<f64>,
    #[serde(default)]
    pub row: usize,
    #[serde(default)]
    pub col: usize,
    #[serde(default = "default_mvm_rows")]
    pub mvm_rows: usize,
    #[serde(default = "default_mvm_cols")]
    pub mvm_cols: usize,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            repeats: None,
            samples: None,
            refs_ohm: None,
            truth_ohm: None,
            row: 0,
            col: 0,
            mvm_rows: default_mvm_rows(),
            mvm_cols: default_mvm_cols(),
        }
    }

    pub fn repeats(mut self, n: usize) -> Self {
        self.repeats = Some(n);
        self
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.samples = Some(n);
        self
    }

    pub fn refs(mut self, refs: Vec<f64>) -> Self {
        self.refs_ohm = Some(refs);
        self
    }

    fn default_repeats(&self) -> usize {
        match self.kind {
            ExperimentKind::Histogram | ExperimentKind::Sweep => 1000,
            ExperimentKind::Endurance | ExperimentKind::Mvm => 100,
            ExperimentKind::Logic => 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub csv: String,
    pub summary: Value,
    pub checks: Vec<Check>,
}

impl ExperimentOutput {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Mean and sample standard deviation, two-pass. `None` for an empty slice;
/// sigma is 0 for a single value.
pub fn mean_sigma(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let rough = values.iter().sum::<f64>() / n;
    // Second-pass correction makes the mean of identical values exact.
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Some((mean, (ss / (n - 1.0)).sqrt()))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    })
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn run(
    config: &BoardConfig,
    spec: &ExperimentSpec,
) -> Result<ExperimentOutput, ControllerError> {
    let cfg = config.clone().with_seed(spec.seed);
    let repeats = spec.repeats.unwrap_or_else(|| spec.default_repeats());
    if spec.samples == Some(0) {
        return Err(ControllerError::InvalidParams(
            "samples must be >= 1".into(),
        ));
    }
    let (csv, summary, checks) = match spec.kind {
        ExperimentKind::Histogram => histogram(cfg, spec, repeats)?,
        ExperimentKind::Sweep => sweep(cfg, spec, repeats)?,
        ExperimentKind::Endurance => endurance(cfg, spec, repeats)?,
        ExperimentKind::Mvm => mvm(cfg, spec, repeats)?,
        ExperimentKind::Logic => logic(cfg, spec, repeats)?,
    };
    Ok(ExperimentOutput {
        kind: spec.kind,
        seed: spec.seed,
        csv,
        summary,
        checks,
    })
}

type Parts = (String, Value, Vec<Check>);

/// Repeated reads of a board reference resistor. Returns successes and the
/// number of out-of-range readings.
fn measure_reference<R: Rng>(
    ctrl: &Controller,
    truth: f64,
    repeats: usize,
    samples: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, usize), ControllerError> {
    let chain = ctrl.chain();
    let cal = ctrl.calibration().ok_or(ControllerError::NotCalibrated)?;
    let v_read = ctrl.config().controller.read_voltage;
    let mut ok = Vec::with_capacity(repeats);
    let mut failed = 0;
    for _ in 0..repeats {
        match chain.measure_resistance(
            |v| chain.reference_current(truth, v),
            v_read,
            samples,
            cal,
            rng,
        ) {
            Ok(rec) => ok.push(rec.resistance_ohm),
            Err(crate::signal_chain::SignalError::Range(_)) => failed += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok((ok, failed))
}

fn histogram(
    cfg: BoardConfig,
    spec: &ExperimentSpec,
    repeats: usize,
) -> Result<Parts, ControllerError> {
    let truth = spec.truth_ohm.unwrap_or(HISTOGRAM_TRUTH_OHM);
    if !(truth > 0.0) {
        return Err(ControllerError::InvalidParams(format!("truth {truth} ohm")));
    }
    let samples = spec.samples.unwrap_or(cfg.controller.read_samples);
    let mut ctrl = Controller::new(cfg)?;
    ctrl.calibrate()?;
    let mut rng = substream(spec.seed, 3);
    let (values, failed) = measure_reference(&ctrl, truth, repeats, samples, &mut rng)?;
    let csv = csv_text(
        &["measurement_index", "resistance_ohm"],
        values
            .iter()
            .enumerate()
            .map(|(k, r)| vec![k.to_string(), num(*r)]),
    );
    let stats = mean_sigma(&values);
    let (err_pct, sigma_pct) = stats
        .map(|(m, s)| ((m - truth).abs() / truth * 100.0, s / m * 100.0))
        .unwrap_or((f64::NAN, f64::NAN));
    let summary = json!({
        "truth_ohm": truth,
        "count": values.len(),
        "failed": failed,
        "mean_ohm": stats.map(|s| s.0),
        "sigma_ohm": stats.map(|s| s.1),
        "relative_error_pct": stats.map(|_| err_pct),
        "relative_sigma_pct": stats.map(|_| sigma_pct),
    });
    let checks = vec![
        Check::new(
            "relative_error",
            err_pct < MAX_RELATIVE_ERROR_PCT,
            format!("{err_pct:.3}% (limit {MAX_RELATIVE_ERROR_PCT}%)"),
        ),
        Check::new(
            "relative_sigma",
            sigma_pct < MAX_RELATIVE_SIGMA_PCT,
            format!("{sigma_pct:.3}% (limit {MAX_RELATIVE_SIGMA_PCT}%)"),
        ),
        Check::new("no_failed_reads", failed == 0, format!("{failed} failed")),
        Check::new(
            "values_in_validity_span",
            !values.is_empty()
                && values
                    .iter()
                    .all(|r| *r >= ACCURACY_SPAN_OHM.0 && *r <= ACCURACY_SPAN_OHM.1),
            format!("{} values", values.len()),
        ),
    ];
    Ok((csv, summary, checks))
}

#[derive(Debug, Clone, Serialize)]
struct SweepPoint {
    r_ref_ohm: f64,
    relative_error_pct: Option<f64>,
    relative_sigma_pct: Option<f64>,
    ok: usize,
    failed: usize,
    status: &'static str,
}

fn sweep(
    cfg: BoardConfig,
    spec: &ExperimentSpec,
    repeats: usize,
) -> Result<Parts, ControllerError> {
    let refs = spec
        .refs_ohm
        .clone()
        .unwrap_or_else(|| DEFAULT_SWEEP_REFS.to_vec());
    if refs.is_empty() || refs.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(ControllerError::InvalidParams(
            "sweep needs positive reference values".into(),
        ));
    }
    let samples = spec.samples.unwrap_or(cfg.controller.read_samples);
    let mut ctrl = Controller::new(cfg)?;
    ctrl.calibrate()?;
    let in_validity_span =
        |r: f64| (ACCURACY_SPAN_OHM.0..=ACCURACY_SPAN_OHM.1).contains(&r);
    let refs = if repeats == 0 { Vec::new() } else { refs };
    let points = refs
        .par_iter()
        .enumerate()
        .map(|(k, &truth)| {
            let mut rng = substream(derive_seed(spec.seed, k as u64), 3);
            let (values, failed) = if in_validity_span(truth) {
                measure_reference(&ctrl, truth, repeats, samples, &mut rng)?
            } else {
                (Vec::new(), 0)
            };
            Ok(match mean_sigma(&values) {
                Some((m, s)) => SweepPoint {
                    r_ref_ohm: truth,
                    relative_error_pct: Some((m - truth).abs() / truth * 100.0),
                    relative_sigma_pct: Some(s / m * 100.0),
                    ok: values.len(),
                    failed,
                    status: "ok",
                },
                None => SweepPoint {
                    r_ref_ohm: truth,
                    relative_error_pct: None,
                    relative_sigma_pct: None,
                    ok: 0,
                    failed,
                    status: "out_of_range",
                },
            })
        })
        .collect::<Result<Vec<_>, ControllerError>>()?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    let csv = csv_text(
        &[
            "r_ref_ohm",
            "relative_error_pct",
            "relative_sigma_pct",
            "status",
        ],
        points.iter().map(|p| {
            vec![
                num(p.r_ref_ohm),
                opt(p.relative_error_pct),
                opt(p.relative_sigma_pct),
                p.status.to_string(),
            ]
        }),
    );
    let in_span: Vec<&SweepPoint> = points
        .iter()
        .filter(|p| in_validity_span(p.r_ref_ohm))
        .collect();
    let worst_err = in_span
        .iter()
        .map(|p| p.relative_error_pct.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let worst_sigma = in_span
        .iter()
        .map(|p| p.relative_sigma_pct.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let checks = vec![
        Check::new(
            "relative_error_in_span",
            worst_err < MAX_RELATIVE_ERROR_PCT,
            format!("worst {worst_err:.3}% over {} points", in_span.len()),
        ),
        Check::new(
            "relative_sigma_in_span",
            worst_sigma < MAX_RELATIVE_SIGMA_PCT,
            format!("worst {worst_sigma:.3}% over {} points", in_span.len()),
        ),
    ];
    let summary = json!({ "points": points });
    Ok((csv, summary, checks))
}

fn endurance(
    cfg: BoardConfig,
    spec: &ExperimentSpec,
    cycles: usize,
) -> Result<Parts, ControllerError> {
    let samples = spec.samples;
    let mut ctrl = Controller::new(cfg)?;
    ctrl.array().check(spec.row, spec.col)?;
    ctrl.calibrate()?;
    let read = ReadOptions {
        n_samples: samples,
        gate_on: true,
    };
    let mut rows = Vec::with_capacity(2 * cycles);
    let (mut set, mut reset) = (Vec::new(), Vec::new());
    let mut write_failures = 0usize;
    for _ in 0..cycles {
        for (target, op) in [
            (WriteTarget::ResetHrs, "RESET"),
            (WriteTarget::SetLrs, "SET"),
        ] {
            match ctrl.write_cell(spec.row, spec.col, target, WriteOptions::default()) {
                Ok(_) => {}
                Err(ControllerError::WriteFailed { .. }) => write_failures += 1,
                Err(e) => return Err(e),
            }
            let r = ctrl.read_cell(spec.row, spec.col, read)?.resistance_ohm;
            (if op == "SET" { &mut set } else { &mut reset }).push(r);
            rows.push(vec![rows.len().to_string(), num(r), op.to_string()]);
        }
    }
    let csv = csv_text(&["measurement_no", "resistance_ohm", "op"], rows);
    let max_set = set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_reset = reset.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = match (median(&reset), median(&set)) {
        (Some(r), Some(s)) => r / s,
        _ => f64::NAN,
    };
    let mut distinct: Vec<f64> = set.iter().chain(&reset).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let summary = json!({
        "cycles": cycles,
        "separation_ratio": min_reset / max_set,
        "write_failures": write_failures,
        "set_max_ohm": max_set,
        "set_median_ohm": median(&set),
        "reset_min_ohm": min_reset,
        "reset_median_ohm": median(&reset),
        "median_ratio": ratio,
        "distinct_values": distinct.len(),
    });
    let checks = vec![
        Check::new(
            "states_separated",
            max_set < min_reset,
            format!("max SET {max_set:.0} ohm, min RESET {min_reset:.0} ohm"),
        ),
        Check::new(
            "median_ratio",
            ratio >= 5.0,
            format!("{ratio:.2} (limit 5)"),
        ),
    ];
    Ok((csv, summary, checks))
}

fn mvm(cfg: BoardConfig, spec: &ExperimentSpec, trials: usize) -> Result<Parts, ControllerError> {
    let (rows, cols) = (spec.mvm_rows, spec.mvm_cols);
    if rows == 0 || cols == 0 {
        return Err(ControllerError::InvalidParams(
            "mvm shape must be non-empty".into(),
        ));
    }
    let topology = cfg.array.topology;
    let mut out = Vec::new();
    let mut within_all = true;
    let mut failures = 0usize;
    let mut worst = 0.0f64;
    for t in 0..trials {
        let seed = derive_seed(spec.seed, t as u64);
        let mut ctrl =
            Controller::new(cfg.clone().with_shape(rows, cols, topology).with_seed(seed))?;
        let mut rng = substream(seed, 4);
        for i in 0..rows {
            for j in 0..cols {
                ctrl.force_state(i, j, rng.random::<f64>())?;
            }
        }
        let inputs: Vec<f64> = (0..rows).map(|_| rng.random_range(0.05..0.3)).collect();
        let res = ctrl.mvm(&MvmInput::Volts(inputs), None, spec.samples)?;
        let lsb = ctrl.chain().adc_lsb_v();
        for col in &res.columns {
            let expected: f64 = (0..rows)
                .map(|i| ctrl.array().branch_conductance(i, col.col) * res.applied_v[i])
                .sum();
            let bound: f64 = col
                .readings
                .iter()
                .map(|g| {
                    0.5 * lsb
                        / ctrl
                            .chain()
                            .stage(g.stage)
                            .map_or(f64::NAN, |s| s.r_feedback_ohm)
                })
                .sum();
            let (measured, err, within) = match col.current_a {
                Some(m) => {
                    let e = (m - expected).abs();
                    (num(m), num(e), e <= bound)
                }
                None => {
                    failures += 1;
                    (String::new(), String::new(), false)
                }
            };
            if let Some(m) = col.current_a {
                worst = worst.max((m - expected).abs() / bound);
            }
            within_all &= within;
            out.push(vec![
                t.to_string(),
                col.col.to_string(),
                num(expected),
                measured,
                err,
                num(bound),
                within.to_string(),
            ]);
        }
    }
    let csv = csv_text(
        &[
            "trial",
            "col",
            "expected_a",
            "measured_a",
            "abs_err_a",
            "bound_a",
            "within",
        ],
        out,
    );
    let summary = json!({
        "trials": trials,
        "rows": rows,
        "cols": cols,
        "range_failures": failures,
        "worst_error_over_bound": worst,
    });
    let checks = vec![Check::new(
        "within_quantization_bound",
        within_all,
        format!("worst error / bound = {worst:.3}, {failures} unranged columns"),
    )];
    Ok((csv, summary, checks))
}

fn logic(cfg: BoardConfig, spec: &ExperimentSpec, seeds: usize) -> Result<Parts, ControllerError> {
    const IN: [usize; 2] = [0, 1];
    const OUT: usize = 2;
    let probe = Controller::new(cfg.clone())?;
    probe.array().check(spec.row, OUT)?;
    if probe.nor_window(IN.len()).is_none() {
        return Err(ControllerError::Logic(
            "no NOR gate voltage exists for the configured device thresholds".into(),
        ));
    }
    let mut out = Vec::new();
    let (mut correct, mut total) = (0usize, 0usize);
    for k in 0..seeds {
        let mut ctrl = Controller::new(cfg.clone().with_seed(derive_seed(spec.seed, k as u64)))?;
        ctrl.calibrate()?;
        for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
            total += 1;
            let mut run = || -> Result<_, ControllerError> {
                for (&c, level) in IN.iter().zip([a, b]) {
                    let target = if level {
                        WriteTarget::SetLrs
                    } else {
                        WriteTarget::ResetHrs
                    };
                    ctrl.write_cell(spec.row, c, target, WriteOptions::default())?;
                }
                ctrl.magic_nor(spec.row, &IN, OUT, None)
            };
            let row = match run() {
                Ok(nor) => {
                    let good = nor.output == nor.expected && nor.inputs == [a, b];
                    correct += usize::from(good);
                    vec![
                        k.to_string(),
                        u8::from(a).to_string(),
                        u8::from(b).to_string(),
                        u8::from(nor.expected).to_string(),
                        u8::from(nor.output).to_string(),
                        good.to_string(),
                        num(nor.v0),
                        num(nor.output_resistance_ohm),
                        String::new(),
                    ]
                }
                Err(e) => vec![
                    k.to_string(),
                    u8::from(a).to_string(),
                    u8::from(b).to_string(),
                    u8::from(!(a || b)).to_string(),
                    String::new(),
                    "false".into(),
                    String::new(),
                    String::new(),
                    e.code().to_string(),
                ],
            };
            out.push(row);
        }
    }
    let csv = csv_text(
        &[
            "seed_index",
            "in0",
            "in1",
            "expected",
            "output",
            "correct",
            "v0",
            "output_resistance_ohm",
            "error",
        ],
        out,
    );
    let summary = json!({ "seeds": seeds, "cases": total, "correct": correct });
    let checks = vec![Check::new(
        "truth_table",
        correct == total,
        format!("{correct}/{total} cases correct with inputs preserved"),
    )];
    Ok((csv, summary, checks))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("unrecognised CSV header: {0}")]
    Schema(String),
    #[error("bad CSV: {0}")]
    Csv(String),
}

fn stats_json(values: &[f64]) -> Value {
    match mean_sigma(values) {
        Some((m, s)) => json!({
            "count": values.len(),
            "mean": m,
            "sigma": s,
            "relative_sigma_pct": s / m * 100.0,
            "min": values.iter().copied().fold(f64::INFINITY, f64::min),
            "max": values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }),
        None => json!({ "count": 0 }),
    }
}

/// Summary statistics of a CSV written by [`run`].
pub fn report(csv_data: &str) -> Result<Value, ReportError> {
    let mut rdr = csv::Reader::from_reader(csv_data.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| ReportError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let records = rdr
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ReportError::Csv(e.to_string()))?;
    let field = |r: &csv::StringRecord, k: usize| -> Result<f64, ReportError> {
        r.get(k)
            .unwrap_or_default()
            .parse::<f64>()
            .map_err(|e| ReportError::Csv(format!("{e} in {r:?}")))
    };
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    match h.as_slice() {
        ["measurement_index", "resistance_ohm"] => {
            let v = records
                .iter()
                .map(|r| field(r, 1))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(json!({"kind": "histogram", "resistance_ohm": stats_json(&v)}))
        }
        ["measurement_no", "resistance_ohm", "op"] => {
            let (mut set, mut reset) = (Vec::new(), Vec::new());
            for r in &records {
                let v = field(r, 1)?;
                match r.get(2) {
                    Some("SET") => set.push(v),
                    Some("RESET") => reset.push(v),
                    other => return Err(ReportError::Csv(format!("unknown op {other:?}"))),
                }
            }
            Ok(json!({"kind": "endurance", "set": stats_json(&set), "reset": stats_json(&reset)}))
        }
        ["r_ref_ohm", "relative_error_pct", "relative_sigma_pct", "status"] => {
            let mut points = Vec::new();
            for r in &records {
                let ok = r.get(3) == Some("ok");
                points.push(json!({
                    "r_ref_ohm": field(r, 0)?,
                    "relative_error_pct": if ok { Some(field(r, 1)?) } else { None },
                    "relative_sigma_pct": if ok { Some(field(r, 2)?) } else { None },
                    "status": r.get(3),
                }));
            }
            Ok(json!({"kind": "sweep", "count": points.len(), "points": points}))
        }
        ["trial", "col", "expected_a", "measured_a", "abs_err_a", "bound_a", "within"] => {
            let within = records.iter().filter(|r| r.get(6) == Some("true")).count();
            Ok(json!({"kind": "mvm", "count": records.len(), "within": within}))
        }
        ["seed_index", "in0", "in1", "expected", "output", "correct", ..] => {
            let correct = records.iter().filter(|r| r.get(5) == Some("true")).count();
            Ok(json!({"kind": "logic", "count": records.len(), "correct": correct}))
        }
        _ => Err(ReportError::Schema(header.join(","))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_handle_edges() {
        assert_eq!(mean_sigma(&[]), None);
        assert_eq!(mean_sigma(&[3.0]), Some((3.0, 0.0)));
        let (m, s) = mean_sigma(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((m - 2.5).abs() < 1e-15 && (s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn two_pass_survives_large_offset() {
        let v: Vec<f64> = (0..1000).map(|k| 1e9 + (k % 2) as f64).collect();
        let (_, s) = mean_sigma(&v).unwrap();
        assert!((s - 0.500_250_1).abs() < 1e-6);
    }

    #[test]
    fn report_of_empty_histogram() {
        let v = report("measurement_index,resistance_ohm\n").unwrap();
        assert_eq!(v["resistance_ohm"]["count"], 0);
        assert!(!v.to_string().contains("NaN"));
    }

    #[test]
    fn report_rejects_unknown_header() {
        assert!(matches!(report("a,b\n1,2\n"), Err(ReportError::Schema(_))));
    }

    #[test]
    fn report_endurance_groups_by_op() {
        let v = report(
            "measurement_no,resistance_ohm,op\n0,100000,RESET\n1,10000,SET\n2,98000,RESET\n",
        )
        .unwrap();
        assert_eq!(v["reset"]["count"], 2);
        assert_eq!(v["set"]["mean"], 10000.0);
    }

    #[test]
    fn small_histogram_is_reproducible() {
        let cfg = BoardConfig::default();
        let spec = ExperimentSpec::new(ExperimentKind::Histogram, 5).repeats(20);
        let a = run(&cfg, &spec).unwrap();
        let b = run(&cfg, &spec).unwrap();
        assert_eq!(a.csv, b.csv);
        assert!(a.all_pass(), "{:?}", a.checks);
    }
}
