//! Line-delimited JSON request/response protocol.
//!
//! Each request is one JSON object `{"id", "op", "params"}` on its own line,
//! each response is `{"id", "ok", "payload"}` or `{"id", "ok": false,
//! "error", "message"}`. Unparseable lines are answered with `id: null`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Controller, ControllerError, MvmInput, ReadOptions, WriteOptions, WriteTarget};
use crate::config::BoardConfig;
use crate::harness::{self, ExperimentSpec};
use crate::signal_chain::CalibrationTable;

pub const PROTOCOL_VERSION: u32 = 1;

pub const OPS: &[&str] = &[
    "ping",
    "get_config",
    "configure",
    "calibrate",
    "get_calibration",
    "load_calibration",
    "write_cell",
    "read_cell",
    "mvm",
    "magic_nor",
    "cell_state",
    "force_state",
    "sneak_ratio",
    "experiment",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: String,
    #[serde(default)]
    pub params: Value,
}

impl Request {
    pub fn new(id: u64, op: impl Into<String>, params: Value) -> Self {
        Self {
            id,
            op: op.into(),
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Response {
    pub fn success(id: u64, payload: Value) -> Self {
        Self {
            id: Some(id),
            ok: true,
            payload: Some(payload),
            error: None,
            message: None,
        }
    }

    pub fn failure(id: Option<u64>, code: &str, message: impl Into<String>) -> Self {
        Self {
            id,
            ok: false,
            payload: None,
            error: Some(code.to_string()),
            message: Some(message.into()),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

/// Parses one request line. Failures come back as ready-made responses.
pub fn parse_request(line: &str) -> Result<Request, Response> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| Response::failure(None, "malformed_request", format!("not JSON: {e}")))?;
    let id = value.get("id").and_then(Value::as_u64);
    serde_json::from_value::<Request>(value)
        .map_err(|e| Response::failure(id, "malformed_request", e.to_string()))
}

/// Handles one raw line end to end.
pub fn handle_line(ctrl: &mut Controller, line: &str) -> Response {
    match parse_request(line) {
        Ok(req) => dispatch(ctrl, &req),
        Err(resp) => resp,
    }
}

/// Executes one request. A failed request leaves the controller exactly as
/// it was, including the RNG position.
pub fn dispatch(ctrl: &mut Controller, req: &Request) -> Response {
    let snapshot = ctrl.clone();
    let result = execute(ctrl, &req.op, &req.params);
    if result.is_err() {
        *ctrl = snapshot;
    }
    match result {
        Ok(payload) => Response::success(req.id, payload),
        Err(OpError::UnknownOp) => Response::failure(
            Some(req.id),
            "unknown_op",
            format!("unknown op '{}'", req.op),
        ),
        Err(OpError::Controller(e)) => Response::failure(Some(req.id), e.code(), e.to_string()),
    }
}

enum OpError {
    UnknownOp,
    Controller(ControllerError),
}

impl From<ControllerError> for OpError {
    fn from(e: ControllerError) -> Self {
        Self::Controller(e)
    }
}

fn params<T: DeserializeOwned>(v: &Value) -> Result<T, ControllerError> {
    let v = if v.is_null() { json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| ControllerError::InvalidParams(e.to_string()))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload serializes")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigureParams {
    config: BoardConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadCalibrationParams {
    table: CalibrationTable,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CellParams {
    row: usize,
    col: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WriteParams {
    row: usize,
    col: usize,
    target: WriteTarget,
    #[serde(default)]
    max_pulses: Option<usize>,
    #[serde(default)]
    single_shot: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReadParams {
    row: usize,
    col: usize,
    #[serde(default)]
    n_samples: Option<usize>,
    #[serde(default = "default_true")]
    gate_on: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MvmParams {
    #[serde(default)]
    inputs: Option<Vec<f64>>,
    #[serde(default)]
    codes: Option<Vec<u64>>,
    #[serde(default)]
    cols: Option<Vec<usize>>,
    #[serde(default)]
    n_samples: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NorParams {
    row: usize,
    in_cols: Vec<usize>,
    out_col: usize,
    #[serde(default)]
    v0: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ForceParams {
    row: usize,
    col: usize,
    x: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SneakParams {
    row: usize,
    col: usize,
    #[serde(default)]
    v_read: Option<f64>,
}

fn execute(ctrl: &mut Controller, op: &str, raw: &Value) -> Result<Value, OpError> {
    let payload = match op {
        "ping" => {
            params::<Empty>(raw)?;
            json!({"pong": true, "protocol_version": PROTOCOL_VERSION})
        }
        "get_config" => {
            params::<Empty>(raw)?;
            to_value(ctrl.config())
        }
        "configure" => {
            let p: ConfigureParams = params(raw)?;
            *ctrl = Controller::new(p.config)?;
            json!({"configured": true})
        }
        "calibrate" => {
            params::<Empty>(raw)?;
            to_value(ctrl.calibrate()?)
        }
        "get_calibration" => {
            params::<Empty>(raw)?;
            to_value(ctrl.calibration().ok_or(ControllerError::NotCalibrated)?)
        }
        "load_calibration" => {
            let p: LoadCalibrationParams = params(raw)?;
            ctrl.load_calibration(p.table)?;
            json!({"loaded": true})
        }
        "write_cell" => {
            let p: WriteParams = params(raw)?;
            let opts = WriteOptions {
                max_pulses: p.max_pulses,
                single_shot: p.single_shot,
            };
            to_value(&ctrl.write_cell(p.row, p.col, p.target, opts)?)
        }
        "read_cell" => {
            let p: ReadParams = params(raw)?;
            let opts = ReadOptions {
                n_samples: p.n_samples,
                gate_on: p.gate_on,
            };
            to_value(&ctrl.read_cell(p.row, p.col, opts)?)
        }
        "mvm" => {
            let p: MvmParams = params(raw)?;
            let input = match (p.inputs, p.codes) {
                (Some(v), None) => MvmInput::Volts(v),
                (None, Some(c)) => MvmInput::Codes(c),
                _ => {
                    return Err(ControllerError::InvalidParams(
                        "give exactly one of 'inputs' or 'codes'".into(),
                    )
                    .into())
                }
            };
            to_value(&ctrl.mvm(&input, p.cols.as_deref(), p.n_samples)?)
        }
        "magic_nor" => {
            let p: NorParams = params(raw)?;
            to_value(&ctrl.magic_nor(p.row, &p.in_cols, p.out_col, p.v0)?)
        }
        "cell_state" => {
            let p: CellParams = params(raw)?;
            let x = ctrl.cell_state(p.row, p.col)?;
            let r = ctrl.array().cell(p.row, p.col).resistance();
            json!({"x": x, "resistance_ohm": r})
        }
        "force_state" => {
            let p: ForceParams = params(raw)?;
            ctrl.force_state(p.row, p.col, p.x)?;
            json!({"x": ctrl.cell_state(p.row, p.col)?})
        }
        "sneak_ratio" => {
            let p: SneakParams = params(raw)?;
            json!({"ratio": ctrl.sneak_ratio(p.row, p.col, p.v_read)?})
        }
        "experiment" => {
            let spec: ExperimentSpec = params(raw)?;
            to_value(&harness::run(ctrl.config(), &spec)?)
        }
        _ => return Err(OpError::UnknownOp),
    };
    Ok(payload)
}
