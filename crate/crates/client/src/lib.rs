//! Synchronous client for the controller's NDJSON wire protocol.
//!
//! A [`Session`] issues one request at a time over any [`Transport`] and
//! numbers requests from 1. The client does no measurement work of its own;
//! every number it returns comes from the server.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use nbb_core::controller::protocol::{handle_line, Response};
use nbb_core::controller::{
    MvmInput, MvmResult, NorOutcome, ReadOptions, WriteOptions, WriteOutcome, WriteTarget,
};
use nbb_core::harness::{ExperimentOutput, ExperimentSpec};
use nbb_core::signal_chain::MeasurementRecord;
use nbb_core::{BoardConfig, CalibrationTable, Controller};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {endpoint}: {reason}")]
    Connection { endpoint: String, reason: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{code}: {message}")]
    Remote { code: String, message: String },
    #[error("no response within {0:?}")]
    Timeout(Duration),
}

impl ClientError {
    /// Server error code for [`ClientError::Remote`].
    pub fn code(&self) -> Option<&str> {
        match self {
            Self::Remote { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// Moves one request line to the server and one response line back.
pub trait Transport {
    fn round_trip(&mut self, line: &str) -> Result<String, ClientError>;
}

/// Line transport over any reader/writer pair (sockets, child stdio).
pub struct LineTransport<R, W> {
    reader: R,
    writer: W,
    endpoint: String,
    timeout: Option<Duration>,
}

impl<R: BufRead, W: Write> LineTransport<R, W> {
    pub fn new(reader: R, writer: W, endpoint: impl Into<String>) -> Self {
        Self {
            reader,
            writer,
            endpoint: endpoint.into(),
            timeout: None,
        }
    }

    fn lost(&self, e: io::Error) -> ClientError {
        match (e.kind(), self.timeout) {
            (io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut, Some(t)) => {
                ClientError::Timeout(t)
            }
            _ => ClientError::Connection {
                endpoint: self.endpoint.clone(),
                reason: e.to_string(),
            },
        }
    }
}

impl<R: BufRead, W: Write> Transport for LineTransport<R, W> {
    fn round_trip(&mut self, line: &str) -> Result<String, ClientError> {
        let mut buf = line.as_bytes().to_vec();
        buf.push(b'\n');
        self.writer
            .write_all(&buf)
            .and_then(|_| self.writer.flush())
            .map_err(|e| self.lost(e))?;
        let mut resp = String::new();
        let n = self.reader.read_line(&mut resp).map_err(|e| self.lost(e))?;
        if n == 0 {
            return Err(ClientError::Connection {
                endpoint: self.endpoint.clone(),
                reason: "server closed the connection".into(),
            });
        }
        Ok(resp.trim_end().to_string())
    }
}

pub type TcpTransport = LineTransport<BufReader<TcpStream>, TcpStream>;

impl TcpTransport {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, ClientError> {
        let fail = |reason: String| ClientError::Connection {
            endpoint: endpoint.to_string(),
            reason,
        };
        let addrs: Vec<_> = endpoint
            .to_socket_addrs()
            .map_err(|e| fail(e.to_string()))?
            .collect();
        let mut last = "no addresses resolved".to_string();
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => {
                    stream
                        .set_read_timeout(Some(timeout))
                        .map_err(|e| fail(e.to_string()))?;
                    let reader = BufReader::new(stream.try_clone().map_err(|e| fail(e.to_string()))?);
                    let mut t = LineTransport::new(reader, stream, endpoint);
                    t.timeout = Some(timeout);
                    return Ok(t);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(fail(last))
    }
}

/// Runs requests against a controller in the same process.
pub struct InProcess {
    ctrl: Controller,
}

impl InProcess {
    pub fn new(ctrl: Controller) -> Self {
        Self { ctrl }
    }

    pub fn into_inner(self) -> Controller {
        self.ctrl
    }
}

impl Transport for InProcess {
    fn round_trip(&mut self, line: &str) -> Result<String, ClientError> {
        Ok(handle_line(&mut self.ctrl, line).to_line())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct CellState {
    pub x: f64,
    pub resistance_ohm: f64,
}

pub struct Session<T> {
    transport: T,
    next_id: u64,
    broken: bool,
}

impl Session<TcpTransport> {
    /// Connects and checks the link with a `ping`.
    pub fn connect(endpoint: &str) -> Result<Self, ClientError> {
        Self::connect_with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(endpoint: &str, timeout: Duration) -> Result<Self, ClientError> {
        let mut s = Session::new(TcpTransport::connect(endpoint, timeout)?);
        s.ping()?;
        Ok(s)
    }
}

impl<T: Transport> Session<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            next_id: 1,
            broken: false,
        }
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn into_transport(self) -> T {
        self.transport
    }

    /// Sends one request and returns its payload.
    ///
    /// After a timeout or a framing error the stream position is unknown, so
    /// the session refuses further calls.
    pub fn call(&mut self, op: &str, params: Value) -> Result<Value, ClientError> {
        if self.broken {
            return Err(ClientError::Protocol(
                "session unusable after an earlier transport failure".into(),
            ));
        }
        let id = self.next_id;
        self.next_id += 1;
        let line = json!({"id": id, "op": op, "params": params}).to_string();
        let raw = self.transport.round_trip(&line).inspect_err(|e| {
            if !matches!(e, ClientError::Remote { .. }) {
                self.broken = true;
            }
        })?;
        let resp: Response = serde_json::from_str(&raw).map_err(|e| {
            self.broken = true;
            ClientError::Protocol(format!("bad response line: {e}"))
        })?;
        if resp.id != Some(id) {
            self.broken = true;
            return Err(ClientError::Protocol(format!(
                "expected response id {id}, got {:?}",
                resp.id
            )));
        }
        if !resp.ok {
            return Err(ClientError::Remote {
                code: resp.error.unwrap_or_default(),
                message: resp.message.unwrap_or_default(),
            });
        }
        Ok(resp.payload.unwrap_or(Value::Null))
    }

    pub fn call_as<P: DeserializeOwned>(&mut self, op: &str, params: Value) -> Result<P, ClientError> {
        let payload = self.call(op, params)?;
        serde_json::from_value(payload)
            .map_err(|e| ClientError::Protocol(format!("unexpected {op} payload: {e}")))
    }

    pub fn ping(&mut self) -> Result<(), ClientError> {
        self.call("ping", json!({})).map(|_| ())
    }

    pub fn configure(&mut self, config: &BoardConfig) -> Result<(), ClientError> {
        self.call("configure", json!({ "config": config })).map(|_| ())
    }

    pub fn get_config(&mut self) -> Result<BoardConfig, ClientError> {
        self.call_as("get_config", json!({}))
    }

    pub fn calibrate(&mut self) -> Result<CalibrationTable, ClientError> {
        self.call_as("calibrate", json!({}))
    }

    pub fn get_calibration(&mut self) -> Result<CalibrationTable, ClientError> {
        self.call_as("get_calibration", json!({}))
    }

    pub fn load_calibration(&mut self, table: &CalibrationTable) -> Result<(), ClientError> {
        self.call("load_calibration", json!({ "table": table })).map(|_| ())
    }

    pub fn write_cell(
        &mut self,
        row: usize,
        col: usize,
        target: WriteTarget,
    ) -> Result<WriteOutcome, ClientError> {
        self.write_cell_with(row, col, target, WriteOptions::default())
    }

    pub fn write_cell_with(
        &mut self,
        row: usize,
        col: usize,
        target: WriteTarget,
        opts: WriteOptions,
    ) -> Result<WriteOutcome, ClientError> {
        let mut p = json!({"row": row, "col": col, "target": target, "single_shot": opts.single_shot});
        if let Some(n) = opts.max_pulses {
            p["max_pulses"] = json!(n);
        }
        self.call_as("write_cell", p)
    }

    pub fn read_cell(&mut self, row: usize, col: usize) -> Result<MeasurementRecord, ClientError> {
        self.read_cell_with(row, col, ReadOptions::default())
    }

    pub fn read_cell_with(
        &mut self,
        row: usize,
        col: usize,
        opts: ReadOptions,
    ) -> Result<MeasurementRecord, ClientError> {
        let mut p = json!({"row": row, "col": col, "gate_on": opts.gate_on});
        if let Some(n) = opts.n_samples {
            p["n_samples"] = json!(n);
        }
        self.call_as("read_cell", p)
    }

    /// `n` consecutive reads of one cell, resistances only.
    pub fn read_repeated(&mut self, row: usize, col: usize, n: usize) -> Result<Vec<f64>, ClientError> {
        (0..n)
            .map(|_| self.read_cell(row, col).map(|r| r.resistance_ohm))
            .collect()
    }

    pub fn mvm(&mut self, input: &MvmInput, cols: Option<&[usize]>) -> Result<MvmResult, ClientError> {
        let mut p = match input {
            MvmInput::Volts(v) => json!({ "inputs": v }),
            MvmInput::Codes(c) => json!({ "codes": c }),
        };
        if let Some(c) = cols {
            p["cols"] = json!(c);
        }
        self.call_as("mvm", p)
    }

    pub fn magic_nor(
        &mut self,
        row: usize,
        in_cols: &[usize],
        out_col: usize,
    ) -> Result<NorOutcome, ClientError> {
        self.call_as(
            "magic_nor",
            json!({"row": row, "in_cols": in_cols, "out_col": out_col}),
        )
    }

    pub fn cell_state(&mut self, row: usize, col: usize) -> Result<CellState, ClientError> {
        self.call_as("cell_state", json!({"row": row, "col": col}))
    }

    pub fn force_state(&mut self, row: usize, col: usize, x: f64) -> Result<(), ClientError> {
        self.call("force_state", json!({"row": row, "col": col, "x": x}))
            .map(|_| ())
    }

    pub fn experiment(&mut self, spec: &ExperimentSpec) -> Result<ExperimentOutput, ClientError> {
        let params = serde_json::to_value(spec)
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        self.call_as("experiment", params)
    }
}
