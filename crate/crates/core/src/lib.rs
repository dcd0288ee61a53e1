//! Behavioral twin of a memristive-crossbar instrumentation board.
//!
//! Layers, bottom up: [`device`] (single memristor), [`crossbar`] (array
//! and DC nodal solver), [`signal_chain`] (DAC, TIA, ADC, calibration),
//! [`controller`] (firmware operations and wire protocol) and [`harness`]
//! (experiments and CSV reports).

pub mod config;
pub mod controller;
pub mod crossbar;
pub mod device;
pub mod harness;
pub mod signal_chain;

pub use config::{ArrayConfig, BoardConfig, ControllerSettings};
pub use controller::{Controller, ControllerError};
pub use crossbar::{CrossbarArray, Topology};
pub use device::{DeviceParams, MemristorCell};
pub use signal_chain::{CalibrationTable, SignalChain};
