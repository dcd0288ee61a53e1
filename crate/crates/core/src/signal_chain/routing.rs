//! Interconnection matrix: which board line connects to which source.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SignalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSource {
    /// One of the independent DAC potentials (P1..Pn, zero-based here).
    Potential(u8),
    /// External measurement/supply line.
    Ext,
    Gnd,
    /// Input of a TIA channel.
    Sense(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    pub total_lines: usize,
    /// Series resistance of one routed path through the matrix.
    pub r_path_ohm: f64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            total_lines: 68,
            r_path_ohm: 60.0,
        }
    }
}

/// Line assignment for one operation. Unassigned lines are left open.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutingMatrix {
    total_lines: usize,
    potentials: usize,
    tia_channels: usize,
    assignment: BTreeMap<usize, LineSource>,
}

impl RoutingMatrix {
    pub fn new(total_lines: usize, potentials: usize, tia_channels: usize) -> Self {
        Self {
            total_lines,
            potentials,
            tia_channels,
            assignment: BTreeMap::new(),
        }
    }

    pub fn assign(&mut self, line: usize, source: LineSource) -> Result<(), SignalError> {
        match source {
            LineSource::Potential(p) if p as usize >= self.potentials => {
                return Err(SignalError::Routing(format!(
                    "potential P{} requested, board has {}",
                    p + 1,
                    self.potentials
                )))
            }
            LineSource::Sense(t) => {
                if t as usize >= self.tia_channels {
                    return Err(SignalError::Routing(format!(
                        "TIA channel {t} requested, board has {}",
                        self.tia_channels
                    )));
                }
                if self
                    .assignment
                    .iter()
                    .any(|(&l, &s)| l != line && s == LineSource::Sense(t))
                {
                    return Err(SignalError::Routing(format!(
                        "TIA channel {t} already senses another line"
                    )));
                }
            }
            _ => {}
        }
        if !self.assignment.contains_key(&line) && self.assignment.len() >= self.total_lines {
            return Err(SignalError::Routing(format!(
                "operation needs more than {} simultaneously controlled lines",
                self.total_lines
            )));
        }
        self.assignment.insert(line, source);
        Ok(())
    }

    pub fn source(&self, line: usize) -> Option<LineSource> {
        self.assignment.get(&line).copied()
    }

    pub fn lines_in_use(&self) -> usize {
        self.assignment.len()
    }

    pub fn sense_lines(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.assignment.iter().filter_map(|(&l, &s)| match s {
            LineSource::Sense(t) => Some((l, t)),
            _ => None,
        })
    }
}
