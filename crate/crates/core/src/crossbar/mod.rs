//! Resistive-network model of passive (1R) and active (1T1R) crossbars.
//!
//! Every cell has a row-side node and a column-side node. Adjacent nodes on
//! the same wire are joined by one wire segment. Rows enter from the west
//! edge through an entry node, columns leave at the south edge through an
//! exit node, so cell `(i, j)` sits behind `j + 1` row segments and
//! `rows - i` column segments.

pub mod solver;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{sample_device, DeviceError, DeviceParams, MemristorCell};
use solver::SymmetricStamps;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrossbarError {
    #[error("network is not uniquely solvable: {0}")]
    SingularNetwork(String),
    #[error("invalid drive: {0}")]
    InvalidDrive(String),
    #[error("cell ({row}, {col}) outside {rows}x{cols} array")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid array: {0}")]
    InvalidArray(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    #[serde(rename = "passive_1r")]
    Passive1R,
    #[serde(rename = "active_1t1r")]
    Active1T1R,
}

/// Terminal condition of one row or column line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rail {
    Floating,
    Driven(f64),
    /// Held at 0 V by a TIA input; the rail current is what gets measured.
    VirtualGround,
}

impl Rail {
    pub fn potential(&self) -> Option<f64> {
        match *self {
            Rail::Floating => None,
            Rail::Driven(v) => Some(v),
            Rail::VirtualGround => Some(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RailDrive {
    pub rows: Vec<Rail>,
    pub cols: Vec<Rail>,
    /// Series resistance between each non-floating rail's source and its
    /// entry node (routing path through the interconnection matrix).
    pub source_resistance_ohm: f64,
}

impl RailDrive {
    pub fn floating(rows: usize, cols: usize) -> Self {
        Self {
            rows: vec![Rail::Floating; rows],
            cols: vec![Rail::Floating; cols],
            source_resistance_ohm: 0.0,
        }
    }

    /// One row driven at `v`, one column at virtual ground, rest floating.
    pub fn single_cell(rows: usize, cols: usize, row: usize, col: usize, v: f64) -> Self {
        let mut d = Self::floating(rows, cols);
        d.rows[row] = Rail::Driven(v);
        d.cols[col] = Rail::VirtualGround;
        d
    }

    pub fn with_source_resistance(mut self, r: f64) -> Self {
        self.source_resistance_ohm = r;
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |r: &Rail| match *r {
            Rail::Driven(v) => Rail::Driven(v * factor),
            other => other,
        };
        Self {
            rows: self.rows.iter().map(scale).collect(),
            cols: self.cols.iter().map(scale).collect(),
            source_resistance_ohm: self.source_resistance_ohm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarArray {
    rows: usize,
    cols: usize,
    topology: Topology,
    cells: Vec<MemristorCell>,
    r_wire_segment: f64,
    r_transistor_on: f64,
    gate_mask: Vec<bool>,
}

impl CrossbarArray {
    pub fn uniform(
        rows: usize,
        cols: usize,
        topology: Topology,
        cell: MemristorCell,
    ) -> Result<Self, CrossbarError> {
        Self::from_cells(rows, cols, topology, vec![cell; rows * cols])
    }

    pub fn from_cells(
        rows: usize,
        cols: usize,
        topology: Topology,
        cells: Vec<MemristorCell>,
    ) -> Result<Self, CrossbarError> {
        if rows == 0 || cols == 0 {
            return Err(CrossbarError::InvalidArray(
                "rows and cols must be >= 1".into(),
            ));
        }
        if cells.len() != rows * cols {
            return Err(CrossbarError::InvalidArray(format!(
                "expected {} cells, got {}",
                rows * cols,
                cells.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            topology,
            cells,
            r_wire_segment: 1.0,
            r_transistor_on: 500.0,
            gate_mask: vec![true; rows * cols],
        })
    }

    /// Array whose cells are independent device-to-device draws.
    pub fn sampled<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        topology: Topology,
        params: &DeviceParams,
        rng: &mut R,
    ) -> Result<Self, CrossbarError> {
        let cells = (0..rows * cols)
            .map(|_| sample_device(params, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_cells(rows, cols, topology, cells)
    }

    pub fn with_wire_resistance(mut self, r: f64) -> Result<Self, CrossbarError> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(CrossbarError::InvalidArray(format!("wire resistance {r}")));
        }
        self.r_wire_segment = r;
        Ok(self)
    }

    pub fn with_transistor_on_resistance(mut self, r: f64) -> Result<Self, CrossbarError> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(CrossbarError::InvalidArray(format!(
                "selector resistance {r}"
            )));
        }
        self.r_transistor_on = r;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn r_wire_segment(&self) -> f64 {
        self.r_wire_segment
    }

    pub fn r_transistor_on(&self) -> f64 {
        self.r_transistor_on
    }

    pub fn check(&self, row: usize, col: usize) -> Result<(), CrossbarError> {
        if row < self.rows && col < self.cols {
            Ok(())
        } else {
            Err(CrossbarError::OutOfBounds {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    fn idx(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn cell(&self, row: usize, col: usize) -> &MemristorCell {
        &self.cells[self.idx(row, col)]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut MemristorCell {
        let i = self.idx(row, col);
        &mut self.cells[i]
    }

    pub fn cells(&self) -> &[MemristorCell] {
        &self.cells
    }

    pub fn states(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.state()).collect()
    }

    pub fn gate(&self, row: usize, col: usize) -> bool {
        match self.topology {
            Topology::Passive1R => true,
            Topology::Active1T1R => self.gate_mask[self.idx(row, col)],
        }
    }

    pub fn set_gate(&mut self, row: usize, col: usize, on: bool) {
        let i = self.idx(row, col);
        self.gate_mask[i] = on;
    }

    pub fn set_all_gates(&mut self, on: bool) {
        self.gate_mask.iter_mut().for_each(|g| *g = on);
    }

    /// Turns on exactly the listed selectors.
    pub fn select_only(&mut self, cells: &[(usize, usize)]) {
        self.set_all_gates(false);
        for &(r, c) in cells {
            self.set_gate(r, c, true);
        }
    }

    /// Conductance of the cell branch including the selector, 0 when gated off.
    pub fn branch_conductance(&self, row: usize, col: usize) -> f64 {
        self.branch_conductance_with(row, col, self.cell(row, col).conductance())
    }

    fn branch_conductance_with(&self, row: usize, col: usize, g_cell: f64) -> f64 {
        match self.topology {
            Topology::Passive1R => g_cell,
            Topology::Active1T1R => {
                if !self.gate_mask[self.idx(row, col)] {
                    0.0
                } else if self.r_transistor_on == 0.0 {
                    g_cell
                } else {
                    1.0 / (1.0 / g_cell + self.r_transistor_on)
                }
            }
        }
    }

    /// Series resistance between the rail terminals and cell `(row, col)`
    /// along its own row and column wires, selector included.
    pub fn access_resistance(&self, row: usize, col: usize) -> f64 {
        let segments = (col + 1) + (self.rows - row);
        let selector = match self.topology {
            Topology::Passive1R => 0.0,
            Topology::Active1T1R => self.r_transistor_on,
        };
        segments as f64 * self.r_wire_segment + selector
    }

    fn validate_drive(&self, drive: &RailDrive) -> Result<(), CrossbarError> {
        if drive.rows.len() != self.rows || drive.cols.len() != self.cols {
            return Err(CrossbarError::InvalidDrive(format!(
                "drive is {}x{}, array is {}x{}",
                drive.rows.len(),
                drive.cols.len(),
                self.rows,
                self.cols
            )));
        }
        if !(drive.source_resistance_ohm >= 0.0 && drive.source_resistance_ohm.is_finite()) {
            return Err(CrossbarError::InvalidDrive("bad source resistance".into()));
        }
        let finite = drive
            .rows
            .iter()
            .chain(&drive.cols)
            .all(|r| r.potential().is_none_or(f64::is_finite));
        if !finite {
            return Err(CrossbarError::InvalidDrive("non-finite potential".into()));
        }
        Ok(())
    }

    /// Ideal-wire fast path: column currents are plain dot products.
    pub fn solve_ideal(&self, drive: &RailDrive) -> Result<Vec<f64>, CrossbarError> {
        self.validate_drive(drive)?;
        if let Some(j) = drive
            .cols
            .iter()
            .position(|c| matches!(c, Rail::Driven(v) if *v != 0.0))
        {
            return Err(CrossbarError::InvalidDrive(format!(
                "column {j} driven to a non-zero potential; ideal solve needs virtual ground or floating columns"
            )));
        }
        Ok((0..self.cols)
            .map(|j| match drive.cols[j] {
                Rail::Floating => 0.0,
                _ => (0..self.rows)
                    .filter_map(|i| drive.rows[i].potential().map(|v| (i, v)))
                    .map(|(i, v)| self.branch_conductance(i, j) * v)
                    .sum(),
            })
            .collect())
    }

    /// Full DC operating point with wire and source resistance.
    pub fn solve_nodal(&self, drive: &RailDrive) -> Result<NodalSolution, CrossbarError> {
        self.validate_drive(drive)?;
        Network::build(self, drive).solve(self, drive)
    }

    /// Fraction of the measured column current that actually flows through
    /// the target cell when its row is driven and every other line floats.
    pub fn sneak_current_ratio(
        &self,
        row: usize,
        col: usize,
        v_read: f64,
    ) -> Result<f64, CrossbarError> {
        self.check(row, col)?;
        let drive = RailDrive::single_cell(self.rows, self.cols, row, col, v_read);
        let sol = self.solve_nodal(&drive)?;
        let total = sol.col_currents[col];
        if total == 0.0 {
            return Err(CrossbarError::SingularNetwork(
                "no current reaches the sensed column".into(),
            ));
        }
        Ok(sol.cell_current(self, row, col) / total)
    }

    /// Applies the voltages of a solved operating point to every conducting
    /// cell for `width` seconds. Cells are visited in row-major order.
    pub fn apply_operating_point<R: Rng + ?Sized>(
        &mut self,
        sol: &NodalSolution,
        width: f64,
        rng: &mut R,
    ) {
        for i in 0..self.rows {
            for j in 0..self.cols {
                if let Some(v) = sol.memristor_voltage(self, i, j) {
                    if v != 0.0 {
                        self.cell_mut(i, j).apply_pulse(v, width, rng);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodalSolution {
    rows: usize,
    cols: usize,
    /// Current injected into the array at each row terminal.
    pub row_currents: Vec<f64>,
    /// Current leaving the array at each column terminal (into the TIA for a
    /// virtual-ground column).
    pub col_currents: Vec<f64>,
    /// Row-side node voltages, row-major; `None` for nodes on an island with
    /// no connection to any driven rail.
    pub row_node_voltages: Vec<Option<f64>>,
    pub col_node_voltages: Vec<Option<f64>>,
}

impl NodalSolution {
    pub fn cell_voltage(&self, row: usize, col: usize) -> Option<f64> {
        let k = row * self.cols + col;
        Some(self.row_node_voltages[k]? - self.col_node_voltages[k]?)
    }

    pub fn cell_current(&self, array: &CrossbarArray, row: usize, col: usize) -> f64 {
        self.cell_voltage(row, col)
            .map_or(0.0, |v| v * array.branch_conductance(row, col))
    }

    /// Voltage across the memristor itself (selector drop removed), or
    /// `None` when the branch does not conduct.
    pub fn memristor_voltage(&self, array: &CrossbarArray, row: usize, col: usize) -> Option<f64> {
        let v = self.cell_voltage(row, col)?;
        if !array.gate(row, col) {
            return None;
        }
        match array.topology {
            Topology::Passive1R => Some(v),
            Topology::Active1T1R => {
                let r_m = array.cell(row, col).resistance();
                Some(v * r_m / (r_m + array.r_transistor_on))
            }
        }
    }

    /// Net current injected by all rail sources; zero up to rounding.
    pub fn injected_sum(&self) -> f64 {
        self.row_currents.iter().sum::<f64>() - self.col_currents.iter().sum::<f64>()
    }

    pub fn injected_abs_sum(&self) -> f64 {
        self.row_currents.iter().map(|c| c.abs()).sum::<f64>()
            + self.col_currents.iter().map(|c| c.abs()).sum::<f64>()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Physical node numbering plus the edge list of one (array, drive) pair.
/// Only wires that can carry current from a driven rail get nodes.
struct Network {
    n_nodes: usize,
    /// First node of each included row wire: `cols` cell nodes, then the
    /// entry node.
    row_base: Vec<Option<usize>>,
    /// First node of each included column wire: `rows` cell nodes, then the
    /// exit node.
    col_base: Vec<Option<usize>>,
    /// Finite-resistance edges: (a, b, conductance).
    edges: Vec<(usize, usize, f64)>,
    /// Zero-resistance edges, merged before assembly.
    shorts: Vec<(usize, usize)>,
    /// (source node, potential) per non-floating rail, rows first.
    sources: Vec<(usize, f64)>,
    /// Source node of each row / column rail, if any.
    row_source: Vec<Option<usize>>,
    col_source: Vec<Option<usize>>,
}

impl Network {
    fn row_node(&self, i: usize, j: usize) -> Option<usize> {
        self.row_base[i].map(|b| b + j)
    }

    fn col_node(&self, i: usize, j: usize) -> Option<usize> {
        self.col_base[j].map(|b| b + i)
    }

    /// Wires connected to a driven rail through conducting cells.
    fn active_wires(a: &CrossbarArray, drive: &RailDrive) -> (Vec<bool>, Vec<bool>) {
        let mut rows: Vec<bool> = drive.rows.iter().map(|r| r.potential().is_some()).collect();
        let mut cols: Vec<bool> = drive.cols.iter().map(|r| r.potential().is_some()).collect();
        // Wire indices: rows 0..R, columns R..R+C.
        let mut stack: Vec<usize> = (0..a.rows)
            .filter(|&i| rows[i])
            .chain((0..a.cols).filter(|&j| cols[j]).map(|j| a.rows + j))
            .collect();
        while let Some(w) = stack.pop() {
            if w < a.rows {
                for j in 0..a.cols {
                    if !cols[j] && a.branch_conductance(w, j) > 0.0 {
                        cols[j] = true;
                        stack.push(a.rows + j);
                    }
                }
            } else {
                let j = w - a.rows;
                for i in 0..a.rows {
                    if !rows[i] && a.branch_conductance(i, j) > 0.0 {
                        rows[i] = true;
                        stack.push(i);
                    }
                }
            }
        }
        (rows, cols)
    }

    fn build(a: &CrossbarArray, drive: &RailDrive) -> Self {
        let (row_on, col_on) = Self::active_wires(a, drive);
        let mut n_nodes = 0;
        let row_base = row_on
            .iter()
            .map(|&on| {
                on.then(|| {
                    n_nodes += a.cols + 1;
                    n_nodes - a.cols - 1
                })
            })
            .collect();
        let col_base = col_on
            .iter()
            .map(|&on| {
                on.then(|| {
                    n_nodes += a.rows + 1;
                    n_nodes - a.rows - 1
                })
            })
            .collect();
        let mut net = Network {
            n_nodes,
            row_base,
            col_base,
            edges: Vec::new(),
            shorts: Vec::new(),
            sources: Vec::new(),
            row_source: vec![None; a.rows],
            col_source: vec![None; a.cols],
        };
        let r_wire = a.r_wire_segment;
        let link = |net: &mut Network, x: usize, y: usize, r: f64| {
            if r == 0.0 {
                net.shorts.push((x, y));
            } else {
                net.edges.push((x, y, 1.0 / r));
            }
        };
        for i in 0..a.rows {
            let Some(b) = net.row_base[i] else { continue };
            // Entry node sits west of the first cell.
            link(&mut net, b + a.cols, b, r_wire);
            for j in 0..a.cols - 1 {
                link(&mut net, b + j, b + j + 1, r_wire);
            }
        }
        for j in 0..a.cols {
            let Some(b) = net.col_base[j] else { continue };
            // Exit node sits south of the last cell.
            link(&mut net, b + a.rows - 1, b + a.rows, r_wire);
            for i in 0..a.rows - 1 {
                link(&mut net, b + i, b + i + 1, r_wire);
            }
        }
        for i in 0..a.rows {
            for j in 0..a.cols {
                if let (Some(x), Some(y)) = (net.row_node(i, j), net.col_node(i, j)) {
                    let g = a.branch_conductance(i, j);
                    if g > 0.0 {
                        net.edges.push((x, y, g));
                    }
                }
            }
        }
        let r_src = drive.source_resistance_ohm;
        for (i, rail) in drive.rows.iter().enumerate() {
            if let Some(v) = rail.potential() {
                let s = net.n_nodes;
                net.n_nodes += 1;
                net.sources.push((s, v));
                net.row_source[i] = Some(s);
                let entry = net.row_base[i].expect("driven row is active") + a.cols;
                link(&mut net, s, entry, r_src);
            }
        }
        for (j, rail) in drive.cols.iter().enumerate() {
            if let Some(v) = rail.potential() {
                let s = net.n_nodes;
                net.n_nodes += 1;
                net.sources.push((s, v));
                net.col_source[j] = Some(s);
                let exit = net.col_base[j].expect("driven column is active") + a.rows;
                link(&mut net, s, exit, r_src);
            }
        }
        net
    }

    fn solve(&self, a: &CrossbarArray, _drive: &RailDrive) -> Result<NodalSolution, CrossbarError> {
        if self.sources.is_empty() {
            return Err(CrossbarError::SingularNetwork(
                "every rail is floating".into(),
            ));
        }
        let n = self.n_nodes;
        let mut dsu = DisjointSet::new(n);
        for &(x, y) in &self.shorts {
            dsu.union(x, y);
        }
        let group: Vec<usize> = (0..n).map(|v| dsu.find(v)).collect();

        let mut fixed: Vec<Option<f64>> = vec![None; n];
        for &(s, v) in &self.sources {
            let g = group[s];
            match fixed[g] {
                Some(existing) if existing != v => {
                    return Err(CrossbarError::SingularNetwork(format!(
                        "sources at {existing} V and {v} V are shorted together"
                    )))
                }
                _ => fixed[g] = Some(v),
            }
        }

        // Groups reachable from a fixed potential through finite conductances.
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(x, y, _) in &self.edges {
            let (gx, gy) = (group[x], group[y]);
            if gx != gy {
                adj[gx].push(gy);
                adj[gy].push(gx);
            }
        }
        let mut referenced = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&g| fixed[g].is_some()).collect();
        for &g in &stack {
            referenced[g] = true;
        }
        while let Some(g) = stack.pop() {
            for &h in &adj[g] {
                if !referenced[h] {
                    referenced[h] = true;
                    stack.push(h);
                }
            }
        }

        let mut unknown = vec![usize::MAX; n];
        let mut count = 0usize;
        for g in 0..n {
            if group[g] == g && referenced[g] && fixed[g].is_none() {
                unknown[g] = count;
                count += 1;
            }
        }

        let mut stamps = SymmetricStamps::new(count);
        let mut rhs = vec![0.0; count];
        for &(x, y, cond) in &self.edges {
            let (gx, gy) = (group[x], group[y]);
            if gx == gy || !referenced[gx] {
                continue;
            }
            match (fixed[gx], fixed[gy]) {
                (None, None) => stamps.conductance(unknown[gx], unknown[gy], cond),
                (None, Some(v)) => {
                    stamps.add(unknown[gx], unknown[gx], cond);
                    rhs[unknown[gx]] += cond * v;
                }
                (Some(v), None) => {
                    stamps.add(unknown[gy], unknown[gy], cond);
                    rhs[unknown[gy]] += cond * v;
                }
                (Some(_), Some(_)) => {}
            }
        }
        let x = if count > 0 {
            stamps.solve(&rhs).map_err(|e| {
                CrossbarError::SingularNetwork(format!("factorization failed at node {}", e.row))
            })?
        } else {
            Vec::new()
        };

        let voltage = |node: usize| -> Option<f64> {
            let g = group[node];
            if !referenced[g] {
                None
            } else if let Some(v) = fixed[g] {
                Some(v)
            } else {
                Some(x[unknown[g]])
            }
        };

        // Current leaving each source group through finite edges.
        let mut outflow = vec![0.0; n];
        for &(p, q, cond) in &self.edges {
            let (gp, gq) = (group[p], group[q]);
            if gp == gq {
                continue;
            }
            if let (Some(vp), Some(vq)) = (voltage(p), voltage(q)) {
                let i = cond * (vp - vq);
                if fixed[gp].is_some() {
                    outflow[gp] += i;
                }
                if fixed[gq].is_some() {
                    outflow[gq] -= i;
                }
            }
        }

        let node_v = |node: Option<usize>| node.and_then(voltage);
        Ok(NodalSolution {
            rows: a.rows,
            cols: a.cols,
            row_currents: self
                .row_source
                .iter()
                .map(|s| s.map_or(0.0, |s| outflow[group[s]]))
                .collect(),
            col_currents: self
                .col_source
                .iter()
                .map(|s| s.map_or(0.0, |s| -outflow[group[s]]))
                .collect(),
            row_node_voltages: (0..a.rows * a.cols)
                .map(|k| node_v(self.row_node(k / a.cols, k % a.cols)))
                .collect(),
            col_node_voltages: (0..a.rows * a.cols)
                .map(|k| node_v(self.col_node(k / a.cols, k % a.cols)))
                .collect(),
        })
    }
}
