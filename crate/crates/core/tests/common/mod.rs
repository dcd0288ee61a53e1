//! Dense modified-nodal-analysis reference solver for small crossbars.
//!
//! Built from the array description only: every resistor is stamped as a
//! conductance, every zero-ohm link and every driven rail as a voltage
//! source, and the full system is solved by Gaussian elimination with
//! partial pivoting. Nodes with no path to ground are dropped first.

#![allow(dead_code)]

use nbb_core::crossbar::{CrossbarArray, Rail, RailDrive, Topology};
use nbb_core::device::{DeviceParams, MemristorCell};
use rand::Rng;

pub struct OracleSolution {
    pub row_currents: Vec<f64>,
    pub col_currents: Vec<f64>,
    /// (row-side, column-side) voltages per cell, row-major.
    pub cell_nodes: Vec<(Option<f64>, Option<f64>)>,
}

enum Element {
    Resistor(usize, usize, f64),
    /// `v(a) - v(b) = volts`
    Source(usize, usize, f64),
}

const GND: usize = 0;

pub fn dense_solve(a: &CrossbarArray, drive: &RailDrive) -> OracleSolution {
    let (rows, cols) = (a.rows(), a.cols());
    // Node 0 is ground.
    let mut next = 1;
    let mut fresh = || {
        next += 1;
        next - 1
    };
    let row_side: Vec<Vec<usize>> = (0..rows).map(|_| (0..cols).map(|_| fresh()).collect()).collect();
    let col_side: Vec<Vec<usize>> = (0..rows).map(|_| (0..cols).map(|_| fresh()).collect()).collect();
    let entry: Vec<usize> = (0..rows).map(|_| fresh()).collect();
    let exit: Vec<usize> = (0..cols).map(|_| fresh()).collect();

    let mut elems = Vec::new();
    let wire = |elems: &mut Vec<Element>, x: usize, y: usize, r: f64| {
        if r == 0.0 {
            elems.push(Element::Source(x, y, 0.0));
        } else {
            elems.push(Element::Resistor(x, y, r));
        }
    };
    let rw = a.r_wire_segment();
    for i in 0..rows {
        wire(&mut elems, entry[i], row_side[i][0], rw);
        for j in 1..cols {
            wire(&mut elems, row_side[i][j - 1], row_side[i][j], rw);
        }
    }
    for j in 0..cols {
        wire(&mut elems, col_side[rows - 1][j], exit[j], rw);
        for i in 1..rows {
            wire(&mut elems, col_side[i - 1][j], col_side[i][j], rw);
        }
    }
    for i in 0..rows {
        for j in 0..cols {
            let r_mem = a.cell(i, j).resistance();
            let r = match a.topology() {
                Topology::Passive1R => Some(r_mem),
                Topology::Active1T1R if a.gate(i, j) => Some(r_mem + a.r_transistor_on()),
                Topology::Active1T1R => None,
            };
            if let Some(r) = r {
                elems.push(Element::Resistor(row_side[i][j], col_side[i][j], r));
            }
        }
    }
    // Each non-floating rail: ideal source to ground, then the path resistance.
    let mut row_src = vec![None; rows];
    let mut col_src = vec![None; cols];
    let rs = drive.source_resistance_ohm;
    for (i, rail) in drive.rows.iter().enumerate() {
        let v = match *rail {
            Rail::Floating => continue,
            Rail::Driven(v) => v,
            Rail::VirtualGround => 0.0,
        };
        let s = fresh();
        row_src[i] = Some(elems.len());
        elems.push(Element::Source(s, GND, v));
        wire(&mut elems, s, entry[i], rs);
    }
    for (j, rail) in drive.cols.iter().enumerate() {
        let v = match *rail {
            Rail::Floating => continue,
            Rail::Driven(v) => v,
            Rail::VirtualGround => 0.0,
        };
        let s = fresh();
        col_src[j] = Some(elems.len());
        elems.push(Element::Source(s, GND, v));
        wire(&mut elems, s, exit[j], rs);
    }
    let n_nodes = next;

    // Breadth-first search from ground through every element.
    let mut adj = vec![Vec::new(); n_nodes];
    for e in &elems {
        let (x, y) = match *e {
            Element::Resistor(x, y, _) | Element::Source(x, y, _) => (x, y),
        };
        adj[x].push(y);
        adj[y].push(x);
    }
    let mut live = vec![false; n_nodes];
    live[GND] = true;
    let mut queue = std::collections::VecDeque::from([GND]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !live[w] {
                live[w] = true;
                queue.push_back(w);
            }
        }
    }
    let mut index = vec![usize::MAX; n_nodes];
    let mut nv = 0;
    for v in 1..n_nodes {
        if live[v] {
            index[v] = nv;
            nv += 1;
        }
    }
    let live_sources: Vec<usize> = elems
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e, Element::Source(x, _, _) if live[*x]))
        .map(|(k, _)| k)
        .collect();
    let n = nv + live_sources.len();
    let mut m = vec![vec![0.0f64; n + 1]; n];
    let idx = |v: usize| (v != GND).then(|| index[v]);
    for e in &elems {
        if let Element::Resistor(x, y, r) = *e {
            if !live[x] {
                continue;
            }
            let g = 1.0 / r;
            let (ix, iy) = (idx(x), idx(y));
            if let Some(p) = ix {
                m[p][p] += g;
            }
            if let Some(q) = iy {
                m[q][q] += g;
            }
            if let (Some(p), Some(q)) = (ix, iy) {
                m[p][q] -= g;
                m[q][p] -= g;
            }
        }
    }
    for (k, &e) in live_sources.iter().enumerate() {
        let Element::Source(x, y, volts) = elems[e] else { unreachable!() };
        let row = nv + k;
        // Branch unknown: current leaving node x into the source.
        if let Some(p) = idx(x) {
            m[p][row] += 1.0;
            m[row][p] += 1.0;
        }
        if let Some(q) = idx(y) {
            m[q][row] -= 1.0;
            m[row][q] -= 1.0;
        }
        m[row][n] = volts;
    }
    let x = gauss(m);
    let volt = |v: usize| -> Option<f64> {
        if v == GND {
            Some(0.0)
        } else if live[v] {
            Some(x[index[v]])
        } else {
            None
        }
    };
    let source_current = |e: usize| -> f64 {
        let k = live_sources.iter().position(|&s| s == e).expect("live source");
        -x[nv + k]
    };
    OracleSolution {
        row_currents: row_src.iter().map(|s| s.map_or(0.0, source_current)).collect(),
        col_currents: col_src.iter().map(|s| s.map_or(0.0, |e| -source_current(e))).collect(),
        cell_nodes: (0..rows * cols)
            .map(|k| (volt(row_side[k / cols][k % cols]), volt(col_side[k / cols][k % cols])))
            .collect(),
    }
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let n = m.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .unwrap();
        assert!(m[p][c].abs() > 1e-300, "singular oracle system");
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            if f != 0.0 {
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

/// Below this terminal current scale, deviations are judged in absolute
/// terms (1e-9 of a microamp), so round-off on a dead network is not amplified.
pub const CURRENT_FLOOR_A: f64 = 1e-6;

/// Largest terminal-current deviation relative to the largest terminal current.
pub fn max_relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(CURRENT_FLOOR_A, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Random small array (mixed topology, random wire, selector and source
/// resistance, random states and gates) with a random drive that has at
/// least one non-floating rail.
pub fn random_case<R: Rng>(rng: &mut R) -> (CrossbarArray, RailDrive) {
    let rows = rng.random_range(1..=8);
    let cols = rng.random_range(1..=8);
    let topology = if rng.random_bool(0.5) {
        Topology::Passive1R
    } else {
        Topology::Active1T1R
    };
    let params = DeviceParams::default().noiseless();
    let cells = (0..rows * cols)
        .map(|_| MemristorCell::with_state(params, rng.random::<f64>()))
        .collect();
    let r_wire = if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..100.0) };
    let mut array = CrossbarArray::from_cells(rows, cols, topology, cells)
        .unwrap()
        .with_wire_resistance(r_wire)
        .unwrap()
        .with_transistor_on_resistance(rng.random_range(0.0..1000.0))
        .unwrap();
    for i in 0..rows {
        for j in 0..cols {
            array.set_gate(i, j, rng.random_bool(0.7));
        }
    }
    let rail = |rng: &mut R| match rng.random_range(0..10) {
        0..=2 => Rail::Floating,
        3..=7 => Rail::Driven(rng.random_range(-1.0..1.0)),
        _ => Rail::VirtualGround,
    };
    let mut drive = RailDrive {
        rows: (0..rows).map(|_| rail(rng)).collect(),
        cols: (0..cols).map(|_| rail(rng)).collect(),
        source_resistance_ohm: if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..100.0) },
    };
    if drive.rows.iter().chain(&drive.cols).all(|r| *r == Rail::Floating) {
        drive.rows[0] = Rail::Driven(0.5);
    }
    (array, drive)
}

/// Compares the production solver with the oracle. Returns (relative current
/// deviation, relative conservation residual, max node-voltage deviation).
pub fn compare(array: &CrossbarArray, drive: &RailDrive) -> (f64, f64, f64) {
    let sol = array.solve_nodal(drive).expect("solvable case");
    let oracle = dense_solve(array, drive);
    let ours: Vec<f64> = sol.row_currents.iter().chain(&sol.col_currents).copied().collect();
    let theirs: Vec<f64> = oracle.row_currents.iter().chain(&oracle.col_currents).copied().collect();
    let dev = max_relative_deviation(&ours, &theirs);
    let abs = sol.injected_abs_sum();
    let conservation = sol.injected_sum().abs() / abs.max(CURRENT_FLOOR_A);
    let mut v_dev = 0.0f64;
    for (k, &(vr, vc)) in oracle.cell_nodes.iter().enumerate() {
        let pairs = [(sol.row_node_voltages[k], vr), (sol.col_node_voltages[k], vc)];
        for (a, b) in pairs {
            match (a, b) {
                (Some(a), Some(b)) => v_dev = v_dev.max((a - b).abs()),
                (None, None) => {}
                _ => v_dev = f64::INFINITY,
            }
        }
    }
    (dev, conservation, v_dev)
}
