//! Sparse symmetric positive-definite solver.
//!
//! Reverse Cuthill-McKee ordering followed by an envelope (profile) Cholesky
//! factorization. Crossbar conductance matrices are two coupled wire lattices,
//! so RCM keeps the profile close to twice the short array dimension.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    /// Row (in the caller's numbering) where the pivot vanished.
    pub row: usize,
}

/// Symmetric matrix assembled from stamps. Only one triangle needs to be
/// stamped; `(i, j)` and `(j, i)` are treated as the same entry.
#[derive(Debug, Clone, Default)]
pub struct SymmetricStamps {
    n: usize,
    diag: Vec<f64>,
    off: Vec<(usize, usize, f64)>,
}

impl SymmetricStamps {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            diag: vec![0.0; n],
            off: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        if i == j {
            self.diag[i] += value;
        } else {
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            self.off.push((hi, lo, value));
        }
    }

    /// Stamps a conductance between two unknown nodes.
    pub fn conductance(&mut self, a: usize, b: usize, g: f64) {
        self.add(a, a, g);
        self.add(b, b, g);
        self.add(a, b, -g);
    }

    fn merged_off(&self) -> Vec<(usize, usize, f64)> {
        let mut off = self.off.clone();
        off.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(off.len());
        for (i, j, v) in off {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged
    }

    /// Factorizes and solves `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, NotPositiveDefinite> {
        assert_eq!(rhs.len(), self.n);
        EnvelopeCholesky::factor(self)?.solve(rhs)
    }
}

#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    /// perm[new] = old
    perm: Vec<usize>,
    /// First stored column of each row, in permuted numbering.
    first: Vec<usize>,
    /// Start of each row inside `values`.
    start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &SymmetricStamps) -> Result<Self, NotPositiveDefinite> {
        let n = a.n;
        let off = a.merged_off();

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j, v) in &off {
            if v != 0.0 {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j, v) in &off {
            if v == 0.0 {
                continue;
            }
            let (pi, pj) = (inv[i], inv[j]);
            let (hi, lo) = if pi > pj { (pi, pj) } else { (pj, pi) };
            first[hi] = first[hi].min(lo);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for (row, &f) in first.iter().enumerate() {
            start.push(total);
            total += row - f + 1;
        }
        start.push(total);

        let mut values = vec![0.0; total];
        for (old, &d) in a.diag.iter().enumerate() {
            let r = inv[old];
            values[start[r] + r - first[r]] = d;
        }
        for &(i, j, v) in &off {
            let (pi, pj) = (inv[i], inv[j]);
            let (hi, lo) = if pi > pj { (pi, pj) } else { (pj, pi) };
            values[start[hi] + lo - first[hi]] += v;
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = start[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = start[j];
                let mut s = values[row_i + j - fi];
                for k in k0..j {
                    s -= values[row_i + k - fi] * values[row_j + k - fj];
                }
                let ljj = values[row_j + j - fj];
                values[row_i + j - fi] = s / ljj;
            }
            let diag_pos = row_i + i - fi;
            let a_ii = values[diag_pos];
            let mut d = a_ii;
            for k in fi..i {
                let l = values[row_i + k - fi];
                d -= l * l;
            }
            if !(d > a_ii.abs() * 1e-13) || !d.is_finite() {
                return Err(NotPositiveDefinite { row: perm[i] });
            }
            values[diag_pos] = d.sqrt();
        }

        Ok(Self {
            perm,
            first,
            start,
            values,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, NotPositiveDefinite> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = self.start[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[row + k - fi] * y[k];
            }
            y[i] = s / self.values[row + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.start[i];
            let xi = y[i] / self.values[row + i - fi];
            y[i] = xi;
            for k in fi..i {
                y[k] -= self.values[row + k - fi] * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }
}

fn bfs_levels(adj: &[Vec<usize>], root: usize, seen: &mut [bool]) -> Vec<Vec<usize>> {
    let mut levels = vec![vec![root]];
    seen[root] = true;
    loop {
        let mut next = Vec::new();
        for &u in levels.last().unwrap() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }
    levels
}

/// George-Liu pseudo-peripheral node search within the component of `start`.
fn pseudo_peripheral(adj: &[Vec<usize>], start: usize, n: usize) -> usize {
    let mut root = start;
    let mut ecc = 0usize;
    for _ in 0..8 {
        let mut seen = vec![false; n];
        let levels = bfs_levels(adj, root, &mut seen);
        let depth = levels.len();
        if depth <= ecc {
            break;
        }
        ecc = depth;
        let last = levels.last().unwrap();
        let candidate = *last.iter().min_by_key(|&&v| (adj[v].len(), v)).unwrap();
        if candidate == root {
            break;
        }
        root = candidate;
    }
    root
}

pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    for seed in 0..n {
        if placed[seed] {
            continue;
        }
        let root = pseudo_peripheral(adj, seed, n);
        let mut queue = VecDeque::from([root]);
        placed[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !placed[v]).collect();
            nbrs.sort_unstable_by_key(|&v| (adj[v].len(), v));
            nbrs.dedup();
            for v in nbrs {
                if !placed[v] {
                    placed[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
                .unwrap();
            m.swap(c, p);
            x.swap(c, p);
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                for k in c..n {
                    m[r][k] -= f * m[c][k];
                }
                x[r] -= f * x[c];
            }
        }
        for c in (0..n).rev() {
            for k in c + 1..n {
                x[c] -= m[c][k] * x[k];
            }
            x[c] /= m[c][c];
        }
        x
    }

    #[test]
    fn resistor_ladder_matches_dense() {
        // Ladder of 1 kOhm series links with 10 kOhm shunts, grounded at node 0.
        let n = 12;
        let mut s = SymmetricStamps::new(n);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            s.add(i, i, 1e-4);
            dense[i][i] += 1e-4;
            if i + 1 < n {
                s.conductance(i, i + 1, 1e-3);
                dense[i][i] += 1e-3;
                dense[i + 1][i + 1] += 1e-3;
                dense[i][i + 1] -= 1e-3;
                dense[i + 1][i] -= 1e-3;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 1e-3).collect();
        let x = s.solve(&rhs).unwrap();
        let y = dense_solve(&dense, &rhs);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn floating_system_is_rejected() {
        let mut s = SymmetricStamps::new(2);
        s.conductance(0, 1, 1.0);
        assert!(s.solve(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn rcm_keeps_grid_profile_small() {
        // 40x6 grid, natural order is column-major (bandwidth 40).
        let (w, h) = (6usize, 40usize);
        let idx = |r: usize, c: usize| c * h + r;
        let mut s = SymmetricStamps::new(w * h);
        for r in 0..h {
            for c in 0..w {
                s.add(idx(r, c), idx(r, c), 1e-3);
                if c + 1 < w {
                    s.conductance(idx(r, c), idx(r, c + 1), 1.0);
                }
                if r + 1 < h {
                    s.conductance(idx(r, c), idx(r + 1, c), 1.0);
                }
            }
        }
        let f = EnvelopeCholesky::factor(&s).unwrap();
        assert!(
            f.envelope_size() <= w * h * (w + 2),
            "{}",
            f.envelope_size()
        );
    }
}
