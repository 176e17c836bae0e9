//! Envelope (skyline) LDLᵀ factorization for sparse symmetric quasi-definite
//! matrices, with a reverse Cuthill–McKee ordering.
//!
//! The symbolic structure is computed once from a sparsity pattern; numeric
//! values are then scattered through precomputed slot indices each time the
//! matrix changes.

use std::collections::VecDeque;

/// Reverse Cuthill–McKee permutation of an undirected graph given as
/// adjacency lists. Returns `order[new] = old`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &root in &by_degree {
        if visited[root] {
            continue;
        }
        let start = pseudo_peripheral(adjacency, root);
        visited[start] = true;
        queue.push_back(start);
        while let Some(node) = queue.pop_front() {
            order.push(node);
            let mut next: Vec<usize> = adjacency[node].iter().copied().filter(|&j| !visited[j]).collect();
            next.sort_by_key(|&j| (degree[j], j));
            next.dedup();
            for j in next {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// George–Liu style search for a node of (near) maximal eccentricity in the
/// component containing `root`.
fn pseudo_peripheral(adjacency: &[Vec<usize>], root: usize) -> usize {
    let mut current = root;
    let mut eccentricity = 0;
    for _ in 0..8 {
        let (levels, far) = bfs_levels(adjacency, current);
        if levels <= eccentricity {
            break;
        }
        eccentricity = levels;
        current = far;
    }
    current
}

fn bfs_levels(adjacency: &[Vec<usize>], root: usize) -> (usize, usize) {
    let mut dist = vec![usize::MAX; adjacency.len()];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut last = (0, root);
    while let Some(node) = queue.pop_front() {
        let d = dist[node];
        if d > last.0 || (d == last.0 && adjacency[node].len() < adjacency[last.1].len()) {
            last = (d, node);
        }
        for &j in &adjacency[node] {
            if dist[j] == usize::MAX {
                dist[j] = d + 1;
                queue.push_back(j);
            }
        }
    }
    last
}

/// Envelope structure of a symmetrically permuted matrix.
#[derive(Debug, Clone)]
pub struct Skyline {
    /// `perm[old] = new`
    perm: Vec<usize>,
    /// `order[new] = old`
    order: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    /// Offset of each row's strictly-lower segment in `lower`.
    offset: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    /// Sign expected for each pivot (+1 primal, −1 dual), permuted order.
    sign: Vec<f64>,
}

/// Where a numeric entry `(i, j)` of the original matrix is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Diag(usize),
    Lower(usize),
}

impl Skyline {
    /// `pattern` lists the (unpermuted) off-diagonal nonzeros `(i, j)` in any
    /// orientation; `signs[i]` is the expected pivot sign of row `i`.
    pub fn new(dim: usize, pattern: &[(usize, usize)], signs: &[f64]) -> Self {
        let mut adjacency = vec![Vec::new(); dim];
        for &(i, j) in pattern {
            if i != j {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        let order = reverse_cuthill_mckee(&adjacency);
        let mut perm = vec![0; dim];
        for (new, &old) in order.iter().enumerate() {
            perm[old] = new;
        }
        let mut first: Vec<usize> = (0..dim).collect();
        for (old, adj) in adjacency.iter().enumerate() {
            let r = perm[old];
            for &nb in adj {
                let c = perm[nb];
                if c < r {
                    first[r] = first[r].min(c);
                }
            }
        }
        let mut offset = Vec::with_capacity(dim + 1);
        let mut total = 0;
        for (r, &f) in first.iter().enumerate() {
            offset.push(total);
            total += r - f;
        }
        offset.push(total);
        let sign = order.iter().map(|&old| signs[old]).collect();
        Self { perm, order, first, offset, lower: vec![0.0; total], diag: vec![0.0; dim], sign }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn envelope_size(&self) -> usize {
        self.lower.len()
    }

    /// Storage slot for original entry `(i, j)`; panics if outside the envelope.
    pub fn slot(&self, i: usize, j: usize) -> Slot {
        let (mut r, mut c) = (self.perm[i], self.perm[j]);
        if r == c {
            return Slot::Diag(r);
        }
        if c > r {
            std::mem::swap(&mut r, &mut c);
        }
        assert!(c >= self.first[r], "entry ({i}, {j}) outside the envelope");
        Slot::Lower(self.offset[r] + c - self.first[r])
    }

    pub fn clear(&mut self) {
        self.lower.iter_mut().for_each(|v| *v = 0.0);
        self.diag.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    pub fn add(&mut self, slot: Slot, v: f64) {
        match slot {
            Slot::Diag(k) => self.diag[k] += v,
            Slot::Lower(k) => self.lower[k] += v,
        }
    }

    /// In-place LDLᵀ. Pivots whose sign disagrees with the expected sign, or
    /// whose magnitude is below `min_pivot`, are replaced by `±min_pivot`.
    /// Returns the number of replaced pivots.
    pub fn factor(&mut self, min_pivot: f64) -> usize {
        let n = self.dim();
        let mut replaced = 0;
        let mut u = Vec::new();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let len = i - fi;
            // u_j = K_ij − Σ_k u_k L_jk, L_ij = u_j / D_j
            u.clear();
            u.extend_from_slice(&self.lower[oi..oi + len]);
            for jj in 0..len {
                let j = fi + jj;
                let fj = self.first[j];
                let oj = self.offset[j];
                let start = fi.max(fj);
                let mut acc = u[jj];
                for k in start..j {
                    acc -= u[k - fi] * self.lower[oj + k - fj];
                }
                u[jj] = acc;
            }
            let mut d = self.diag[i];
            for jj in 0..len {
                let j = fi + jj;
                let l = u[jj] / self.diag[j];
                d -= u[jj] * l;
                self.lower[oi + jj] = l;
            }
            let s = self.sign[i];
            if !(d * s >= min_pivot) {
                d = s * min_pivot;
                replaced += 1;
            }
            self.diag[i] = d;
        }
        replaced
    }

    /// Solves `L D Lᵀ x = b` in place (`b` in original ordering).
    pub fn solve(&self, b: &mut [f64], work: &mut Vec<f64>) {
        let n = self.dim();
        work.clear();
        work.extend(self.order.iter().map(|&old| b[old]));
        let y = work;
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let mut acc = y[i];
            for (k, l) in self.lower[oi..oi + i - fi].iter().enumerate() {
                acc -= l * y[fi + k];
            }
            y[i] = acc;
        }
        for i in 0..n {
            y[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            let yi = y[i];
            for (k, l) in self.lower[oi..oi + i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        for (new, &old) in self.order.iter().enumerate() {
            b[old] = y[new];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn assemble(m: &DMatrix<f64>, signs: &[f64]) -> Skyline {
        let n = m.nrows();
        let mut pattern = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if m[(i, j)] != 0.0 {
                    pattern.push((i, j));
                }
            }
        }
        let mut sky = Skyline::new(n, &pattern, signs);
        for i in 0..n {
            sky.add(sky.slot(i, i), m[(i, i)]);
            for j in 0..i {
                if m[(i, j)] != 0.0 {
                    sky.add(sky.slot(i, j), m[(i, j)]);
                }
            }
        }
        sky
    }

    #[test]
    fn solves_quasi_definite_system() {
        // [H Aᵀ; A −δ] with a tridiagonal H
        let n = 6;
        let me = 2;
        let mut m = DMatrix::<f64>::zeros(n + me, n + me);
        for i in 0..n {
            m[(i, i)] = 4.0 + i as f64;
            if i + 1 < n {
                m[(i, i + 1)] = -1.0;
                m[(i + 1, i)] = -1.0;
            }
        }
        let a = [[1.0, 0.0, 2.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, -1.0, 3.0]];
        for (r, row) in a.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                m[(n + r, c)] = v;
                m[(c, n + r)] = v;
            }
            m[(n + r, n + r)] = -1e-9;
        }
        let mut signs = vec![1.0; n];
        signs.extend([-1.0; 2]);
        let mut sky = assemble(&m, &signs);
        assert_eq!(sky.factor(1e-14), 0);
        let b: Vec<f64> = (0..n + me).map(|i| (i as f64).sin() + 0.5).collect();
        let mut x = b.clone();
        sky.solve(&mut x, &mut Vec::new());
        let r = &m * DMatrix::from_column_slice(n + me, 1, &x) - DMatrix::from_column_slice(n + me, 1, &b);
        assert!(r.amax() < 1e-10, "residual {}", r.amax());
    }

    #[test]
    fn rcm_keeps_a_path_graph_banded() {
        // path 0-5-1-4-2-3 shuffled labels
        let edges = [(0, 5), (5, 1), (1, 4), (4, 2), (2, 3)];
        let mut adj = vec![Vec::new(); 6];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut pos = [0; 6];
        for (k, &o) in order.iter().enumerate() {
            pos[o] = k;
        }
        for &(a, b) in &edges {
            assert_eq!((pos[a] as i64 - pos[b] as i64).abs(), 1);
        }
    }
}
