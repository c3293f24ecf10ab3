//! Sparse LDL^T factorization for symmetric positive-definite systems.
//!
//! Up-looking factorization over an elimination tree, with a reverse
//! Cuthill-McKee fill-reducing permutation. No pivoting: the reduced
//! susceptance matrix of a connected grid is positive definite, and a
//! non-positive pivot is reported as singular.

use crate::scalar::Scalar;

/// Symmetric sparse matrix assembled from (row, col, value) triplets.
/// Only one triangle needs to be supplied; duplicates are summed.
pub struct SymmetricBuilder<S> {
    n: usize,
    entries: Vec<(usize, usize, S)>,
}

impl<S: Scalar> SymmetricBuilder<S> {
    pub fn new(n: usize) -> Self {
        SymmetricBuilder {
            n,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: S) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, v));
    }

    /// Factorizes the assembled matrix. Returns `None` when a pivot is not
    /// strictly positive (singular / not positive definite).
    pub fn factorize(self) -> Option<LdlFactor<S>> {
        let n = self.n;
        if n == 0 {
            return Some(LdlFactor {
                n,
                perm: Vec::new(),
                inv_perm: Vec::new(),
                col_ptr: vec![0],
                row_idx: Vec::new(),
                values: Vec::new(),
                diag: Vec::new(),
            });
        }
        let perm = rcm_order(n, &self.entries);
        let mut inv_perm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        // Upper triangle of the permuted matrix in CSC, duplicates summed.
        let mut cols: Vec<Vec<(usize, S)>> = vec![Vec::new(); n];
        for &(i, j, v) in &self.entries {
            let (a, b) = (inv_perm[i], inv_perm[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            cols[c].push((r, v));
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut val = Vec::new();
        col_ptr.push(0);
        for col in cols.iter_mut() {
            col.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < col.len() {
                let r = col[k].0;
                let mut v = col[k].1;
                k += 1;
                while k < col.len() && col[k].0 == r {
                    v = v + col[k].1;
                    k += 1;
                }
                row_idx.push(r);
                val.push(v);
            }
            col_ptr.push(row_idx.len());
        }

        ldl_factorize(n, &col_ptr, &row_idx, &val, perm, inv_perm)
    }
}

/// LDL^T factor of a permuted SPD matrix: `P A P^T = L D L^T`.
pub struct LdlFactor<S> {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<S>,
    diag: Vec<S>,
}

fn ldl_factorize<S: Scalar>(
    n: usize,
    a_ptr: &[usize],
    a_row: &[usize],
    a_val: &[S],
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
) -> Option<LdlFactor<S>> {
    // Symbolic pass: elimination tree and per-column counts of L (by rows of
    // the upper factor, i.e. columns of L).
    let mut parent = vec![usize::MAX; n];
    let mut flag = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];
    for k in 0..n {
        flag[k] = k;
        for p in a_ptr[k]..a_ptr[k + 1] {
            let mut i = a_row[p];
            while i < k && flag[i] != k {
                if parent[i] == usize::MAX {
                    parent[i] = k;
                }
                lnz[i] += 1;
                flag[i] = k;
                i = parent[i];
            }
        }
    }
    let mut col_ptr = vec![0usize; n + 1];
    for k in 0..n {
        col_ptr[k + 1] = col_ptr[k] + lnz[k];
    }
    let nnz = col_ptr[n];
    let mut row_idx = vec![0usize; nnz];
    let mut values = vec![S::zero(); nnz];
    let mut diag = vec![S::zero(); n];

    // Numeric pass.
    let mut y = vec![S::zero(); n];
    let mut pattern = vec![0usize; n];
    let mut next = vec![0usize; n]; // next free slot per column of L
    let mut flag = vec![usize::MAX; n];
    for k in 0..n {
        let mut top = n;
        flag[k] = k;
        for p in a_ptr[k]..a_ptr[k + 1] {
            let i0 = a_row[p];
            if i0 > k {
                continue;
            }
            y[i0] = y[i0] + a_val[p];
            let mut len = 0;
            let mut i = i0;
            while flag[i] != k {
                pattern[len] = i;
                len += 1;
                flag[i] = k;
                i = parent[i];
            }
            while len > 0 {
                len -= 1;
                top -= 1;
                pattern[top] = pattern[len];
            }
        }
        diag[k] = y[k];
        y[k] = S::zero();
        for s in top..n {
            let i = pattern[s];
            let yi = y[i];
            y[i] = S::zero();
            let p2 = col_ptr[i] + next[i];
            for p in col_ptr[i]..p2 {
                y[row_idx[p]] = y[row_idx[p]] - values[p] * yi;
            }
            let d = diag[i];
            let l_ki = yi / d;
            diag[k] = diag[k] - l_ki * yi;
            row_idx[p2] = k;
            values[p2] = l_ki;
            next[i] += 1;
        }
        if diag[k] <= S::zero() || !diag[k].is_finite() {
            return None;
        }
    }

    Some(LdlFactor {
        n,
        perm,
        inv_perm,
        col_ptr,
        row_idx,
        values,
        diag,
    })
}

impl<S: Scalar> LdlFactor<S> {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in the original (unpermuted) indexing.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        debug_assert_eq!(b.len(), self.n);
        let mut x: Vec<S> = (0..self.n).map(|i| b[self.perm[i]]).collect();
        // L x = b
        for j in 0..self.n {
            let xj = x[j];
            if xj != S::zero() {
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    x[self.row_idx[p]] = x[self.row_idx[p]] - self.values[p] * xj;
                }
            }
        }
        // D x = y
        for j in 0..self.n {
            x[j] = x[j] / self.diag[j];
        }
        // L^T x = z
        for j in (0..self.n).rev() {
            let mut xj = x[j];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                xj = xj - self.values[p] * x[self.row_idx[p]];
            }
            x[j] = xj;
        }
        let mut out = vec![S::zero(); self.n];
        for i in 0..self.n {
            out[self.perm[i]] = x[i];
        }
        out
    }

    #[allow(dead_code)]
    pub fn inv_perm(&self) -> &[usize] {
        &self.inv_perm
    }
}

/// Reverse Cuthill-McKee ordering. Returns `perm` with `perm[new] = old`.
fn rcm_order<S>(n: usize, entries: &[(usize, usize, S)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j, _) in entries {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    // The graph may have several components (the caller decides whether
    // that is an error); order each from a pseudo-peripheral start.
    loop {
        let start = match (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
        {
            Some(s) => s,
            None => break,
        };
        let start = pseudo_peripheral(start, &adj, &visited);
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(start);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(start: usize, adj: &[Vec<usize>], visited: &[bool]) -> usize {
    let mut node = start;
    let mut depth = 0;
    for _ in 0..4 {
        let (far, d) = bfs_farthest(node, adj, visited);
        if d <= depth {
            break;
        }
        depth = d;
        node = far;
    }
    node
}

fn bfs_farthest(start: usize, adj: &[Vec<usize>], visited: &[bool]) -> (usize, usize) {
    let n = adj.len();
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    dist[start] = 0;
    queue.push_back(start);
    let mut far = (start, 0usize);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !visited[v] && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                // Prefer the lowest index among equally distant nodes so the
                // ordering is deterministic.
                if dist[v] > far.1 || (dist[v] == far.1 && v < far.0) {
                    far = (v, dist[v]);
                }
                queue.push_back(v);
            }
        }
    }
    far
}
