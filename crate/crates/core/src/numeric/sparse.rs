//! Sparse Cholesky factorization for symmetric positive definite matrices.
//!
//! The symbolic analysis (minimum-degree ordering, elimination tree, column
//! counts) runs once per sparsity pattern; numeric factorizations with new
//! values reuse it. The numeric phase is the classic up-looking row
//! algorithm: row `k` of `L` is the elimination-tree reach of column `k` of
//! the permuted upper triangle.

use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("value vector has length {got}, pattern expects {want}")]
    ValueLength { got: usize, want: usize },
}

/// Upper-triangle pattern of a symmetric matrix: entries `(i, j)` with
/// `i <= j`, deduplicated and sorted column-major.
#[derive(Debug, Clone)]
pub struct SymmetricPattern {
    pub n: usize,
    entries: Vec<(usize, usize)>,
}

impl SymmetricPattern {
    /// Builds from arbitrary `(row, col)` coordinates; both triangles map to
    /// the upper one and duplicates collapse. Diagonal entries are always
    /// present.
    pub fn new(n: usize, coords: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut set: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for (r, c) in coords {
            assert!(r < n && c < n);
            let (i, j) = if r <= c { (r, c) } else { (c, r) };
            set.insert((j, i)); // (col, row) for column-major order
        }
        let entries = set.into_iter().map(|(j, i)| (i, j)).collect();
        Self { n, entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Position of `(i, j)` (either triangle) in the entry list.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (i, j) = if r <= c { (r, c) } else { (c, r) };
        self.entries.binary_search_by(|&(ei, ej)| (ej, ei).cmp(&(j, i))).ok()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }
}

/// Minimum-degree ordering on the elimination graph.
fn minimum_degree(n: usize, entries: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in entries {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut order = Vec::with_capacity(n);
    let mut eliminated = vec![false; n];
    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        eliminated[v] = true;
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nbrs {
            queue.remove(&(adj[a].len(), a));
            adj[a].remove(&v);
        }
        for (x, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[x + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        for &a in &nbrs {
            queue.insert((adj[a].len(), a));
        }
        adj[v].clear();
    }
    debug_assert!(eliminated.iter().all(|&e| e));
    order
}

/// Result of the symbolic analysis.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// Permuted upper triangle in CSC form.
    cp: Vec<usize>,
    ci: Vec<usize>,
    /// For each permuted entry, index of the source value.
    source: Vec<usize>,
    nnz_source: usize,
    parent: Vec<Option<usize>>,
    lp: Vec<usize>,
}

impl SymbolicCholesky {
    pub fn analyze(pattern: &SymmetricPattern) -> Self {
        let n = pattern.n;
        let perm = minimum_degree(n, &pattern.entries);
        Self::with_ordering(pattern, perm)
    }

    pub fn with_ordering(pattern: &SymmetricPattern, perm: Vec<usize>) -> Self {
        let n = pattern.n;
        let mut pinv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }
        // Permuted upper triangle.
        let mut cols: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (e, &(i, j)) in pattern.entries.iter().enumerate() {
            let (a, b) = (pinv[i], pinv[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            cols[c].push((r, e));
        }
        let mut cp = vec![0; n + 1];
        let mut ci = Vec::with_capacity(pattern.nnz());
        let mut source = Vec::with_capacity(pattern.nnz());
        for (c, col) in cols.iter_mut().enumerate() {
            col.sort_unstable();
            for &(r, e) in col.iter() {
                ci.push(r);
                source.push(e);
            }
            cp[c + 1] = ci.len();
        }
        // Elimination tree (path-compressed ancestors).
        let mut parent = vec![None; n];
        let mut ancestor: Vec<Option<usize>> = vec![None; n];
        for k in 0..n {
            for p in cp[k]..cp[k + 1] {
                let mut i = ci[p];
                while i < k {
                    let next = ancestor[i];
                    ancestor[i] = Some(k);
                    match next {
                        None => {
                            parent[i] = Some(k);
                            break;
                        }
                        Some(a) => i = a,
                    }
                }
            }
        }
        // Column counts from the row patterns.
        let mut counts = vec![1usize; n];
        let mut mark = vec![usize::MAX; n];
        for k in 0..n {
            mark[k] = k;
            for p in cp[k]..cp[k + 1] {
                let mut i = ci[p];
                while i < k && mark[i] != k {
                    counts[i] += 1;
                    mark[i] = k;
                    i = parent[i].expect("etree parent");
                }
            }
        }
        let mut lp = vec![0; n + 1];
        for j in 0..n {
            lp[j + 1] = lp[j] + counts[j];
        }
        Self { n, perm, cp, ci, source, nnz_source: pattern.nnz(), parent, lp }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz_factor(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization; `values` follows the pattern's entry order.
    pub fn factor(&self, values: &[f64]) -> Result<CholeskyFactor, SparseError> {
        if values.len() != self.nnz_source {
            return Err(SparseError::ValueLength { got: values.len(), want: self.nnz_source });
        }
        let n = self.n;
        let nnz = self.lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0f64; nnz];
        let mut next = self.lp[..n].to_vec();
        let mut x = vec![0.0f64; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack: Vec<usize> = Vec::with_capacity(n);
        let mut reach: Vec<usize> = Vec::with_capacity(n);
        for k in 0..n {
            // Row pattern of L(k, :) in topological order.
            reach.clear();
            mark[k] = k;
            for p in self.cp[k]..self.cp[k + 1] {
                let i0 = self.ci[p];
                x[i0] += values[self.source[p]];
                let mut i = i0;
                stack.clear();
                while i < k && mark[i] != k {
                    stack.push(i);
                    mark[i] = k;
                    i = self.parent[i].expect("etree parent");
                }
                while let Some(s) = stack.pop() {
                    reach.push(s);
                }
            }
            // `reach` holds path segments in reverse; sorting ascending is a
            // valid topological order for the up-looking solve.
            reach.sort_unstable();
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &reach {
                let lki = x[i] / lx[self.lp[i]];
                x[i] = 0.0;
                for p in self.lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                li[next[i]] = k;
                lx[next[i]] = lki;
                next[i] += 1;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(SparseError::NotPositiveDefinite { pivot: k, value: d });
            }
            li[next[k]] = k;
            lx[next[k]] = d.sqrt();
            next[k] += 1;
        }
        Ok(CholeskyFactor { n, perm: self.perm.clone(), lp: self.lp.clone(), li, lx })
    }
}

/// `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
}

impl CholeskyFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `ln det A = 2 Σ ln L_jj`.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|j| 2.0 * self.lx[self.lp[j]].ln()).sum()
    }

    /// `y = L⁻¹ P b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for j in 0..self.n {
            y[j] /= self.lx[self.lp[j]];
            let yj = y[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                y[self.li[p]] -= self.lx[p] * yj;
            }
        }
        y
    }

    /// `x = Pᵀ L⁻ᵀ y`.
    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        let mut z = y.to_vec();
        for j in (0..self.n).rev() {
            let mut s = z[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                s -= self.lx[p] * z[self.li[p]];
            }
            z[j] = s / self.lx[self.lp[j]];
        }
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = z[new];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    /// Entries of `A⁻¹` on the pattern of `L` (Takahashi recurrence).
    ///
    /// Column `j` needs `Z[k, i]` for `k, i` in the row pattern `R` of
    /// `L[:, j]`; those lie in the already computed columns `k ∈ R`, which
    /// are scanned once with a position map into `R`.
    pub fn selected_inverse(&self) -> SelectedInverse {
        let n = self.n;
        let mut zx = vec![0.0; self.lx.len()];
        let mut pos = vec![usize::MAX; n];
        let mut acc: Vec<f64> = Vec::new();
        for j in (0..n).rev() {
            let (start, end) = (self.lp[j] + 1, self.lp[j + 1]);
            let rows = &self.li[start..end];
            let lv = &self.lx[start..end];
            let ljj = self.lx[self.lp[j]];
            for (t, &r) in rows.iter().enumerate() {
                pos[r] = t;
            }
            acc.clear();
            acc.resize(rows.len(), 0.0);
            for (t, &k) in rows.iter().enumerate() {
                for p in self.lp[k]..self.lp[k + 1] {
                    let u = pos[self.li[p]];
                    if u == usize::MAX {
                        continue;
                    }
                    let z = zx[p];
                    acc[t] += lv[u] * z;
                    if u != t {
                        acc[u] += lv[t] * z;
                    }
                }
            }
            let mut diag = 1.0 / (ljj * ljj);
            for (t, &r) in rows.iter().enumerate() {
                let v = -acc[t] / ljj;
                zx[start + t] = v;
                diag -= lv[t] * v / ljj;
                pos[r] = usize::MAX;
            }
            zx[self.lp[j]] = diag;
        }
        let mut pinv = vec![0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            pinv[old] = new;
        }
        SelectedInverse { pinv, lp: self.lp.clone(), li: self.li.clone(), zx }
    }
}

/// `A⁻¹` restricted to the filled pattern, addressed by original indices.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    pinv: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    zx: Vec<f64>,
}

impl SelectedInverse {
    /// `(A⁻¹)_{ij}` when `(i, j)` lies in the filled pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (self.pinv[i], self.pinv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        let rows = &self.li[self.lp[c]..self.lp[c + 1]];
        rows.binary_search(&r).ok().map(|p| self.zx[self.lp[c] + p])
    }
}
