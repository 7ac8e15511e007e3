//! Symmetric sparse matrices and a fill-reducing sparse Cholesky factorization.
//!
//! Only the lower triangle is stored, column by column. A factorization is
//! split into a symbolic phase (ordering and fill pattern), which depends on
//! the sparsity pattern only, and a numeric phase that can be repeated for
//! every new set of values on the same pattern. The MCMC sampler relies on
//! this to refactor the same precision structure thousands of times.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Symmetric matrix stored as its lower triangle in compressed sparse columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Entries may be given
    /// in either triangle; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets
            .iter()
            .map(|&(i, j, v)| {
                assert!(i < n && j < n, "triplet ({i}, {j}) out of range for n = {n}");
                if i >= j {
                    (j, i, v)
                } else {
                    (i, j, v)
                }
            })
            .collect();
        // (col, row) order
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut col_ptr = vec![0; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (col, row, v) in entries {
            if last == Some((col, row)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((col, row));
            row_idx.push(row);
            values.push(v);
            col_ptr[col + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        SymMatrix {
            n,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t)
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let t: Vec<_> = diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        Self::from_triplets(diag.len(), &t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (lower-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Iterates `(row, col, value)` over the stored lower triangle.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], j, self.values[p]))
        })
    }

    /// Position of entry `(i, j)` in the value array, if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (row, col) = if i >= j { (i, j) } else { (j, i) };
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()]
            .binary_search(&row)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn same_pattern(&self, other: &SymMatrix) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    /// Returns a copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Computes `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (i, j, v) in self.iter() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    /// Computes `xᵀ · self · x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.iter()
            .map(|(i, j, v)| if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] })
            .sum()
    }

    /// Maps every stored entry of `block`, shifted by `offset` along both
    /// axes, to its position in `self`. Panics if the pattern of `self` does
    /// not contain the shifted block.
    pub fn block_positions(&self, block: &SymMatrix, offset: usize) -> Vec<usize> {
        block
            .iter()
            .map(|(i, j, _)| {
                self.position(i + offset, j + offset)
                    .expect("block pattern not contained in target pattern")
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.iter() {
            d[i][j] = v;
            d[j][i] = v;
        }
        d
    }

    /// Coordinate-triplet text (`row col value` per line, 0-based, lower triangle).
    pub fn to_triplet_text(&self) -> String {
        let mut out = String::new();
        for (i, j, v) in self.iter() {
            let _ = writeln!(out, "{i} {j} {v:e}");
        }
        out
    }

    fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.n];
        for (i, j, _) in self.iter() {
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        adj
    }
}

/// Ordering and fill pattern of a Cholesky factor, reusable across numeric
/// factorizations of matrices sharing one sparsity pattern.
#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    /// For each factor row `j`, the columns `k < j` with a structural nonzero `L[j, k]`.
    row_cols: Vec<Vec<usize>>,
    /// For each permuted column, `(permuted row, index into the input values)`.
    input_map: Vec<Vec<(usize, usize)>>,
    pattern: SymMatrix,
}

impl SymbolicCholesky {
    /// Computes a minimum-degree ordering and the resulting fill pattern.
    ///
    /// Ties in the degree are broken by the lowest original index so the
    /// ordering is deterministic.
    pub fn analyze(matrix: &SymMatrix) -> Self {
        let n = matrix.n;
        let mut adj = matrix.adjacency();
        let mut eliminated = vec![false; n];
        let mut perm = Vec::with_capacity(n);
        let mut columns_old: Vec<Vec<usize>> = Vec::with_capacity(n);

        for _ in 0..n {
            let v = (0..n)
                .filter(|&i| !eliminated[i])
                .min_by_key(|&i| (adj[i].len(), i))
                .unwrap();
            eliminated[v] = true;
            let nbrs: Vec<usize> = adj[v].iter().copied().collect();
            for &a in &nbrs {
                adj[a].remove(&v);
                for &b in &nbrs {
                    if a != b {
                        adj[a].insert(b);
                    }
                }
            }
            adj[v].clear();
            perm.push(v);
            columns_old.push(nbrs);
        }

        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        let mut l_col_ptr = Vec::with_capacity(n + 1);
        let mut l_row_idx = Vec::new();
        let mut row_cols = vec![Vec::new(); n];
        l_col_ptr.push(0);
        for (k, nbrs) in columns_old.iter().enumerate() {
            let mut rows: Vec<usize> = nbrs.iter().map(|&o| iperm[o]).collect();
            rows.sort_unstable();
            l_row_idx.push(k);
            for &r in &rows {
                debug_assert!(r > k);
                l_row_idx.push(r);
                row_cols[r].push(k);
            }
            l_col_ptr.push(l_row_idx.len());
        }

        let mut input_map = vec![Vec::new(); n];
        for (p, (i, j, _)) in matrix.iter().enumerate() {
            let (pi, pj) = (iperm[i], iperm[j]);
            let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            input_map[c].push((r, p));
        }

        let mut pattern = matrix.clone();
        pattern.values.iter_mut().for_each(|v| *v = 0.0);

        SymbolicCholesky {
            n,
            perm,
            l_col_ptr,
            l_row_idx,
            row_cols,
            input_map,
            pattern,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of nonzeros in the factor, diagonal included.
    pub fn factor_nnz(&self) -> usize {
        self.l_row_idx.len()
    }

    /// `perm[new] = old`
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Numeric factorization of `matrix`, which must share the analyzed pattern.
    pub fn factor(self: &Arc<Self>, matrix: &SymMatrix) -> Result<Cholesky> {
        assert!(
            matrix.same_pattern(&self.pattern),
            "matrix pattern differs from the analyzed pattern"
        );
        let n = self.n;
        let mut l_values = vec![0.0; self.l_row_idx.len()];
        let mut work = vec![0.0; n];
        let mut next = self.l_col_ptr[..n].to_vec();
        let a = &matrix.values;

        for j in 0..n {
            for &(r, p) in &self.input_map[j] {
                work[r] += a[p];
            }
            for &k in &self.row_cols[j] {
                let start = next[k];
                debug_assert_eq!(self.l_row_idx[start], j);
                let l_jk = l_values[start];
                for p in start..self.l_col_ptr[k + 1] {
                    work[self.l_row_idx[p]] -= l_values[p] * l_jk;
                }
                next[k] = start + 1;
            }
            let col = self.l_col_ptr[j]..self.l_col_ptr[j + 1];
            let d = work[j];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: self.perm[j],
                });
            }
            let ljj = d.sqrt();
            work[j] = 0.0;
            l_values[col.start] = ljj;
            for p in col.start + 1..col.end {
                let r = self.l_row_idx[p];
                l_values[p] = work[r] / ljj;
                work[r] = 0.0;
            }
            // skip the diagonal entry for later updates
            next[j] = col.start + 1;
        }

        Ok(Cholesky {
            symbolic: Arc::clone(self),
            l_values,
        })
    }
}

/// Numeric Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    symbolic: Arc<SymbolicCholesky>,
    l_values: Vec<f64>,
}

impl Cholesky {
    /// One-shot analysis and factorization.
    pub fn new(matrix: &SymMatrix) -> Result<Self> {
        Arc::new(SymbolicCholesky::analyze(matrix)).factor(matrix)
    }

    pub fn n(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn log_det(&self) -> f64 {
        let s = &self.symbolic;
        2.0 * (0..s.n).map(|j| self.l_values[s.l_col_ptr[j]].ln()).sum::<f64>()
    }

    /// Solves `L y = b` in place (permuted coordinates).
    fn forward(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let start = s.l_col_ptr[j];
            y[j] /= self.l_values[start];
            let yj = y[j];
            for p in start + 1..s.l_col_ptr[j + 1] {
                y[s.l_row_idx[p]] -= self.l_values[p] * yj;
            }
        }
    }

    /// Solves `Lᵀ x = y` in place (permuted coordinates).
    fn backward(&self, x: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let start = s.l_col_ptr[j];
            let mut acc = x[j];
            for p in start + 1..s.l_col_ptr[j + 1] {
                acc -= self.l_values[p] * x[s.l_row_idx[p]];
            }
            x[j] = acc / self.l_values[start];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        assert_eq!(b.len(), s.n);
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Maps a standard normal vector `z` to a draw from `N(0, A⁻¹)`.
    pub fn sample_with(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        assert_eq!(z.len(), s.n);
        let mut v = z.to_vec();
        self.backward(&mut v);
        let mut w = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            w[old] = v[new];
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_cholesky_logdet(a: &[Vec<f64>]) -> f64 {
        let n = a.len();
        let mut l = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut d = a[j][j];
            for k in 0..j {
                d -= l[j][k] * l[j][k];
            }
            l[j][j] = d.sqrt();
            for i in j + 1..n {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                l[i][j] = s / l[j][j];
            }
        }
        (0..n).map(|i| 2.0 * l[i][i].ln()).sum()
    }

    fn laplacian_1d(n: usize, shift: f64) -> SymMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i + 1 < n {
                t.push((i + 1, i, -1.0));
            }
        }
        SymMatrix::from_triplets(n, &t)
    }

    #[test]
    fn triplets_sum_duplicates_across_triangles() {
        let m = SymMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 2.0), (0, 0, 4.0)]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn solve_tridiagonal() {
        let a = laplacian_1d(6, 0.5);
        let chol = Cholesky::new(&a).unwrap();
        let b = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let x = chol.solve(&b);
        let ax = a.mul_vec(&x);
        for (u, v) in ax.iter().zip(b) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((chol.log_det() - dense_cholesky_logdet(&a.to_dense())).abs() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = SymMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, 1.0), (1, 0, 2.0)]);
        assert!(matches!(
            Cholesky::new(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn dense_row_is_ordered_last() {
        // arrow matrix: node 0 couples to everyone
        let n = 8;
        let mut t = vec![(0, 0, n as f64 + 1.0)];
        for i in 1..n {
            t.push((i, i, 2.0));
            t.push((i, 0, 1.0));
        }
        let a = SymMatrix::from_triplets(n, &t);
        let sym = SymbolicCholesky::analyze(&a);
        assert!(sym.permutation()[..n - 2].iter().all(|&v| v != 0));
        assert_eq!(sym.factor_nnz(), 2 * n - 1);
    }

    #[test]
    fn refactor_with_new_values() {
        let a = laplacian_1d(5, 1.0);
        let sym = Arc::new(SymbolicCholesky::analyze(&a));
        let b = laplacian_1d(5, 3.0);
        let chol = sym.factor(&b).unwrap();
        assert!((chol.log_det() - dense_cholesky_logdet(&b.to_dense())).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn random_spd_logdet_and_solve(
            n in 2usize..25,
            edges in proptest::collection::vec((0usize..25, 0usize..25, -1.0f64..1.0), 0..60),
            rhs_seed in proptest::collection::vec(-5.0f64..5.0, 25),
        ) {
            // diagonally dominant => SPD
            let mut t = Vec::new();
            let mut rowsum = vec![0.0; n];
            for &(i, j, v) in &edges {
                let (i, j) = (i % n, j % n);
                if i != j {
                    t.push((i, j, v));
                    rowsum[i] += v.abs();
                    rowsum[j] += v.abs();
                }
            }
            for (i, s) in rowsum.iter().enumerate() {
                t.push((i, i, s + 1.0));
            }
            let a = SymMatrix::from_triplets(n, &t);
            let chol = Cholesky::new(&a).unwrap();
            let dense = dense_cholesky_logdet(&a.to_dense());
            prop_assert!((chol.log_det() - dense).abs() < 1e-9 * dense.abs().max(1.0));
            let b = &rhs_seed[..n];
            let x = chol.solve(b);
            let ax = a.mul_vec(&x);
            for (u, v) in ax.iter().zip(b) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
