//! Minimal sparse symmetric linear algebra: upper-triangle CSC storage,
//! reverse Cuthill-McKee ordering and an up-looking Cholesky factorization
//! with an elimination-tree symbolic phase. Covers exactly what the
//! least-squares vertex solve needs; everything dense stays in nalgebra.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at permuted column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
}

/// Sparse symmetric matrix, upper triangle only, compressed sparse column.
/// Row indices are sorted within each column.
#[derive(Debug, Clone)]
pub struct SymmetricSparse {
    n: usize,
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    values: Vec<f64>,
}

impl SymmetricSparse {
    /// Builds from (row, col, value) contributions. Orientation of each
    /// entry is irrelevant, duplicates accumulate; supply each symmetric
    /// contribution once, not mirrored.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut items: Vec<(usize, usize, f64)> = triplets
            .iter()
            .map(|&(i, j, v)| {
                assert!(i < n && j < n, "triplet ({i}, {j}) out of range for n = {n}");
                (j.max(i), j.min(i), v)
            })
            .collect();
        items.sort_by_key(|&(c, r, _)| (c, r));
        let mut colptr = vec![0usize; n + 1];
        let mut rowidx = Vec::with_capacity(items.len());
        let mut values = Vec::with_capacity(items.len());
        let mut prev = None;
        for (c, r, v) in items {
            if prev == Some((c, r)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowidx.push(r);
                values.push(v);
                colptr[c + 1] += 1;
                prev = Some((c, r));
            }
        }
        for c in 0..n {
            colptr[c + 1] += colptr[c];
        }
        Self {
            n,
            colptr,
            rowidx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = A x with the full symmetric matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.colptr[j]..self.colptr[j + 1] {
                let i = self.rowidx[p];
                let v = self.values[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// Dense copy, for small oracles.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.colptr[j]..self.colptr[j + 1] {
                let i = self.rowidx[p];
                m[(i, j)] = self.values[p];
                m[(j, i)] = self.values[p];
            }
        }
        m
    }
}

/// Prefactorized L L^T of a permuted positive definite matrix. Reusable
/// across any number of right-hand sides.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
}

impl SparseCholesky {
    pub fn new(a: &SymmetricSparse) -> Result<Self, FactorError> {
        let n = a.n;
        let perm = rcm_order(a);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // permuted upper triangle
        let mut trip = Vec::with_capacity(a.nnz());
        for j in 0..n {
            for p in a.colptr[j]..a.colptr[j + 1] {
                trip.push((iperm[a.rowidx[p]], iperm[j], a.values[p]));
            }
        }
        let c = SymmetricSparse::from_triplets(n, &trip);

        let parent = etree(&c);

        // symbolic: column counts of L via the row patterns
        let mut count = vec![1usize; n];
        let mut stamp = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stamp, &mut stack, k);
            for &i in &stack[top..n] {
                count[i] += 1;
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + count[k];
        }
        let nnz = lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0f64; nnz];
        let mut next = lp[..n].to_vec();

        // numeric: up-looking, one row of L per step
        let mut x = vec![0.0f64; n];
        stamp.fill(usize::MAX);
        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stamp, &mut stack, n + k);
            let mut d = 0.0;
            for p in c.colptr[k]..c.colptr[k + 1] {
                let i = c.rowidx[p];
                if i < k {
                    x[i] = c.values[p];
                } else if i == k {
                    d = c.values[p];
                }
            }
            for t in top..n {
                let i = stack[t];
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for p in lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                li[next[i]] = k;
                lx[next[i]] = lki;
                next[i] += 1;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(FactorError::NotPositiveDefinite {
                    column: k,
                    pivot: d,
                });
            }
            li[next[k]] = k;
            lx[next[k]] = d.sqrt();
            next[k] += 1;
        }

        Ok(Self { n, perm, lp, li, lx })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.lx.len()
    }

    /// Solves A x = b for the factored matrix.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // L y' = y, columns forward; diagonal is the first entry per column
        for j in 0..self.n {
            y[j] /= self.lx[self.lp[j]];
            let yj = y[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                y[self.li[p]] -= self.lx[p] * yj;
            }
        }
        // L^T x' = y', rows backward
        for j in (0..self.n).rev() {
            let mut s = y[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                s -= self.lx[p] * y[self.li[p]];
            }
            y[j] = s / self.lx[self.lp[j]];
        }
        let mut out = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = y[new];
        }
        out
    }
}

/// Elimination tree of an upper-triangle CSC matrix; usize::MAX marks roots.
fn etree(a: &SymmetricSparse) -> Vec<usize> {
    let n = a.n;
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for k in 0..n {
        for p in a.colptr[k]..a.colptr[k + 1] {
            let mut i = a.rowidx[p];
            while i != usize::MAX && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == usize::MAX {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row k of L, topologically ordered in stack[top..n].
/// Nodes reachable from column k's strict upper entries by walking the
/// elimination tree toward the root, stopping at already-marked nodes.
fn ereach(
    a: &SymmetricSparse,
    k: usize,
    parent: &[usize],
    stamp: &mut [usize],
    stack: &mut [usize],
    mark: usize,
) -> usize {
    let n = stamp.len();
    let mut top = n;
    stamp[k] = mark;
    for p in a.colptr[k]..a.colptr[k + 1] {
        let mut i = a.rowidx[p];
        if i >= k {
            continue;
        }
        let mut len = 0;
        while stamp[i] != mark {
            stack[len] = i;
            len += 1;
            stamp[i] = mark;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Reverse Cuthill-McKee ordering from the off-diagonal structure;
/// returns perm with perm[new] = old. Deterministic: minimum-degree roots
/// and degree-sorted neighbor visits, ties broken by index.
fn rcm_order(a: &SymmetricSparse) -> Vec<usize> {
    let n = a.n;
    let mut adj = vec![Vec::new(); n];
    for j in 0..n {
        for p in a.colptr[j]..a.colptr[j + 1] {
            let i = a.rowidx[p];
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();
    loop {
        let mut root = None;
        for v in 0..n {
            if !visited[v] && root.map_or(true, |r: usize| (deg[v], v) < (deg[r], r)) {
                root = Some(v);
            }
        }
        let Some(root) = root else { break };
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> =
                adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (deg[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}
