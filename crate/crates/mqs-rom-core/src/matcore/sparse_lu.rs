//! Sparse LU with partial pivoting, left-looking (Gilbert-Peierls): each
//! column of the factor comes from one sparse triangular solve whose nonzero
//! pattern is found by depth-first search through the partially built L.
//! Row order is chosen by threshold-free partial pivoting with smallest-index
//! tie breaking, so factorizations are deterministic.

use super::{DVec, MatError, SparseMatrix};

#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    // L is unit lower triangular in pivot coordinates; diagonal not stored.
    l_colptr: Vec<usize>,
    l_rows: Vec<usize>,
    l_vals: Vec<f64>,
    // U is upper triangular in pivot coordinates; diagonal stored last per column.
    u_colptr: Vec<usize>,
    u_rows: Vec<usize>,
    u_vals: Vec<f64>,
    // pinv[original_row] = pivot position.
    pinv: Vec<usize>,
}

impl SparseLu {
    /// Factor a square sparse matrix. `rel_pivot_floor` scales the largest
    /// absolute entry of the input to give the smallest acceptable pivot.
    pub fn factor(a: &SparseMatrix, rel_pivot_floor: f64) -> Result<SparseLu, MatError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(MatError::DimensionMismatch {
                op: "sparse lu",
                expected: (n, n),
                got: (a.nrows(), a.ncols()),
            });
        }
        let floor = rel_pivot_floor * a.max_abs().max(f64::MIN_POSITIVE);
        let (col_ptr, row_idx, vals) = a.to_csc();

        const UNPIVOTED: usize = usize::MAX;
        let mut pinv = vec![UNPIVOTED; n];
        let mut l_colptr = vec![0usize];
        let mut l_rows: Vec<usize> = Vec::new();
        let mut l_vals: Vec<f64> = Vec::new();
        let mut u_colptr = vec![0usize];
        let mut u_rows: Vec<usize> = Vec::new();
        let mut u_vals: Vec<f64> = Vec::new();

        let mut x = vec![0.0f64; n];
        let mut mark = vec![0usize; n];
        let mut stamp = 0usize;
        let mut topo: Vec<usize> = Vec::with_capacity(n);
        let mut dfs_stack: Vec<(usize, usize)> = Vec::new();

        for k in 0..n {
            stamp += 1;
            topo.clear();

            // Reachability DFS from the pattern of A(:,k) through built L columns.
            for &root in &row_idx[col_ptr[k]..col_ptr[k + 1]] {
                if mark[root] == stamp {
                    continue;
                }
                dfs_stack.push((root, 0));
                mark[root] = stamp;
                while !dfs_stack.is_empty() {
                    let (node, pos) = *dfs_stack.last().unwrap();
                    let lcol = pinv[node];
                    let (lo, hi) = if lcol == UNPIVOTED {
                        (0, 0)
                    } else {
                        (l_colptr[lcol], l_colptr[lcol + 1])
                    };
                    let mut p = pos;
                    let mut next_child = None;
                    while lo + p < hi {
                        let child = l_rows[lo + p];
                        p += 1;
                        if mark[child] != stamp {
                            next_child = Some(child);
                            break;
                        }
                    }
                    dfs_stack.last_mut().unwrap().1 = p;
                    match next_child {
                        Some(child) => {
                            mark[child] = stamp;
                            dfs_stack.push((child, 0));
                        }
                        None => {
                            let (finished, _) = dfs_stack.pop().unwrap();
                            topo.push(finished);
                        }
                    }
                }
            }

            // Sparse triangular solve on the discovered pattern, dependencies
            // first (reverse postorder).
            for &i in &topo {
                x[i] = 0.0;
            }
            for p in col_ptr[k]..col_ptr[k + 1] {
                x[row_idx[p]] = vals[p];
            }
            for idx in (0..topo.len()).rev() {
                let j = topo[idx];
                let lcol = pinv[j];
                if lcol != UNPIVOTED {
                    let xj = x[j];
                    if xj != 0.0 {
                        for p in l_colptr[lcol]..l_colptr[lcol + 1] {
                            x[l_rows[p]] -= l_vals[p] * xj;
                        }
                    }
                }
            }

            // Partial pivot: largest magnitude among unpivoted rows, smallest
            // original index on ties.
            let mut ipiv = UNPIVOTED;
            let mut pmax = -1.0f64;
            let mut unpivoted_rows: Vec<usize> = topo
                .iter()
                .copied()
                .filter(|&i| pinv[i] == UNPIVOTED)
                .collect();
            unpivoted_rows.sort_unstable();
            for &i in &unpivoted_rows {
                let m = x[i].abs();
                if m > pmax {
                    pmax = m;
                    ipiv = i;
                }
            }
            if ipiv == UNPIVOTED || pmax <= floor {
                return Err(MatError::SingularFactor {
                    stage: "sparse lu",
                    pivot_index: k,
                    pivot_value: if ipiv == UNPIVOTED { 0.0 } else { x[ipiv] },
                });
            }
            let pivot = x[ipiv];

            // U column k: previously pivoted rows, ascending pivot position,
            // diagonal last.
            let mut ucol: Vec<(usize, f64)> = topo
                .iter()
                .filter(|&&j| pinv[j] != UNPIVOTED)
                .map(|&j| (pinv[j], x[j]))
                .filter(|&(_, v)| v != 0.0)
                .collect();
            ucol.sort_unstable_by_key(|&(r, _)| r);
            for (r, v) in ucol {
                u_rows.push(r);
                u_vals.push(v);
            }
            u_rows.push(k);
            u_vals.push(pivot);
            u_colptr.push(u_rows.len());

            // L column k: unpivoted rows below the pivot, original indices for
            // now (remapped after all pivots are known).
            for &i in &unpivoted_rows {
                if i != ipiv && x[i] != 0.0 {
                    l_rows.push(i);
                    l_vals.push(x[i] / pivot);
                }
            }
            l_colptr.push(l_rows.len());

            pinv[ipiv] = k;
        }

        for r in &mut l_rows {
            debug_assert!(pinv[*r] != UNPIVOTED);
            *r = pinv[*r];
        }

        Ok(SparseLu {
            n,
            l_colptr,
            l_rows,
            l_vals,
            u_colptr,
            u_rows,
            u_vals,
            pinv,
        })
    }

    pub fn solve(&self, b: &DVec) -> Result<DVec, MatError> {
        if b.len() != self.n {
            return Err(MatError::DimensionMismatch {
                op: "sparse lu solve",
                expected: (self.n, 1),
                got: (b.len(), 1),
            });
        }
        let mut y = vec![0.0f64; self.n];
        for i in 0..self.n {
            y[self.pinv[i]] = b[i];
        }
        // L y' = P b, unit diagonal.
        for k in 0..self.n {
            let yk = y[k];
            if yk != 0.0 {
                for p in self.l_colptr[k]..self.l_colptr[k + 1] {
                    y[self.l_rows[p]] -= self.l_vals[p] * yk;
                }
            }
        }
        // U x = y', diagonal stored last per column.
        for k in (0..self.n).rev() {
            let hi = self.u_colptr[k + 1];
            let lo = self.u_colptr[k];
            let diag = self.u_vals[hi - 1];
            debug_assert_eq!(self.u_rows[hi - 1], k);
            y[k] /= diag;
            let yk = y[k];
            if yk != 0.0 {
                for p in lo..hi - 1 {
                    y[self.u_rows[p]] -= self.u_vals[p] * yk;
                }
            }
        }
        Ok(DVec::from_vec(y))
    }
}
