//! Shared matrix infrastructure: dense spectral kernels, rank decisions,
//! orthonormal bases, and sparse factorizations.
//!
//! Dense factorizations are backed by `nalgebra`; every routine that makes a
//! rank or definiteness decision takes an explicit relative tolerance so the
//! decision is reproducible. The singular-value threshold convention is
//! `sigma_i <= tol * sigma_max` counts as zero.

mod sparse;
mod sparse_lu;

pub use sparse::SparseMatrix;
pub use sparse_lu::SparseLu;

pub type DMat = nalgebra::DMatrix<f64>;
pub type DVec = nalgebra::DVector<f64>;

/// Default relative singular-value cutoff for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Relative asymmetry allowed before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum MatError {
    DimensionMismatch {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    InvalidTriplet {
        index: usize,
        row: usize,
        col: usize,
        shape: (usize, usize),
    },
    NotSymmetric {
        residual: f64,
        tol: f64,
    },
    NotPositiveDefinite {
        pivot_index: usize,
        pivot_value: f64,
    },
    SingularFactor {
        stage: &'static str,
        pivot_index: usize,
        pivot_value: f64,
    },
    SvdFailed {
        rows: usize,
        cols: usize,
    },
    EigFailed {
        dim: usize,
    },
}

impl std::fmt::Display for MatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatError::DimensionMismatch { op, expected, got } => write!(
                f,
                "{}: dimension mismatch, expected {}x{}, got {}x{}",
                op, expected.0, expected.1, got.0, got.1
            ),
            MatError::InvalidTriplet {
                index,
                row,
                col,
                shape,
            } => write!(
                f,
                "triplet {} at ({}, {}) outside {}x{} matrix",
                index, row, col, shape.0, shape.1
            ),
            MatError::NotSymmetric { residual, tol } => write!(
                f,
                "matrix is not symmetric: relative asymmetry {:.3e} exceeds {:.3e}",
                residual, tol
            ),
            MatError::NotPositiveDefinite {
                pivot_index,
                pivot_value,
            } => write!(
                f,
                "matrix is not positive definite: pivot {} is {:.3e}",
                pivot_index, pivot_value
            ),
            MatError::SingularFactor {
                stage,
                pivot_index,
                pivot_value,
            } => write!(
                f,
                "singular matrix in {} factorization: pivot {} is {:.3e}",
                stage, pivot_index, pivot_value
            ),
            MatError::SvdFailed { rows, cols } => {
                write!(f, "SVD failed to converge on {}x{} matrix", rows, cols)
            }
            MatError::EigFailed { dim } => {
                write!(f, "symmetric eigendecomposition failed on dim {}", dim)
            }
        }
    }
}

impl std::error::Error for MatError {}

/// Matrix with orthonormal columns together with the rank tolerance that
/// produced it. An empty basis (zero columns) is a valid value.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis {
    pub mat: DMat,
    pub tol: f64,
}

impl OrthonormalBasis {
    pub fn dim(&self) -> usize {
        self.mat.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.mat.ncols() == 0
    }

    /// Frobenius norm of `QᵀQ - I`; zero for an exactly orthonormal basis.
    pub fn orthonormality_residual(&self) -> f64 {
        let k = self.mat.ncols();
        let gram = self.mat.transpose() * &self.mat;
        (gram - DMat::identity(k, k)).norm()
    }
}

/// Thin singular value decomposition `M = U diag(sigma) Vᵀ` with singular
/// values sorted in descending order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMat,
    pub sigma: DVec,
    pub vt: DMat,
}

impl ThinSvd {
    pub fn rank(&self, tol: f64) -> usize {
        let smax = if self.sigma.len() > 0 { self.sigma[0] } else { 0.0 };
        if smax == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|&&s| s > tol * smax).count()
    }
}

/// Extreme eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct ExtremeEigen {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub v_min: DVec,
    pub v_max: DVec,
}

/// Thin SVD with descending singular values. Degenerate shapes (zero rows or
/// columns) return empty factors instead of failing.
///
/// The bidiagonalization SVD backing this can return orthonormal factors that
/// do not reconstruct the input on some rank-deficient matrices, so the
/// result is verified and recomputed by one-sided Jacobi when it fails.
pub fn thin_svd(m: &DMat) -> Result<ThinSvd, MatError> {
    let (nr, nc) = m.shape();
    if nr == 0 || nc == 0 {
        return Ok(ThinSvd {
            u: DMat::zeros(nr, 0),
            sigma: DVec::zeros(0),
            vt: DMat::zeros(0, nc),
        });
    }
    let svd = m.clone().try_svd(true, true, f64::EPSILON, 0).ok_or(MatError::SvdFailed {
        rows: nr,
        cols: nc,
    })?;
    let u = svd.u.ok_or(MatError::SvdFailed { rows: nr, cols: nc })?;
    let vt = svd.v_t.ok_or(MatError::SvdFailed { rows: nr, cols: nc })?;
    let sigma = svd.singular_values;

    // Descending order is load-bearing for every rank decision downstream.
    let k = sigma.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());
    let mut u_s = DMat::zeros(nr, k);
    let mut vt_s = DMat::zeros(k, nc);
    let mut sig_s = DVec::zeros(k);
    for (pos, &idx) in order.iter().enumerate() {
        u_s.set_column(pos, &u.column(idx));
        vt_s.set_row(pos, &vt.row(idx));
        sig_s[pos] = sigma[idx];
    }
    let fast = ThinSvd {
        u: u_s,
        sigma: sig_s,
        vt: vt_s,
    };
    if svd_factors_ok(m, &fast) {
        Ok(fast)
    } else {
        Ok(jacobi_svd(m))
    }
}

fn svd_factors_ok(m: &DMat, svd: &ThinSvd) -> bool {
    let k = svd.sigma.len();
    if svd.sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return false;
    }
    let rec = &svd.u * DMat::from_diagonal(&svd.sigma) * &svd.vt;
    let scale = m.norm().max(1e-300);
    if (m - rec).norm() > 1e-10 * scale {
        return false;
    }
    let iu = svd.u.transpose() * &svd.u - DMat::identity(k, k);
    let iv = &svd.vt * svd.vt.transpose() - DMat::identity(k, k);
    iu.norm() <= 1e-10 * (k as f64) && iv.norm() <= 1e-10 * (k as f64)
}

/// One-sided Jacobi SVD on the tall orientation: rotate column pairs until
/// mutually orthogonal, then read off singular values as column norms.
/// Slower than the bidiagonal path but dependable on deficient input.
fn jacobi_svd(m: &DMat) -> ThinSvd {
    let wide = m.ncols() > m.nrows();
    let mut a = if wide { m.transpose() } else { m.clone() };
    let (nr, nc) = a.shape();
    let mut v = DMat::identity(nc, nc);

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..nc {
            for q in p + 1..nc {
                let app = a.column(p).dot(&a.column(p));
                let aqq = a.column(q).dot(&a.column(q));
                let apq = a.column(p).dot(&a.column(q));
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..nr {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = c * aip - s * aiq;
                    a[(i, q)] = s * aip + c * aiq;
                }
                for i in 0..nc {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..nc).collect();
    let norms: Vec<f64> = (0..nc).map(|j| a.column(j).norm()).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());
    let smax = norms[order[0]];

    let mut sigma = DVec::zeros(nc);
    let mut u = DMat::zeros(nr, nc);
    let mut vs = DMat::zeros(nc, nc);
    let mut weak: Vec<usize> = Vec::new();
    for (pos, &j) in order.iter().enumerate() {
        sigma[pos] = norms[j];
        vs.set_column(pos, &v.column(j));
        if norms[j] > smax * f64::EPSILON && norms[j] > 0.0 {
            u.set_column(pos, &(a.column(j) / norms[j]));
        } else {
            weak.push(pos);
        }
    }
    if !weak.is_empty() {
        // Left vectors for (numerically) zero singular values: any
        // orthonormal completion of the strong columns works.
        let strong: Vec<usize> = (0..nc).filter(|p| !weak.contains(p)).collect();
        let mut us = DMat::zeros(nr, strong.len());
        for (i, &p) in strong.iter().enumerate() {
            us.set_column(i, &u.column(p));
        }
        let completed = complete_orthonormal(&us);
        for (i, &p) in weak.iter().enumerate() {
            u.set_column(p, &completed.column(i));
        }
    }

    if wide {
        ThinSvd {
            u: vs,
            sigma,
            vt: u.transpose(),
        }
    } else {
        ThinSvd {
            u,
            sigma,
            vt: vs.transpose(),
        }
    }
}

/// Orthonormal basis of the null space of `m`, at relative tolerance `tol`.
///
/// A zero (or empty-row) matrix has the full identity as kernel; a matrix with
/// trivial kernel yields an empty basis.
pub fn kernel_basis(m: &DMat, tol: f64) -> Result<OrthonormalBasis, MatError> {
    let (nr, nc) = m.shape();
    if nc == 0 {
        return Ok(OrthonormalBasis {
            mat: DMat::zeros(0, 0),
            tol,
        });
    }
    if nr == 0 {
        return Ok(OrthonormalBasis {
            mat: DMat::identity(nc, nc),
            tol,
        });
    }
    let svd = thin_svd(m)?;
    let smax = svd.sigma[0];
    if smax == 0.0 {
        return Ok(OrthonormalBasis {
            mat: DMat::identity(nc, nc),
            tol,
        });
    }
    // Right singular vectors below threshold span ker(M); the thin V only has
    // min(nr, nc) rows, so columns beyond nr (when nc > nr) are recovered by
    // completing V to an orthonormal basis of R^nc.
    let kfull = svd.sigma.len();
    let rank = svd.rank(tol);
    let null_dim = nc - rank;
    let mut basis = DMat::zeros(nc, null_dim);
    for (pos, i) in (rank..kfull).enumerate() {
        basis.set_column(pos, &svd.vt.row(i).transpose());
    }
    if kfull < nc {
        // Complete: columns of V span only a k-dim subspace. Project out and
        // orthonormalize the remainder of an identity sweep.
        let v = svd.vt.transpose();
        let completed = complete_orthonormal(&v);
        for (pos, col) in completed.column_iter().enumerate() {
            basis.set_column(kfull - rank + pos, &col);
        }
    }
    Ok(OrthonormalBasis { mat: basis, tol })
}

/// Orthonormal basis of the range of `m`, at relative tolerance `tol`.
pub fn image_basis(m: &DMat, tol: f64) -> Result<OrthonormalBasis, MatError> {
    let (nr, nc) = m.shape();
    if nr == 0 || nc == 0 {
        return Ok(OrthonormalBasis {
            mat: DMat::zeros(nr, 0),
            tol,
        });
    }
    let svd = thin_svd(m)?;
    if svd.sigma[0] == 0.0 {
        return Ok(OrthonormalBasis {
            mat: DMat::zeros(nr, 0),
            tol,
        });
    }
    let rank = svd.rank(tol);
    Ok(OrthonormalBasis {
        mat: svd.u.columns(0, rank).into_owned(),
        tol,
    })
}

/// Sparse front ends; decisions and tolerances are identical to the dense path.
pub fn kernel_basis_sparse(m: &SparseMatrix, tol: f64) -> Result<OrthonormalBasis, MatError> {
    kernel_basis(&m.to_dense(), tol)
}

pub fn image_basis_sparse(m: &SparseMatrix, tol: f64) -> Result<OrthonormalBasis, MatError> {
    image_basis(&m.to_dense(), tol)
}

/// Extend the orthonormal columns of `v` (n x k, k < n) to a full orthonormal
/// basis and return the n-k new columns.
fn complete_orthonormal(v: &DMat) -> DMat {
    let n = v.nrows();
    let k = v.ncols();
    let mut cols: Vec<DVec> = v.column_iter().map(|c| c.into_owned()).collect();
    let mut extra = DMat::zeros(n, n - k);
    let mut found = 0;
    for i in 0..n {
        if found == n - k {
            break;
        }
        let mut cand = DVec::zeros(n);
        cand[i] = 1.0;
        // Two rounds of classical Gram-Schmidt for numerical safety.
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&cand);
                cand -= c * proj;
            }
        }
        let nrm = cand.norm();
        if nrm > 1e-8 {
            cand /= nrm;
            extra.set_column(found, &cand);
            cols.push(cand);
            found += 1;
        }
    }
    assert_eq!(found, n - k, "orthonormal completion failed");
    extra
}

/// Extreme eigenpairs of a symmetric matrix.
///
/// # Errors
///
/// `NotSymmetric` if the relative asymmetry exceeds [`SYMMETRY_TOL`]. The
/// input is symmetrized before decomposition so roundoff-level asymmetry does
/// not leak into the eigenvectors.
pub fn sym_eig_extreme(m: &DMat) -> Result<ExtremeEigen, MatError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(MatError::DimensionMismatch {
            op: "sym_eig_extreme",
            expected: (n, n),
            got: m.shape(),
        });
    }
    if n == 0 {
        return Err(MatError::EigFailed { dim: 0 });
    }
    check_symmetry(m)?;
    let s = symmetrize(m);
    let eig = nalgebra::SymmetricEigen::new(s);
    let mut imin = 0;
    let mut imax = 0;
    for i in 1..n {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    Ok(ExtremeEigen {
        lambda_min: eig.eigenvalues[imin],
        lambda_max: eig.eigenvalues[imax],
        v_min: eig.eigenvectors.column(imin).into_owned(),
        v_max: eig.eigenvectors.column(imax).into_owned(),
    })
}

/// Full symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eig(m: &DMat) -> Result<(DVec, DMat), MatError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(MatError::DimensionMismatch {
            op: "sym_eig",
            expected: (n, n),
            got: m.shape(),
        });
    }
    if n == 0 {
        return Ok((DVec::zeros(0), DMat::zeros(0, 0)));
    }
    check_symmetry(m)?;
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut vals = DVec::zeros(n);
    let mut vecs = DMat::zeros(n, n);
    for (pos, &i) in order.iter().enumerate() {
        vals[pos] = eig.eigenvalues[i];
        vecs.set_column(pos, &eig.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

/// Inverse square root of a symmetric positive definite matrix.
///
/// # Errors
///
/// `NotPositiveDefinite` if any eigenvalue is below `tol * lambda_max`.
pub fn sym_inv_sqrt(m: &DMat, tol: f64) -> Result<DMat, MatError> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMat::zeros(0, 0));
    }
    let (vals, vecs) = sym_eig(m)?;
    let lmax = vals[n - 1].max(0.0);
    let mut scaled = vecs.clone();
    for i in 0..n {
        if vals[i] <= tol * lmax.max(f64::MIN_POSITIVE) {
            return Err(MatError::NotPositiveDefinite {
                pivot_index: i,
                pivot_value: vals[i],
            });
        }
        let f = 1.0 / vals[i].sqrt();
        scaled.column_mut(i).scale_mut(f);
    }
    Ok(&scaled * vecs.transpose())
}

fn check_symmetry(m: &DMat) -> Result<(), MatError> {
    let mut asym: f64 = 0.0;
    let mut amax: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            amax = amax.max(m[(i, j)].abs().max(m[(j, i)].abs()));
        }
    }
    let rel = if amax > 0.0 { asym / amax } else { 0.0 };
    if rel > SYMMETRY_TOL {
        return Err(MatError::NotSymmetric {
            residual: rel,
            tol: SYMMETRY_TOL,
        });
    }
    Ok(())
}

fn symmetrize(m: &DMat) -> DMat {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a symmetric positive definite matrix. Kept explicit so
/// repeated solves against one factorization stay cheap.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMat,
}

impl SpdFactor {
    pub fn solve(&self, b: &DVec) -> Result<DVec, MatError> {
        let n = self.l.nrows();
        if b.len() != n {
            return Err(MatError::DimensionMismatch {
                op: "spd_solve",
                expected: (n, 1),
                got: (b.len(), 1),
            });
        }
        let mut x = b.clone();
        // L y = b
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        Ok(x)
    }

    pub fn solve_mat(&self, b: &DMat) -> Result<DMat, MatError> {
        let mut out = DMat::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned())?;
            out.set_column(j, &col);
        }
        Ok(out)
    }
}

/// Cholesky factorization with explicit pivot diagnostics on failure.
pub fn spd_factor(m: &DMat) -> Result<SpdFactor, MatError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(MatError::DimensionMismatch {
            op: "spd_factor",
            expected: (n, n),
            got: m.shape(),
        });
    }
    check_symmetry(m)?;
    let mut l = DMat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(MatError::NotPositiveDefinite {
                pivot_index: j,
                pivot_value: d,
            });
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(SpdFactor { l })
}

/// Solve `M x = b` for symmetric positive definite `M`.
pub fn solve_spd(m: &DMat, b: &DVec) -> Result<DVec, MatError> {
    spd_factor(m)?.solve(b)
}

/// LU factorization with partial pivoting; singularity is reported with the
/// offending pivot index and magnitude.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl LuFactor {
    pub fn solve(&self, b: &DVec) -> Result<DVec, MatError> {
        if b.len() != self.n {
            return Err(MatError::DimensionMismatch {
                op: "lu_solve",
                expected: (self.n, 1),
                got: (b.len(), 1),
            });
        }
        self.lu.solve(b).ok_or(MatError::SingularFactor {
            stage: "dense lu solve",
            pivot_index: 0,
            pivot_value: 0.0,
        })
    }

    pub fn solve_mat(&self, b: &DMat) -> Result<DMat, MatError> {
        let mut out = DMat::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned())?;
            out.set_column(j, &col);
        }
        Ok(out)
    }
}

pub fn lu_factor(m: &DMat) -> Result<LuFactor, MatError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(MatError::DimensionMismatch {
            op: "lu_factor",
            expected: (n, n),
            got: m.shape(),
        });
    }
    let scale = m.amax();
    let lu = m.clone().lu();
    let u = lu.u();
    for i in 0..n {
        let piv = u[(i, i)];
        if piv.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(MatError::SingularFactor {
                stage: "dense lu",
                pivot_index: i,
                pivot_value: piv,
            });
        }
    }
    Ok(LuFactor { lu, n })
}

/// Solve `M x = b` by LU with partial pivoting.
pub fn solve_lu(m: &DMat, b: &DVec) -> Result<DVec, MatError> {
    lu_factor(m)?.solve(b)
}

/// Spectral norm (largest singular value).
pub fn two_norm(m: &DMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    thin_svd(m).map(|s| if s.sigma.len() > 0 { s.sigma[0] } else { 0.0 }).unwrap_or(0.0)
}

#[cfg(test)]
mod tests;
