//! Projection of the silent magnetic components out of the field/circuit DAE,
//! index-one certification, condensed block form, and the equivalent ODE.
//!
//! The full system couples conducting field unknowns a1, non-conducting field
//! unknowns a2, and port currents i. Splitting a2 along im(C2ᵀ) ⊕ ker(C2) and
//! eliminating the currents yields a square system in x_r = [a1; a21] of size
//! n_r = n1 + n2 - k2:
//!
//! ```text
//!   d/dt E_r x_r = A_r(x_r) x_r + B_r u,        y = C_r x_r,
//! ```
//!
//! with constant symmetric PSD mass E_r = F_sig M_sr F_sigᵀ and symmetric NSD
//! stiffness A_r(x) = -F_nu M_nu(F_nuᵀx) F_nuᵀ. The projected-out directions
//! ker(C2) never influence the dynamics or the output, so the reduction is
//! exact. Three further constructions hang off the regularized system: the
//! index-one certificate (iteration matrix E_r - J_h(x)Q is nonsingular and
//! state independent), the condensed congruence W that block-diagonalizes the
//! pencil, and the Schur-complement ODE in [a1; Zᵀa21] with its linear
//! recovery map back to x_r.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::integrator::ImplicitOde;
use crate::matcore::{self, DMat, DVec, MatError};
use crate::mqs::MqsDae;

/// Relative singular value cutoff for every rank decision in this module.
pub const RANK_TOL: f64 = 1e-10;
/// Relative residual allowed in the condensed block pattern.
pub const STRUCTURE_TOL: f64 = 1e-10;
/// Relative deviation allowed between state samples for constant matrices.
pub const INDEPENDENCE_TOL: f64 = 1e-10;
const SAMPLE_COUNT: usize = 3;

#[derive(Debug)]
pub enum RegError {
    Mat(MatError),
    /// A labeled symmetric factorization failed (matrix named in `what`).
    Singular { what: &'static str, source: MatError },
    /// dim im(C2ᵀ) + dim ker(C2) disagreed with n2 (inconsistent rank pair).
    RankInconsistency { image_dim: usize, kernel_dim: usize, n2: usize },
    /// Yhatᵀ X2 lost column rank, so ports are not independently coupled.
    WindingRank { expected: usize, got: usize },
    /// Condensed block sizes failed to add up to n_r.
    DimensionCount { n_s: usize, n_0: usize, n_inf: usize, n_r: usize },
    BlockStructure { matrix: &'static str, residual: f64, tol: f64 },
    StateDependent { what: &'static str, residual: f64, tol: f64 },
    /// Bᵀ E⁻ B failed to reproduce R⁻¹.
    OutputIdentity { residual: f64, tol: f64 },
    KernelStructure { detail: String },
}

impl fmt::Display for RegError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegError::Mat(e) => write!(f, "linear algebra failure: {}", e),
            RegError::Singular { what, source } => {
                write!(f, "{} is numerically singular: {}", what, source)
            }
            RegError::RankInconsistency {
                image_dim,
                kernel_dim,
                n2,
            } => write!(
                f,
                "rank decisions disagree: dim im(C2^T) = {} plus dim ker(C2) = {} != n2 = {}",
                image_dim, kernel_dim, n2
            ),
            RegError::WindingRank { expected, got } => write!(
                f,
                "projected winding matrix must have full column rank {}, kernel check gives rank {}",
                expected, got
            ),
            RegError::DimensionCount { n_s, n_0, n_inf, n_r } => write!(
                f,
                "condensed dimensions n_s={} + n_0={} + n_inf={} != n_r={}",
                n_s, n_0, n_inf, n_r
            ),
            RegError::BlockStructure { matrix, residual, tol } => write!(
                f,
                "condensed pattern violated in {}: off-pattern residual {:.3e} exceeds {:.3e}",
                matrix, residual, tol
            ),
            RegError::StateDependent { what, residual, tol } => write!(
                f,
                "{} must be state independent: sampled deviation {:.3e} exceeds {:.3e}",
                what, residual, tol
            ),
            RegError::OutputIdentity { residual, tol } => write!(
                f,
                "B^T E^- B != R^-1: relative residual {:.3e} exceeds {:.3e}",
                residual, tol
            ),
            RegError::KernelStructure { detail } => {
                write!(f, "kernel structure assertion failed: {}", detail)
            }
        }
    }
}

impl std::error::Error for RegError {}

impl From<MatError> for RegError {
    fn from(e: MatError) -> Self {
        RegError::Mat(e)
    }
}

/// Constant congruence W with WᵀE_rW = diag(E11, I, 0) and
/// Wᵀ A_r(x) W = diag(A11(x), 0, -I).
#[derive(Debug, Clone)]
pub struct CondensedForm {
    pub w: DMat,
    pub n_s: usize,
    pub n_0: usize,
    pub n_inf: usize,
    pub e11: DMat,
}

impl CondensedForm {
    /// Leading block of columns of W (the dynamic subspace basis).
    pub fn w1(&self) -> DMat {
        self.w.columns(0, self.n_s).into_owned()
    }

    /// Dynamic stiffness block A11(x) = W1ᵀ A_r(x) W1; symmetric negative
    /// definite for every state.
    pub fn a11(&self, reg: &RegularizedSystem, x_r: &DVec) -> Result<DMat, RegError> {
        let w1 = self.w.columns(0, self.n_s);
        let a = reg.a_r(x_r)?;
        Ok(symmetrize(&(w1.transpose() * a * w1)))
    }
}

/// Result of the index-one test: smallest singular value of the iteration
/// matrix G1 = E_r - J_h(x)Q and the sampled state dependence of G1.
#[derive(Debug, Clone, Copy)]
pub struct IndexOneCertificate {
    pub sigma_min: f64,
    pub threshold: f64,
    pub e_norm: f64,
    pub state_dependence: f64,
    pub passed: bool,
}

/// The projected field/circuit system in x_r = [a1; a21], plus every derived
/// constant: condensed form, reflexive pseudoinverse, infinite-eigenvalue
/// projector, and the state-independent output matrix.
#[derive(Debug, Clone)]
pub struct RegularizedSystem {
    dae: MqsDae,
    n1: usize,
    q: usize,
    m: usize,
    k2: usize,
    yhat: DMat,
    y_c2: DMat,
    y_ker: DMat,
    e_r: DMat,
    a_frozen: DMat,
    b_r: DMat,
    f_sigma: DMat,
    m_sigma_r: DMat,
    f_nu: DMat,
    z_hat: DMat,
    r_inv: DMat,
    k11f: DMat,
    k12h: DMat,
    k22h: DMat,
    lift: DMat,
    condensed: CondensedForm,
    e_pinv: DMat,
    pi_inf: DMat,
    c_r: DMat,
}

/// Builds the regularized system from the assembled DAE, including the
/// condensed form and output matrix, enforcing every constancy claim at
/// sampled states on the way.
pub fn regularize(dae: MqsDae) -> Result<RegularizedSystem, RegError> {
    let p = &dae.problem;
    let (n1, n2, m) = (p.n1, p.n2, p.m);

    let cd = p.cd.to_dense();
    let c1 = cd.columns(0, n1).into_owned();
    let c2 = cd.columns(n1, n2).into_owned();

    let y_c2 = matcore::kernel_basis(&c2, RANK_TOL)?.mat;
    let k2 = y_c2.ncols();
    // With a trivial kernel the regularization is the identity embedding;
    // any orthonormal image basis would only rotate coordinates for nothing.
    let yhat = if k2 == 0 {
        DMat::identity(n2, n2)
    } else {
        matcore::image_basis(&c2.transpose(), RANK_TOL)?.mat
    };
    if yhat.ncols() + k2 != n2 {
        return Err(RegError::RankInconsistency {
            image_dim: yhat.ncols(),
            kernel_dim: k2,
            n2,
        });
    }
    let q = n2 - k2;
    let n_r = n1 + q;

    let x1 = p.x1();
    let x2 = p.x2();
    let yhat_x2 = yhat.transpose() * &x2;
    let y_ker = matcore::kernel_basis(&yhat_x2.transpose(), RANK_TOL)?.mat;
    if y_ker.ncols() != q - m {
        return Err(RegError::WindingRank {
            expected: m,
            got: q - y_ker.ncols(),
        });
    }

    let r_inv = symmetrize(
        &matcore::spd_factor(&p.r)
            .map_err(|e| RegError::Singular {
                what: "resistance matrix R",
                source: e,
            })?
            .solve_mat(&DMat::identity(m, m))?,
    );
    let m11 = p.m11.to_dense();

    let mut f_sigma = DMat::zeros(n_r, n1 + m);
    f_sigma.view_mut((0, 0), (n1, n1)).fill_with_identity();
    f_sigma.view_mut((0, n1), (n1, m)).copy_from(&x1);
    f_sigma.view_mut((n1, n1), (q, m)).copy_from(&yhat_x2);
    let mut m_sigma_r = DMat::zeros(n1 + m, n1 + m);
    m_sigma_r.view_mut((0, 0), (n1, n1)).copy_from(&m11);
    m_sigma_r.view_mut((n1, n1), (m, m)).copy_from(&r_inv);
    let e_r = symmetrize(&(&f_sigma * &m_sigma_r * f_sigma.transpose()));

    let kf = dae.k_frozen().to_dense();
    let k11f = kf.view((0, 0), (n1, n1)).into_owned();
    let k12 = kf.view((0, n1), (n1, n2)).into_owned();
    let k22 = kf.view((n1, n1), (n2, n2)).into_owned();
    let k12h = &k12 * &yhat;
    let k22h = symmetrize(&(yhat.transpose() * &k22 * &yhat));
    let mut a_frozen = DMat::zeros(n_r, n_r);
    a_frozen.view_mut((0, 0), (n1, n1)).copy_from(&-&k11f);
    a_frozen.view_mut((0, n1), (n1, q)).copy_from(&-&k12h);
    a_frozen.view_mut((n1, 0), (q, n1)).copy_from(&-k12h.transpose());
    a_frozen.view_mut((n1, n1), (q, q)).copy_from(&-&k22h);

    let mut b_stack = DMat::zeros(n_r, m);
    b_stack.view_mut((0, 0), (n1, m)).copy_from(&x1);
    b_stack.view_mut((n1, 0), (q, m)).copy_from(&yhat_x2);
    let b_r = &b_stack * &r_inv;

    let nf = cd.nrows();
    let c2yhat = &c2 * &yhat;
    let mut f_nu = DMat::zeros(n_r, nf);
    f_nu.view_mut((0, 0), (n1, nf)).copy_from(&c1.transpose());
    f_nu.view_mut((n1, 0), (q, nf)).copy_from(&c2yhat.transpose());

    let s_m = symmetrize(&(yhat_x2.transpose() * &yhat_x2));
    let s_m_inv = matcore::spd_factor(&s_m)
        .map_err(|e| RegError::Singular {
            what: "port coupling gram X2ᵀYhat Yhatᵀ X2",
            source: e,
        })?
        .solve_mat(&DMat::identity(m, m))?;
    let z_hat = &yhat_x2 * symmetrize(&s_m_inv);

    let mut lift = DMat::zeros(n1 + n2, n_r);
    lift.view_mut((0, 0), (n1, n1)).fill_with_identity();
    lift.view_mut((n1, n1), (n2, q)).copy_from(&yhat);

    let mut reg = RegularizedSystem {
        dae,
        n1,
        q,
        m,
        k2,
        yhat,
        y_c2,
        y_ker,
        e_r,
        a_frozen,
        b_r,
        f_sigma,
        m_sigma_r,
        f_nu,
        z_hat,
        r_inv,
        k11f,
        k12h,
        k22h,
        lift,
        condensed: CondensedForm {
            w: DMat::zeros(0, 0),
            n_s: 0,
            n_0: 0,
            n_inf: 0,
            e11: DMat::zeros(0, 0),
        },
        e_pinv: DMat::zeros(0, 0),
        pi_inf: DMat::zeros(0, 0),
        c_r: DMat::zeros(0, 0),
    };

    let samples = reg.sample_states(SAMPLE_COUNT, 42);
    reg.condensed = build_condensed(&reg, &samples)?;
    reg.e_pinv = build_pseudoinverse(&reg)?;
    reg.pi_inf = build_infinity_projector(&reg)?;
    reg.c_r = build_output_matrix(&reg, &samples)?;
    Ok(reg)
}

impl RegularizedSystem {
    pub fn n_r(&self) -> usize {
        self.n1 + self.q
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    /// Dimension of the retained non-conducting block, q = n2 - k2.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k2(&self) -> usize {
        self.k2
    }

    pub fn dae(&self) -> &MqsDae {
        &self.dae
    }

    /// Basis of im(C2ᵀ); identity when ker(C2) is trivial.
    pub fn yhat(&self) -> &DMat {
        &self.yhat
    }

    /// Orthonormal basis of ker(C2), the projected-out directions.
    pub fn y_c2(&self) -> &DMat {
        &self.y_c2
    }

    /// Orthonormal basis of ker(X2ᵀ Yhat).
    pub fn y_ker(&self) -> &DMat {
        &self.y_ker
    }

    pub fn e_r(&self) -> &DMat {
        &self.e_r
    }

    pub fn b_r(&self) -> &DMat {
        &self.b_r
    }

    pub fn f_sigma(&self) -> &DMat {
        &self.f_sigma
    }

    pub fn m_sigma_r(&self) -> &DMat {
        &self.m_sigma_r
    }

    pub fn f_nu(&self) -> &DMat {
        &self.f_nu
    }

    pub fn z_hat(&self) -> &DMat {
        &self.z_hat
    }

    pub fn r_inv(&self) -> &DMat {
        &self.r_inv
    }

    pub fn condensed_form(&self) -> &CondensedForm {
        &self.condensed
    }

    /// Symmetric reflexive pseudoinverse of E_r.
    pub fn e_pinv(&self) -> &DMat {
        &self.e_pinv
    }

    /// Projector onto the deflating subspace of the infinite eigenvalue.
    pub fn pi_inf(&self) -> &DMat {
        &self.pi_inf
    }

    /// State-independent output matrix, y = C_r x_r.
    pub fn output_matrix(&self) -> &DMat {
        &self.c_r
    }

    /// Embedding x_r -> a = [a1; Yhat a21] of the full magnetic potential.
    pub fn lift(&self) -> &DMat {
        &self.lift
    }

    /// Full potential vector represented by a regularized state.
    pub fn lift_potential(&self, x_r: &DVec) -> DVec {
        &self.lift * x_r
    }

    /// Coordinates of a full potential whose a2 part lies in im(C2ᵀ).
    pub fn project_potential(&self, a: &DVec) -> DVec {
        let a1 = a.rows(0, self.n1);
        let a2 = a.rows(self.n1, self.dae.problem.n2);
        let a21 = self.yhat.transpose() * a2;
        let mut x = DVec::zeros(self.n_r());
        x.rows_mut(0, self.n1).copy_from(&a1);
        x.rows_mut(self.n1, self.q).copy_from(&a21);
        x
    }

    /// Stiffness matrix A_r(x_r), assembled exactly from the full operator.
    pub fn a_r(&self, x_r: &DVec) -> Result<DMat, RegError> {
        let a = self.lift_potential(x_r);
        let k = self.dae.assemble_k(&a)?.to_dense();
        Ok(symmetrize(
            &(-(self.lift.transpose() * k * &self.lift)),
        ))
    }

    /// Jacobian of h(x) = A_r(x)x: the frozen stiffness plus the saturation
    /// Jacobian in the conducting head block.
    pub fn h_jacobian(&self, x_r: &DVec) -> Result<DMat, RegError> {
        let a1 = x_r.rows(0, self.n1).into_owned();
        let sj = self.dae.saturation_jacobian(&a1)?.to_dense();
        let mut j = self.a_frozen.clone();
        let mut head = j.view_mut((0, 0), (self.n1, self.n1));
        head -= &sj;
        Ok(j)
    }

    /// Iteration matrix G1(x) = E_r - J_h(x) Q with Q = blockdiag(0, YYᵀ).
    pub fn index_matrix(&self, x_r: &DVec) -> Result<DMat, RegError> {
        let n_r = self.n_r();
        let mut qmat = DMat::zeros(n_r, n_r);
        qmat.view_mut((self.n1, self.n1), (self.q, self.q))
            .copy_from(&(&self.y_ker * self.y_ker.transpose()));
        Ok(&self.e_r - self.h_jacobian(x_r)? * qmat)
    }

    /// Certifies index one: G1 nonsingular (smallest singular value above
    /// RANK_TOL relative to |E_r|) and independent of the sampled state.
    pub fn check_index_one(&self, seed: u64) -> Result<IndexOneCertificate, RegError> {
        let samples = self.sample_states(SAMPLE_COUNT, seed);
        let mats: Vec<DMat> = samples
            .iter()
            .map(|x| self.index_matrix(x))
            .collect::<Result<_, _>>()?;
        let base = mats[0].norm();
        let mut dep: f64 = 0.0;
        for i in 0..mats.len() {
            for j in (i + 1)..mats.len() {
                dep = dep.max((&mats[i] - &mats[j]).norm() / base.max(f64::MIN_POSITIVE));
            }
        }
        let svd = matcore::thin_svd(&mats[0])?;
        let sigma_min = svd.sigma[svd.sigma.len() - 1];
        let e_norm = matcore::two_norm(&self.e_r);
        let threshold = RANK_TOL * e_norm;
        Ok(IndexOneCertificate {
            sigma_min,
            threshold,
            e_norm,
            state_dependence: dep,
            passed: sigma_min > threshold && dep <= INDEPENDENCE_TOL,
        })
    }

    /// Numericly confirms that the common kernel of the mass blockdiag(M11, 0)
    /// and K(a) is exactly the lifted ker(C2), at sampled potentials.
    pub fn verify_kernel_structure(&self, seed: u64) -> Result<(), RegError> {
        let n = self.dae.n();
        let n1 = self.n1;
        let mut msig = DMat::zeros(n, n);
        msig.view_mut((0, 0), (n1, n1))
            .copy_from(&self.dae.problem.m11.to_dense());
        let mut lifted_kernel = DMat::zeros(n, self.k2);
        lifted_kernel
            .view_mut((n1, 0), (self.dae.problem.n2, self.k2))
            .copy_from(&self.y_c2);

        for a in self.sample_potentials(SAMPLE_COUNT, seed) {
            let k = self.dae.assemble_k(&a)?.to_dense();
            let kscale = k.norm().max(f64::MIN_POSITIVE);
            if self.k2 > 0 {
                let res = (&k * &lifted_kernel).norm() / kscale;
                if res > RANK_TOL {
                    return Err(RegError::KernelStructure {
                        detail: format!("K(a) [0; Y_C2] residual {:.3e}", res),
                    });
                }
            }
            // Row blocks are rescaled to a common magnitude so the rank
            // decision is not skewed by the mass/stiffness scale gap.
            let alpha = kscale / msig.norm().max(f64::MIN_POSITIVE);
            let mut stacked = DMat::zeros(2 * n, n);
            stacked.view_mut((0, 0), (n, n)).copy_from(&(&msig * alpha));
            stacked.view_mut((n, 0), (n, n)).copy_from(&k);
            let common = matcore::kernel_basis(&stacked, RANK_TOL)?.mat;
            if common.ncols() != self.k2 {
                return Err(RegError::KernelStructure {
                    detail: format!(
                        "common kernel dimension {} != k2 = {}",
                        common.ncols(),
                        self.k2
                    ),
                });
            }
            if self.k2 > 0 {
                let proj = &lifted_kernel * (lifted_kernel.transpose() * &common);
                let res = (&common - proj).norm();
                if res > RANK_TOL * (self.k2 as f64).sqrt() {
                    return Err(RegError::KernelStructure {
                        detail: format!("common kernel leaves im[0; Y_C2] by {:.3e}", res),
                    });
                }
            }
        }
        Ok(())
    }

    /// Schur-eliminates the algebraic directions into an ODE in [a1; Zᵀa21].
    pub fn to_ode(&self) -> Result<OdeSystem, RegError> {
        let (n1, q, m) = (self.n1, self.q, self.m);
        let n_ode = n1 + m;
        let n_free = q - m;

        let yhat_x2 = self.yhat.transpose() * self.dae.problem.x2();
        let s_gram = symmetrize(&(yhat_x2.transpose() * &yhat_x2));
        let z = &yhat_x2
            * matcore::sym_inv_sqrt(&s_gram, 1e-12).map_err(|e| RegError::Singular {
                what: "port coupling gram for Z",
                source: e,
            })?;
        let zz = (z.transpose() * &z - DMat::identity(m, m)).norm();
        let zy = (z.transpose() * &self.y_ker).norm();
        if zz > STRUCTURE_TOL * (m as f64).sqrt().max(1.0) || zy > STRUCTURE_TOL {
            return Err(RegError::BlockStructure {
                matrix: "Z columns (ZᵀZ = I, ZᵀY = 0)",
                residual: zz.max(zy),
                tol: STRUCTURE_TOL,
            });
        }

        let z2 = &self.yhat * &z;
        let y2 = &self.yhat * &self.y_ker;

        let s_free = symmetrize(&(self.y_ker.transpose() * &self.k22h * &self.y_ker));
        let s_free_inv = if n_free > 0 {
            symmetrize(
                &matcore::spd_factor(&s_free)
                    .map_err(|e| RegError::Singular {
                        what: "free-direction stiffness Y2ᵀK22Y2",
                        source: e,
                    })?
                    .solve_mat(&DMat::identity(n_free, n_free))?,
            )
        } else {
            DMat::zeros(0, 0)
        };

        let k12z = &self.k12h * &z;
        let zk22z = symmetrize(&(z.transpose() * &self.k22h * &z));
        let mut a_base = DMat::zeros(n_ode, n_ode);
        a_base.view_mut((0, 0), (n1, n1)).copy_from(&-&self.k11f);
        a_base.view_mut((0, n1), (n1, m)).copy_from(&-&k12z);
        a_base.view_mut((n1, 0), (m, n1)).copy_from(&-k12z.transpose());
        a_base.view_mut((n1, n1), (m, m)).copy_from(&-&zk22z);

        let mut g = DMat::zeros(n_ode, n_free);
        g.view_mut((0, 0), (n1, n_free))
            .copy_from(&(&self.k12h * &self.y_ker));
        g.view_mut((n1, 0), (m, n_free))
            .copy_from(&(z.transpose() * &self.k22h * &self.y_ker));
        let schur = symmetrize(&(&g * &s_free_inv * g.transpose()));
        let a_frozen = a_base + schur;

        let mut tz = DMat::zeros(self.n_r(), n_ode);
        tz.view_mut((0, 0), (n1, n1)).fill_with_identity();
        tz.view_mut((n1, n1), (q, m)).copy_from(&z);
        let e_ode = symmetrize(&(tz.transpose() * &self.e_r * &tz));
        matcore::spd_factor(&e_ode).map_err(|e| RegError::Singular {
            what: "ODE mass matrix",
            source: e,
        })?;

        let mut b_stack = DMat::zeros(n_ode, m);
        b_stack
            .view_mut((0, 0), (n1, m))
            .copy_from(&self.dae.problem.x1());
        b_stack
            .view_mut((n1, 0), (m, m))
            .copy_from(&(z.transpose() * &yhat_x2));
        let b_ode = &b_stack * &self.r_inv;

        // big = Yhatᵀ [K21  K22 Z2], the coupling seen by the retained block.
        let mut big = DMat::zeros(q, n_ode);
        big.view_mut((0, 0), (q, n1))
            .copy_from(&self.k12h.transpose());
        big.view_mut((0, n1), (q, m))
            .copy_from(&(&self.k22h * &z));
        let y_big = self.y_ker.transpose() * &big;
        let corrected = &big - &self.k22h * &self.y_ker * &s_free_inv * &y_big;
        let c_ode = self.z_hat.transpose() * corrected;

        let mut recovery = DMat::zeros(self.n_r(), n_ode);
        recovery.view_mut((0, 0), (n1, n1)).fill_with_identity();
        recovery.view_mut((n1, n1), (q, m)).copy_from(&z);
        let w_map = -(&self.y_ker * &s_free_inv * y_big);
        let mut bottom = recovery.view_mut((n1, 0), (q, n_ode));
        bottom += &w_map;
        let lift_full = &self.lift * &recovery;

        Ok(OdeSystem {
            dae: self.dae.clone(),
            n1,
            m,
            e_ode,
            a_frozen,
            b_ode,
            c_ode,
            z,
            z2,
            y2,
            recovery,
            lift_full,
        })
    }

    /// Deterministic sampled states with lifted group fluxes scaled inside
    /// the certified range of the reluctivity curve.
    pub fn sample_states(&self, count: usize, seed: u64) -> Vec<DVec> {
        let n_r = self.n_r();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|k| {
                let raw = DVec::from_fn(n_r, |_, _| rng.random_range(-1.0..1.0));
                let frac = 0.25 + 0.5 * (k as f64) / (count.max(2) - 1) as f64;
                self.rescale_to_flux(raw, frac)
            })
            .collect()
    }

    fn sample_potentials(&self, count: usize, seed: u64) -> Vec<DVec> {
        self.sample_states(count, seed)
            .into_iter()
            .map(|x| self.lift_potential(&x))
            .collect()
    }

    fn rescale_to_flux(&self, raw: DVec, frac: f64) -> DVec {
        let a = self.lift_potential(&raw);
        let mut zmax: f64 = 0.0;
        for gr in self.dae.groups() {
            zmax = zmax.max(gr.flux(&a).norm());
        }
        if zmax == 0.0 {
            return raw;
        }
        let target = frac * self.dae.problem.curve.zeta_max;
        raw * (target / zmax)
    }
}

fn build_condensed(
    reg: &RegularizedSystem,
    samples: &[DVec],
) -> Result<CondensedForm, RegError> {
    let n_r = reg.n_r();
    let n_inf = reg.y_ker.ncols();
    let mut y_sigma = DMat::zeros(n_r, n_inf);
    y_sigma
        .view_mut((reg.n1, 0), (reg.q, n_inf))
        .copy_from(&reg.y_ker);

    let y_nu = matcore::kernel_basis(&reg.f_nu.transpose(), RANK_TOL)?.mat;
    let n_0 = y_nu.ncols();

    // W1 spans the complement of [E_r Y_nu, A_r Y_sigma]; columns are
    // normalized first so the huge stiffness/mass scale gap cannot push the
    // mass columns below the rank cutoff.
    let e_y = &reg.e_r * &y_nu;
    let a_y = &reg.a_frozen * &y_sigma;
    let mut span = DMat::zeros(n_r, n_0 + n_inf);
    span.view_mut((0, 0), (n_r, n_0)).copy_from(&e_y);
    span.view_mut((0, n_0), (n_r, n_inf)).copy_from(&a_y);
    for mut col in span.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= nrm;
        }
    }
    let w1 = matcore::kernel_basis(&span.transpose(), RANK_TOL)?.mat;
    let n_s = w1.ncols();
    if n_s + n_0 + n_inf != n_r {
        return Err(RegError::DimensionCount { n_s, n_0, n_inf, n_r });
    }

    let w2 = if n_0 > 0 {
        let block = symmetrize(&(y_nu.transpose() * &reg.e_r * &y_nu));
        &y_nu
            * matcore::sym_inv_sqrt(&block, 1e-12).map_err(|e| RegError::Singular {
                what: "null-flux mass block YnuᵀE_rYnu",
                source: e,
            })?
    } else {
        DMat::zeros(n_r, 0)
    };
    let w3 = if n_inf > 0 {
        let block = symmetrize(&(-(y_sigma.transpose() * &reg.a_frozen * &y_sigma)));
        &y_sigma
            * matcore::sym_inv_sqrt(&block, 1e-12).map_err(|e| RegError::Singular {
                what: "algebraic stiffness block -YsigᵀA_rYsig",
                source: e,
            })?
    } else {
        DMat::zeros(n_r, 0)
    };

    let mut w = DMat::zeros(n_r, n_r);
    w.view_mut((0, 0), (n_r, n_s)).copy_from(&w1);
    w.view_mut((0, n_s), (n_r, n_0)).copy_from(&w2);
    w.view_mut((0, n_s + n_0), (n_r, n_inf)).copy_from(&w3);

    let e11 = symmetrize(&(w1.transpose() * &reg.e_r * &w1));
    let cf = CondensedForm { w, n_s, n_0, n_inf, e11 };

    let res_e = pattern_residual(&(cf.w.transpose() * &reg.e_r * &cf.w), &cf, true);
    if res_e > STRUCTURE_TOL {
        return Err(RegError::BlockStructure {
            matrix: "WᵀE_rW",
            residual: res_e,
            tol: STRUCTURE_TOL,
        });
    }
    for x in samples {
        let a = reg.a_r(x)?;
        let res_a = pattern_residual(&(cf.w.transpose() * a * &cf.w), &cf, false);
        if res_a > STRUCTURE_TOL {
            return Err(RegError::BlockStructure {
                matrix: "WᵀA_r(x)W",
                residual: res_a,
                tol: STRUCTURE_TOL,
            });
        }
    }
    Ok(cf)
}

/// Frobenius norm of everything outside the admissible pattern, relative to
/// the on-pattern part. For the mass side the pattern is diag(E11, I, 0); for
/// the stiffness side diag(A11, 0, -I).
fn pattern_residual(mat: &DMat, cf: &CondensedForm, mass_side: bool) -> f64 {
    let (n_s, n_0, n_inf) = (cf.n_s, cf.n_0, cf.n_inf);
    let mut pattern = DMat::zeros(mat.nrows(), mat.ncols());
    pattern
        .view_mut((0, 0), (n_s, n_s))
        .copy_from(&mat.view((0, 0), (n_s, n_s)).into_owned());
    if mass_side {
        pattern
            .view_mut((n_s, n_s), (n_0, n_0))
            .fill_with_identity();
    } else {
        let mut tail = pattern.view_mut((n_s + n_0, n_s + n_0), (n_inf, n_inf));
        tail.fill_with_identity();
        tail *= -1.0;
    }
    let off = (mat - &pattern).norm();
    off / pattern.norm().max(f64::MIN_POSITIVE)
}

fn build_pseudoinverse(reg: &RegularizedSystem) -> Result<DMat, RegError> {
    let cf = &reg.condensed;
    let e11_inv = if cf.n_s > 0 {
        symmetrize(
            &matcore::spd_factor(&cf.e11)
                .map_err(|e| RegError::Singular {
                    what: "condensed mass block E11",
                    source: e,
                })?
                .solve_mat(&DMat::identity(cf.n_s, cf.n_s))?,
        )
    } else {
        DMat::zeros(0, 0)
    };
    let n_r = reg.n_r();
    let mut core = DMat::zeros(n_r, n_r);
    core.view_mut((0, 0), (cf.n_s, cf.n_s)).copy_from(&e11_inv);
    core.view_mut((cf.n_s, cf.n_s), (cf.n_0, cf.n_0))
        .fill_with_identity();
    Ok(symmetrize(&(&cf.w * core * cf.w.transpose())))
}

fn build_infinity_projector(reg: &RegularizedSystem) -> Result<DMat, RegError> {
    let n_r = reg.n_r();
    let n_inf = reg.y_ker.ncols();
    if n_inf == 0 {
        return Ok(DMat::zeros(n_r, n_r));
    }
    let mut y_sigma = DMat::zeros(n_r, n_inf);
    y_sigma
        .view_mut((reg.n1, 0), (reg.q, n_inf))
        .copy_from(&reg.y_ker);
    // Y_sigᵀ A_r(x) is constant: the nonlinear head block meets Y_sig's zero
    // rows, so the frozen stiffness is exact here.
    let ya = y_sigma.transpose() * &reg.a_frozen;
    let block = symmetrize(&(&ya * &y_sigma));
    let neg_inv = matcore::spd_factor(&(-&block))
        .map_err(|e| RegError::Singular {
            what: "algebraic stiffness block YsigᵀA_rYsig",
            source: e,
        })?
        .solve_mat(&DMat::identity(n_inf, n_inf))?;
    Ok(&y_sigma * (-neg_inv) * ya)
}

fn build_output_matrix(
    reg: &RegularizedSystem,
    samples: &[DVec],
) -> Result<DMat, RegError> {
    let bt_epinv = reg.b_r.transpose() * &reg.e_pinv;
    let r_res = (&bt_epinv * &reg.b_r - &reg.r_inv).norm()
        / reg.r_inv.norm().max(f64::MIN_POSITIVE);
    if r_res > INDEPENDENCE_TOL {
        return Err(RegError::OutputIdentity {
            residual: r_res,
            tol: INDEPENDENCE_TOL,
        });
    }
    let mats: Vec<DMat> = samples
        .iter()
        .map(|x| reg.a_r(x).map(|a| -(&bt_epinv * a)))
        .collect::<Result<_, _>>()?;
    let base = mats[0].norm().max(f64::MIN_POSITIVE);
    for i in 0..mats.len() {
        for j in (i + 1)..mats.len() {
            let dep = (&mats[i] - &mats[j]).norm() / base;
            if dep > INDEPENDENCE_TOL {
                return Err(RegError::StateDependent {
                    what: "output matrix C_r",
                    residual: dep,
                    tol: INDEPENDENCE_TOL,
                });
            }
        }
    }
    Ok(mats.into_iter().next().unwrap())
}

/// The Schur-complement ODE system in x = [a1; Zᵀa21], equivalent to the
/// regularized DAE along solutions, with SPD mass.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    dae: MqsDae,
    n1: usize,
    m: usize,
    e_ode: DMat,
    a_frozen: DMat,
    b_ode: DMat,
    c_ode: DMat,
    z: DMat,
    z2: DMat,
    y2: DMat,
    recovery: DMat,
    lift_full: DMat,
}

impl OdeSystem {
    pub fn n_ode(&self) -> usize {
        self.n1 + self.m
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dae(&self) -> &MqsDae {
        &self.dae
    }

    pub fn e_ode(&self) -> &DMat {
        &self.e_ode
    }

    /// Frozen (zero-flux) stiffness including the constant Schur correction.
    pub fn a_frozen(&self) -> &DMat {
        &self.a_frozen
    }

    pub fn b_ode(&self) -> &DMat {
        &self.b_ode
    }

    pub fn c_ode(&self) -> &DMat {
        &self.c_ode
    }

    pub fn z(&self) -> &DMat {
        &self.z
    }

    pub fn z2(&self) -> &DMat {
        &self.z2
    }

    pub fn y2(&self) -> &DMat {
        &self.y2
    }

    /// Linear map back to the regularized coordinates, x_r = recovery · x.
    pub fn recovery(&self) -> &DMat {
        &self.recovery
    }

    /// Embedding of the ODE state into the full potential vector.
    pub fn lift_full(&self) -> &DMat {
        &self.lift_full
    }

    /// Stiffness matrix A(x) with the eliminated directions folded in.
    pub fn a_ode(&self, x: &DVec) -> Result<DMat, RegError> {
        let a1 = x.rows(0, self.n1).into_owned();
        let mut base = self.a_frozen.clone();
        let delta = self.delta_k11(&a1)?;
        let mut head = base.view_mut((0, 0), (self.n1, self.n1));
        head -= &delta;
        Ok(base)
    }

    /// K11(a1) - K11(0) from the exact assembly, dense on the head block.
    fn delta_k11(&self, a1: &DVec) -> Result<DMat, RegError> {
        let mut a = DVec::zeros(self.dae.n());
        a.rows_mut(0, self.n1).copy_from(a1);
        let k = self.dae.assemble_k(&a)?;
        let kf = self.dae.k_frozen();
        let mut delta = DMat::zeros(self.n1, self.n1);
        for (r, c, v) in k.triplet_iter() {
            if r < self.n1 && c < self.n1 {
                delta[(r, c)] += v;
            }
        }
        for (r, c, v) in kf.triplet_iter() {
            if r < self.n1 && c < self.n1 {
                delta[(r, c)] -= v;
            }
        }
        Ok(delta)
    }

    /// Projection [a1; Zᵀ a21] of a regularized state.
    pub fn project_regular(&self, x_r: &DVec) -> DVec {
        let a1 = x_r.rows(0, self.n1);
        let a21 = x_r.rows(self.n1, self.z.nrows());
        let zc = self.z.transpose() * a21;
        let mut x = DVec::zeros(self.n_ode());
        x.rows_mut(0, self.n1).copy_from(&a1);
        x.rows_mut(self.n1, self.m).copy_from(&zc);
        x
    }

    /// Regularized state on the solution manifold represented by an ODE state.
    pub fn recover_regular(&self, x: &DVec) -> DVec {
        &self.recovery * x
    }

    /// Full potential vector represented by an ODE state.
    pub fn full_potential(&self, x: &DVec) -> DVec {
        &self.lift_full * x
    }
}

impl ImplicitOde for RegularizedSystem {
    fn dim(&self) -> usize {
        self.n_r()
    }

    fn n_inputs(&self) -> usize {
        self.m
    }

    fn n_outputs(&self) -> usize {
        self.m
    }

    fn mass(&self) -> DMat {
        self.e_r.clone()
    }

    fn rhs(&self, x: &DVec, u: &DVec) -> Result<DVec, MatError> {
        let a1 = x.rows(0, self.n1).into_owned();
        let mut g = &self.a_frozen * x + &self.b_r * u;
        let sat = self.dae.saturation_term(&a1);
        for i in 0..self.n1 {
            g[i] -= sat[i];
        }
        Ok(g)
    }

    fn rhs_jacobian(&self, x: &DVec) -> Result<DMat, MatError> {
        let a1 = x.rows(0, self.n1).into_owned();
        let sj = self.dae.saturation_jacobian(&a1)?.to_dense();
        let mut j = self.a_frozen.clone();
        let mut head = j.view_mut((0, 0), (self.n1, self.n1));
        head -= &sj;
        Ok(j)
    }

    fn output(&self, x: &DVec, _u: &DVec) -> DVec {
        &self.c_r * x
    }
}

impl ImplicitOde for OdeSystem {
    fn dim(&self) -> usize {
        self.n_ode()
    }

    fn n_inputs(&self) -> usize {
        self.m
    }

    fn n_outputs(&self) -> usize {
        self.m
    }

    fn mass(&self) -> DMat {
        self.e_ode.clone()
    }

    fn rhs(&self, x: &DVec, u: &DVec) -> Result<DVec, MatError> {
        let a1 = x.rows(0, self.n1).into_owned();
        let mut g = &self.a_frozen * x + &self.b_ode * u;
        let sat = self.dae.saturation_term(&a1);
        for i in 0..self.n1 {
            g[i] -= sat[i];
        }
        Ok(g)
    }

    fn rhs_jacobian(&self, x: &DVec) -> Result<DMat, MatError> {
        let a1 = x.rows(0, self.n1).into_owned();
        let sj = self.dae.saturation_jacobian(&a1)?.to_dense();
        let mut j = self.a_frozen.clone();
        let mut head = j.view_mut((0, 0), (self.n1, self.n1));
        head -= &sj;
        Ok(j)
    }

    fn output(&self, x: &DVec, _u: &DVec) -> DVec {
        &self.c_ode * x
    }
}

fn symmetrize(m: &DMat) -> DMat {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests;
