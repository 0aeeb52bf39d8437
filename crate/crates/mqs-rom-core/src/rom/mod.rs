//! POD and POD-DEIM reduction of the Schur-form field/circuit ODE.
//!
//! The projection keeps the port-current coordinates intact and compresses
//! only the conducting potentials: with an orthonormal POD basis U_a1 of the
//! a1 snapshots, the reduced state is x = [a1_hat; i_hat] and the Galerkin
//! matrices are congruences of the ODE blocks with
//! Utilde = blockdiag(U_a1, I_m). The full potential is recovered through the
//! constant matrix u_recovery, which folds the eliminated non-conducting
//! directions back in; the reduced mass then satisfies the structural
//! identity E = blockdiag(U_a1ᵀ M11 U_a1, 0) + (UᵀX) R⁻¹ (UᵀX)ᵀ, which is
//! asserted at build time because the passivity argument rests on it.
//!
//! DEIM approximates the only nonlinear term, the conducting saturation
//! force, by interpolating it on a greedily selected row set: the evaluator
//! touches exactly the flux groups adjacent to the sampled rows, never the
//! full force vector.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::integrator::ImplicitOde;
use crate::matcore::{self, DMat, DVec, MatError, SparseMatrix};
use crate::problem::{
    read_matrix_market, write_matrix_market, ProblemError,
};
use crate::regularization::OdeSystem;

/// Relative singular value cutoff defining the numerical rank of snapshots.
pub const SNAPSHOT_RANK_TOL: f64 = 1e-12;
/// Default energy truncation ratio for basis selection.
pub const DEFAULT_ENERGY_TOL: f64 = 1e-7;
const ORTHONORMALITY_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-10;
const SAMPLE_COUNT: usize = 3;

#[derive(Debug)]
pub enum RomError {
    Mat(MatError),
    /// Snapshot matrix is empty or identically zero.
    EmptySnapshots,
    NotOrthonormal { residual: f64, tol: f64 },
    /// A greedy residual vanished: the basis column adds no new row.
    DegenerateBasis { column: usize },
    SingularSampling { detail: String },
    /// A requested order exceeds the snapshot rank.
    RankExceeded { requested: usize, rank: usize },
    /// A structural identity the reduction must satisfy failed numerically.
    IdentityViolation { what: &'static str, residual: f64, tol: f64 },
    Dimension { what: &'static str, expected: usize, got: usize },
    Persist(ProblemError),
}

impl fmt::Display for RomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RomError::Mat(e) => write!(f, "linear algebra failure: {}", e),
            RomError::EmptySnapshots => {
                write!(f, "snapshot matrix is empty or identically zero")
            }
            RomError::NotOrthonormal { residual, tol } => write!(
                f,
                "basis is not orthonormal: |U^T U - I| = {:.3e} exceeds {:.3e}",
                residual, tol
            ),
            RomError::DegenerateBasis { column } => write!(
                f,
                "interpolation basis column {} has a vanishing greedy residual",
                column
            ),
            RomError::SingularSampling { detail } => {
                write!(f, "sampled interpolation matrix is singular: {}", detail)
            }
            RomError::RankExceeded { requested, rank } => write!(
                f,
                "requested order {} exceeds snapshot rank {}",
                requested, rank
            ),
            RomError::IdentityViolation { what, residual, tol } => write!(
                f,
                "reduction identity violated in {}: residual {:.3e} exceeds {:.3e}",
                what, residual, tol
            ),
            RomError::Dimension { what, expected, got } => {
                write!(f, "{}: expected {}, got {}", what, expected, got)
            }
            RomError::Persist(e) => write!(f, "basis persistence failed: {}", e),
        }
    }
}

impl std::error::Error for RomError {}

impl From<MatError> for RomError {
    fn from(e: MatError) -> Self {
        RomError::Mat(e)
    }
}

impl From<ProblemError> for RomError {
    fn from(e: ProblemError) -> Self {
        RomError::Persist(e)
    }
}

/// Order selection rule for a snapshot basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PodSpec {
    FixedRank(usize),
    /// Keep the smallest k with sigma_{k+1}/sigma_1 at or below the ratio.
    EnergyTol(f64),
}

impl Default for PodSpec {
    fn default() -> Self {
        PodSpec::EnergyTol(DEFAULT_ENERGY_TOL)
    }
}

/// Orthonormal snapshot basis with the full singular spectrum retained for
/// downstream error constants.
#[derive(Debug, Clone)]
pub struct PodBasis {
    pub u: DMat,
    pub sigma: DVec,
    pub r: usize,
    /// True when a fixed order was clipped to the snapshot rank.
    pub clipped: bool,
}

/// Leading left singular vectors of the snapshot matrix under the given
/// selection rule. Fixed orders above the numerical rank are clipped and
/// flagged rather than padded with noise directions.
pub fn pod_basis(snapshots: &DMat, spec: PodSpec) -> Result<PodBasis, RomError> {
    if snapshots.nrows() == 0 || snapshots.ncols() == 0 || snapshots.norm() == 0.0 {
        return Err(RomError::EmptySnapshots);
    }
    let svd = matcore::thin_svd(snapshots)?;
    let smax = svd.sigma[0];
    if smax == 0.0 {
        return Err(RomError::EmptySnapshots);
    }
    let rank = svd
        .sigma
        .iter()
        .filter(|&&s| s > SNAPSHOT_RANK_TOL * smax)
        .count();
    let (r, clipped) = match spec {
        PodSpec::FixedRank(req) => {
            if req == 0 {
                return Err(RomError::Dimension {
                    what: "basis order",
                    expected: 1,
                    got: 0,
                });
            }
            (req.min(rank), req > rank)
        }
        PodSpec::EnergyTol(tol) => {
            let mut r = rank;
            for k in 1..=rank {
                let next = if k < svd.sigma.len() { svd.sigma[k] } else { 0.0 };
                if next <= tol * smax {
                    r = k;
                    break;
                }
            }
            (r, false)
        }
    };
    Ok(PodBasis {
        u: svd.u.columns(0, r).into_owned(),
        sigma: svd.sigma,
        r,
        clipped,
    })
}

/// Conducting-block snapshot matrix of a trajectory: a1(t_k) as columns.
pub fn a1_snapshots(ode: &OdeSystem, traj: &crate::integrator::Trajectory) -> DMat {
    traj.state_matrix().rows(0, ode.n1()).into_owned()
}

/// Saturation-force snapshot matrix: f1(a1(t_k)) = -s(a1(t_k)) as columns.
pub fn f1_snapshots(ode: &OdeSystem, traj: &crate::integrator::Trajectory) -> DMat {
    let states = traj.state_matrix();
    let n1 = ode.n1();
    let mut out = DMat::zeros(n1, traj.len());
    for k in 0..traj.len() {
        let a1 = states.view((0, k), (n1, 1)).column(0).into_owned();
        out.set_column(k, &(-ode.dae().saturation_term(&a1)));
    }
    out
}

/// Galerkin-reduced saturating ODE with structure-preserving projection.
#[derive(Debug, Clone)]
pub struct RomPod {
    ode: OdeSystem,
    r: usize,
    u_a1: DMat,
    u_recovery: DMat,
    e: DMat,
    a_frozen: DMat,
    b: DMat,
    c: DMat,
}

/// Builds the reduced model from the Schur ODE and an orthonormal conducting
/// basis, asserting the mass identity and sampled negative semidefiniteness.
pub fn build_pod(ode: &OdeSystem, u_a1: DMat) -> Result<RomPod, RomError> {
    let (n1, m) = (ode.n1(), ode.m());
    let r = u_a1.ncols();
    if u_a1.nrows() != n1 {
        return Err(RomError::Dimension {
            what: "basis row count",
            expected: n1,
            got: u_a1.nrows(),
        });
    }
    if r == 0 || r > n1 {
        return Err(RomError::Dimension {
            what: "basis order",
            expected: n1,
            got: r,
        });
    }
    let ortho_tol = ORTHONORMALITY_TOL * (r as f64).sqrt().max(1.0);
    let ortho = (u_a1.transpose() * &u_a1 - DMat::identity(r, r)).norm();
    if ortho > ortho_tol {
        return Err(RomError::NotOrthonormal {
            residual: ortho,
            tol: ortho_tol,
        });
    }

    let mut u_tilde = DMat::zeros(n1 + m, r + m);
    u_tilde.view_mut((0, 0), (n1, r)).copy_from(&u_a1);
    u_tilde.view_mut((n1, r), (m, m)).fill_with_identity();

    let e = symmetrize(&(u_tilde.transpose() * ode.e_ode() * &u_tilde));
    matcore::spd_factor(&e)?;
    let a_frozen = symmetrize(&(u_tilde.transpose() * ode.a_frozen() * &u_tilde));
    let b = u_tilde.transpose() * ode.b_ode();
    let c = ode.c_ode() * &u_tilde;
    let u_recovery = ode.lift_full() * &u_tilde;

    // Mass identity behind the storage-function argument: the reduced E must
    // split into the projected conducting mass plus the winding coupling of
    // the recovered potential.
    let p = &ode.dae().problem;
    let r_inv = matcore::spd_factor(&p.r)?.solve_mat(&DMat::identity(m, m))?;
    let ux = u_recovery.transpose() * &p.x;
    let mut e_alt = &ux * &r_inv * ux.transpose();
    let m11_red = u_a1.transpose() * p.m11.to_dense() * &u_a1;
    let mut head = e_alt.view_mut((0, 0), (r, r));
    head += &m11_red;
    let id_res = (&e - symmetrize(&e_alt)).norm() / e.norm();
    if id_res > IDENTITY_TOL {
        return Err(RomError::IdentityViolation {
            what: "reduced mass splitting",
            residual: id_res,
            tol: IDENTITY_TOL,
        });
    }

    let rom = RomPod {
        ode: ode.clone(),
        r,
        u_a1,
        u_recovery,
        e,
        a_frozen,
        b,
        c,
    };

    for x in rom.sample_states(SAMPLE_COUNT, 42) {
        let a = rom.stiffness(&x)?;
        let sym = (&a - a.transpose()).norm() / a.norm().max(f64::MIN_POSITIVE);
        let eig = matcore::sym_eig_extreme(&symmetrize(&a))?;
        let bound = IDENTITY_TOL * a.norm().max(f64::MIN_POSITIVE);
        if sym > IDENTITY_TOL || eig.lambda_max > bound {
            return Err(RomError::IdentityViolation {
                what: "reduced stiffness negative semidefiniteness",
                residual: sym.max(eig.lambda_max / a.norm()),
                tol: IDENTITY_TOL,
            });
        }
    }
    Ok(rom)
}

impl RomPod {
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn m(&self) -> usize {
        self.ode.m()
    }

    pub fn dim(&self) -> usize {
        self.r + self.ode.m()
    }

    pub fn ode(&self) -> &OdeSystem {
        &self.ode
    }

    pub fn u_a1(&self) -> &DMat {
        &self.u_a1
    }

    /// Recovery matrix mapping the reduced state to the full potential,
    /// a = u_recovery * x, with the eliminated directions folded in.
    pub fn u_recovery(&self) -> &DMat {
        &self.u_recovery
    }

    pub fn e(&self) -> &DMat {
        &self.e
    }

    /// Linear (zero-flux) part of the reduced stiffness.
    pub fn a_frozen(&self) -> &DMat {
        &self.a_frozen
    }

    pub fn b(&self) -> &DMat {
        &self.b
    }

    pub fn c(&self) -> &DMat {
        &self.c
    }

    /// Reduced stiffness A(x) via the exact congruence of the Schur form.
    pub fn stiffness(&self, x: &DVec) -> Result<DMat, RomError> {
        let x_ode = self.lift_ode(x);
        let a = self
            .ode
            .a_ode(&x_ode)
            .map_err(|e| RomError::SingularSampling {
                detail: format!("stiffness evaluation: {}", e),
            })?;
        let u_tilde = self.u_tilde();
        Ok(u_tilde.transpose() * a * u_tilde)
    }

    /// Exact Galerkin right-hand side A(x)x + Bu; the interpolation-free
    /// reference for the split evaluator.
    pub fn rhs_galerkin(&self, x: &DVec, u: &DVec) -> Result<DVec, RomError> {
        Ok(self.stiffness(x)? * x + &self.b * u)
    }

    /// Reduced state lifted to the Schur ODE coordinates.
    pub fn lift_ode(&self, x: &DVec) -> DVec {
        let mut out = DVec::zeros(self.ode.n_ode());
        let a1 = &self.u_a1 * x.rows(0, self.r);
        out.rows_mut(0, self.ode.n1()).copy_from(&a1);
        out.rows_mut(self.ode.n1(), self.ode.m())
            .copy_from(&x.rows(self.r, self.ode.m()));
        out
    }

    /// Full potential represented by a reduced state.
    pub fn recover_potential(&self, x: &DVec) -> DVec {
        &self.u_recovery * x
    }

    fn u_tilde(&self) -> DMat {
        let (n1, m) = (self.ode.n1(), self.ode.m());
        let mut u = DMat::zeros(n1 + m, self.r + m);
        u.view_mut((0, 0), (n1, self.r)).copy_from(&self.u_a1);
        u.view_mut((n1, self.r), (m, m)).fill_with_identity();
        u
    }

    fn a1_of(&self, x: &DVec) -> DVec {
        &self.u_a1 * x.rows(0, self.r)
    }

    /// Deterministic reduced states whose recovered potentials stay inside
    /// the certified flux range of the material curve.
    pub fn sample_states(&self, count: usize, seed: u64) -> Vec<DVec> {
        let dim = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|k| {
                let raw = DVec::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
                let a = self.recover_potential(&raw);
                let mut zmax: f64 = 0.0;
                for gr in self.ode.dae().groups() {
                    zmax = zmax.max(gr.flux(&a).norm());
                }
                if zmax == 0.0 {
                    return raw;
                }
                let frac = 0.25 + 0.5 * (k as f64) / (count.max(2) - 1) as f64;
                raw * (frac * self.ode.dae().problem.curve.zeta_max / zmax)
            })
            .collect()
    }
}

impl ImplicitOde for RomPod {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn n_inputs(&self) -> usize {
        self.ode.m()
    }

    fn n_outputs(&self) -> usize {
        self.ode.m()
    }

    fn mass(&self) -> DMat {
        self.e.clone()
    }

    fn rhs(&self, x: &DVec, u: &DVec) -> Result<DVec, MatError> {
        let a1 = self.a1_of(x);
        let sat_red = self.u_a1.transpose() * self.ode.dae().saturation_term(&a1);
        let mut g = &self.a_frozen * x + &self.b * u;
        for i in 0..self.r {
            g[i] -= sat_red[i];
        }
        Ok(g)
    }

    fn rhs_jacobian(&self, x: &DVec) -> Result<DMat, MatError> {
        let a1 = self.a1_of(x);
        let sj = self.ode.dae().saturation_jacobian(&a1)?.to_dense();
        let mut j = self.a_frozen.clone();
        let mut head = j.view_mut((0, 0), (self.r, self.r));
        head -= &(self.u_a1.transpose() * sj * &self.u_a1);
        Ok(j)
    }

    fn output(&self, x: &DVec, _u: &DVec) -> DVec {
        &self.c * x
    }
}

/// Greedy interpolation row selection: the first index maximizes |u_1|, each
/// later index maximizes the residual of its column against interpolation on
/// the rows chosen so far. Ties resolve to the smallest row index.
pub fn deim_select(u_f1: &DMat) -> Result<Vec<usize>, RomError> {
    let (n, ell) = u_f1.shape();
    if n == 0 || ell == 0 {
        return Err(RomError::EmptySnapshots);
    }
    let mut kappa: Vec<usize> = Vec::with_capacity(ell);
    for i in 0..ell {
        let ui = u_f1.column(i).into_owned();
        let resid = if i == 0 {
            ui
        } else {
            let mut sk_u = DMat::zeros(i, i);
            let mut sk_ui = DVec::zeros(i);
            for (pos, &k) in kappa.iter().enumerate() {
                for j in 0..i {
                    sk_u[(pos, j)] = u_f1[(k, j)];
                }
                sk_ui[pos] = ui[k];
            }
            let coef =
                matcore::solve_lu(&sk_u, &sk_ui).map_err(|e| RomError::SingularSampling {
                    detail: format!("greedy step {}: {}", i, e),
                })?;
            &ui - u_f1.columns(0, i) * coef
        };
        let mut best = 0usize;
        let mut best_val = -1.0f64;
        for j in 0..n {
            let v = resid[j].abs();
            if v > best_val {
                best_val = v;
                best = j;
            }
        }
        if !(best_val > 0.0) {
            return Err(RomError::DegenerateBasis { column: i });
        }
        kappa.push(best);
    }
    Ok(kappa)
}

/// POD model with the saturation force replaced by its interpolation on the
/// selected rows; evaluation touches only the flux groups adjacent to them.
#[derive(Debug, Clone)]
pub struct RomDeim {
    pod: RomPod,
    ell: usize,
    u_f1: DMat,
    kappa: Vec<usize>,
    m_deim: DMat,
    /// Two-norm of (S_K^T U_f1)^{-1}; enters the interpolation error bound.
    sampling_inverse_norm: f64,
    cond_sampling: f64,
    sigma_f1: DVec,
    needed_groups: Vec<usize>,
    row_pos: Vec<usize>,
}

/// Builds the interpolated model from force snapshots at the given order.
pub fn build_deim(pod: &RomPod, x_f1: &DMat, ell: usize) -> Result<RomDeim, RomError> {
    let n1 = pod.ode.n1();
    if x_f1.nrows() != n1 {
        return Err(RomError::Dimension {
            what: "force snapshot rows",
            expected: n1,
            got: x_f1.nrows(),
        });
    }
    let basis = pod_basis(x_f1, PodSpec::FixedRank(ell))?;
    if basis.clipped {
        return Err(RomError::RankExceeded {
            requested: ell,
            rank: basis.r,
        });
    }
    let u_f1 = basis.u;
    let kappa = deim_select(&u_f1)?;
    let distinct: HashSet<usize> = kappa.iter().copied().collect();
    if distinct.len() != kappa.len() {
        return Err(RomError::SingularSampling {
            detail: "duplicate interpolation rows".into(),
        });
    }

    let mut sk = DMat::zeros(ell, ell);
    for (pos, &k) in kappa.iter().enumerate() {
        for j in 0..ell {
            sk[(pos, j)] = u_f1[(k, j)];
        }
    }
    let svd = matcore::thin_svd(&sk)?;
    let smin = svd.sigma[svd.sigma.len() - 1];
    let smax = svd.sigma[0];
    if !(smin > 0.0) {
        return Err(RomError::SingularSampling {
            detail: "sampled basis rows are rank deficient".into(),
        });
    }
    let proj = pod.u_a1.transpose() * &u_f1;
    let m_deim = matcore::lu_factor(&sk.transpose())?
        .solve_mat(&proj.transpose())?
        .transpose();

    let dae = pod.ode.dae();
    let mut row_pos = vec![usize::MAX; n1];
    for (pos, &k) in kappa.iter().enumerate() {
        row_pos[k] = pos;
    }
    let mut needed_groups = Vec::new();
    for (g, gr) in dae.groups().iter().enumerate() {
        if gr.conducting && gr.cols.iter().any(|&c| row_pos[c] != usize::MAX) {
            needed_groups.push(g);
        }
    }

    Ok(RomDeim {
        pod: pod.clone(),
        ell,
        u_f1,
        kappa,
        m_deim,
        sampling_inverse_norm: 1.0 / smin,
        cond_sampling: smax / smin,
        sigma_f1: basis.sigma,
        needed_groups,
        row_pos,
    })
}

impl RomDeim {
    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn dim(&self) -> usize {
        self.pod.dim()
    }

    pub fn pod(&self) -> &RomPod {
        &self.pod
    }

    pub fn u_f1(&self) -> &DMat {
        &self.u_f1
    }

    pub fn kappa(&self) -> &[usize] {
        &self.kappa
    }

    pub fn m_deim(&self) -> &DMat {
        &self.m_deim
    }

    pub fn sampling_inverse_norm(&self) -> f64 {
        self.sampling_inverse_norm
    }

    pub fn cond_sampling(&self) -> f64 {
        self.cond_sampling
    }

    /// Full singular spectrum of the force snapshots (tail feeds the
    /// interpolation error constant).
    pub fn sigma_f1(&self) -> &DVec {
        &self.sigma_f1
    }

    /// S_K^T s(U_a1 a1_hat): the saturation force at the sampled rows only,
    /// assembled from the adjacent flux groups.
    pub fn sampled_saturation(&self, a1_hat: &DVec) -> DVec {
        let dae = self.pod.ode.dae();
        let curve = &dae.problem.curve;
        let nu0 = curve.nu_conducting_at_zero();
        let mut out = DVec::zeros(self.ell);
        for &g in &self.needed_groups {
            let gr = &dae.groups()[g];
            let mut local = DVec::zeros(gr.cols.len());
            for (j, &c) in gr.cols.iter().enumerate() {
                local[j] = (self.pod.u_a1.row(c) * a1_hat)[(0, 0)];
            }
            let w = &gr.block * local;
            let dnu = curve.nu(true, w.norm()) - nu0;
            if dnu == 0.0 {
                continue;
            }
            let y = gr.block.transpose() * w * (dnu * gr.weight);
            for (lj, &c) in gr.cols.iter().enumerate() {
                let pos = self.row_pos[c];
                if pos != usize::MAX {
                    out[pos] += y[lj];
                }
            }
        }
        out
    }

    /// S_K^T S'(U_a1 a1_hat) U_a1: sampled rows of the saturation Jacobian,
    /// pushed through the basis (ell x r).
    pub fn sampled_saturation_jacobian(&self, a1_hat: &DVec) -> DMat {
        let dae = self.pod.ode.dae();
        let curve = &dae.problem.curve;
        let nu0 = curve.nu_conducting_at_zero();
        let mut out = DMat::zeros(self.ell, self.pod.r);
        for &g in &self.needed_groups {
            let gr = &dae.groups()[g];
            let mut local = DVec::zeros(gr.cols.len());
            for (j, &c) in gr.cols.iter().enumerate() {
                local[j] = (self.pod.u_a1.row(c) * a1_hat)[(0, 0)];
            }
            let w = &gr.block * local;
            let zeta = w.norm();
            let dnu = curve.nu(true, zeta) - nu0;
            let slope = curve.dnu_over_zeta(true, zeta);
            let bw = gr.block.transpose() * &w;
            for (li, &ci) in gr.cols.iter().enumerate() {
                let pos = self.row_pos[ci];
                if pos == usize::MAX {
                    continue;
                }
                for (lj, &cj) in gr.cols.iter().enumerate() {
                    let mut coeff = dnu * gr.weight * gr.gram[(li, lj)];
                    if slope != 0.0 && zeta > 0.0 {
                        coeff += slope * gr.weight * bw[li] * bw[lj];
                    }
                    if coeff != 0.0 {
                        let scaled = self.pod.u_a1.row(cj) * coeff;
                        let mut row = out.row_mut(pos);
                        row += scaled;
                    }
                }
            }
        }
        out
    }

    /// Interpolated reduced force U_a1^T U_f1 (S_K^T U_f1)^{-1} S_K^T f1.
    pub fn f1_hat(&self, a1_hat: &DVec) -> DVec {
        &self.m_deim * (-self.sampled_saturation(a1_hat))
    }
}

impl ImplicitOde for RomDeim {
    fn dim(&self) -> usize {
        self.pod.dim()
    }

    fn n_inputs(&self) -> usize {
        self.pod.ode.m()
    }

    fn n_outputs(&self) -> usize {
        self.pod.ode.m()
    }

    fn mass(&self) -> DMat {
        self.pod.e.clone()
    }

    fn rhs(&self, x: &DVec, u: &DVec) -> Result<DVec, MatError> {
        let a1_hat = x.rows(0, self.pod.r).into_owned();
        let f_hat = self.f1_hat(&a1_hat);
        let mut g = &self.pod.a_frozen * x + &self.pod.b * u;
        for i in 0..self.pod.r {
            g[i] += f_hat[i];
        }
        Ok(g)
    }

    fn rhs_jacobian(&self, x: &DVec) -> Result<DMat, MatError> {
        let a1_hat = x.rows(0, self.pod.r).into_owned();
        let jrows = self.sampled_saturation_jacobian(&a1_hat);
        let mut j = self.pod.a_frozen.clone();
        let mut head = j.view_mut((0, 0), (self.pod.r, self.pod.r));
        head -= &(&self.m_deim * jrows);
        Ok(j)
    }

    fn output(&self, x: &DVec, _u: &DVec) -> DVec {
        &self.pod.c * x
    }
}

/// Reduction transforms in persistable form.
#[derive(Debug, Clone)]
pub struct BasisBundle {
    pub u_a1: DMat,
    pub u_f1: Option<DMat>,
    pub kappa: Option<Vec<usize>>,
}

const U_A1_FILE: &str = "u_a1.mtx";
const U_F1_FILE: &str = "u_f1.mtx";
const KAPPA_FILE: &str = "kappa.txt";

/// Writes the transforms into a directory: bases as Matrix Market files,
/// the interpolation rows as a plain index list, one per line.
pub fn write_basis_bundle(dir: &Path, bundle: &BasisBundle) -> Result<(), RomError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        RomError::Persist(ProblemError::Io {
            path: dir.display().to_string(),
            detail: e.to_string(),
        })
    })?;
    write_matrix_market(&dir.join(U_A1_FILE), &SparseMatrix::from_dense(&bundle.u_a1))?;
    if let Some(u_f1) = &bundle.u_f1 {
        write_matrix_market(&dir.join(U_F1_FILE), &SparseMatrix::from_dense(u_f1))?;
    }
    if let Some(kappa) = &bundle.kappa {
        let path = dir.join(KAPPA_FILE);
        let body: String = kappa.iter().map(|k| format!("{}\n", k)).collect();
        std::fs::write(&path, body).map_err(|e| {
            RomError::Persist(ProblemError::Io {
                path: path.display().to_string(),
                detail: e.to_string(),
            })
        })?;
    }
    Ok(())
}

/// Reads transforms written by [`write_basis_bundle`]; the interpolation
/// parts are optional so POD-only runs reload cleanly.
pub fn read_basis_bundle(dir: &Path) -> Result<BasisBundle, RomError> {
    let u_a1 = read_matrix_market(&dir.join(U_A1_FILE))?.to_dense();
    let f1_path = dir.join(U_F1_FILE);
    let u_f1 = if f1_path.exists() {
        Some(read_matrix_market(&f1_path)?.to_dense())
    } else {
        None
    };
    let kappa_path = dir.join(KAPPA_FILE);
    let kappa = if kappa_path.exists() {
        let body = std::fs::read_to_string(&kappa_path).map_err(|e| {
            RomError::Persist(ProblemError::Io {
                path: kappa_path.display().to_string(),
                detail: e.to_string(),
            })
        })?;
        let mut rows = Vec::new();
        for (i, line) in body.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            rows.push(t.parse::<usize>().map_err(|e| {
                RomError::Persist(ProblemError::Format {
                    path: kappa_path.display().to_string(),
                    line: i + 1,
                    detail: format!("bad row index: {}", e),
                })
            })?);
        }
        Some(rows)
    } else {
        None
    };
    Ok(BasisBundle { u_a1, u_f1, kappa })
}

fn symmetrize(m: &DMat) -> DMat {
    (m + m.transpose()) * 0.5
}
