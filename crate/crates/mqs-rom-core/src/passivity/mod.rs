//! Passivity verification and enforcement for the field/circuit models.
//!
//! The magnetic energy S(a) = sum_g w_g * integral_0^{|flux_g|} nu(z) z dz is
//! a storage function for every model in the chain: its gradient is exactly
//! K(a)a, so along solutions dS/dt <= u'y with equality spoiled only by the
//! resistive and eddy-current losses. Reduced states are lifted through their
//! constant recovery maps before evaluation, so one evaluator covers the
//! field, projected, Schur, and Galerkin-reduced models.
//!
//! For the interpolated model the output can lose passivity. The module
//! computes the interpolation error constant, bounds the state error by a
//! Gronwall envelope theta(t) built from a log-Lipschitz estimate of the
//! reduced vector field, and adds the smallest output perturbation
//! delta(t) u(t) that restores a nonnegative supply integral.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use crate::integrator::Trajectory;
use crate::matcore::{self, DMat, DVec, MatError, SparseMatrix};
use crate::mqs::MqsDae;
use crate::problem::{CurveKind, ReluctivityCurve};
use crate::regularization::{OdeSystem, RegularizedSystem};
use crate::rom::{RomDeim, RomPod};

/// Relative tolerance of the flux integral inside the storage function.
pub const QUADRATURE_REL_TOL: f64 = 1e-10;
/// Default slack tolerance for the dissipation and supply checks.
pub const DISSIPATION_TOL: f64 = 1e-8;
const MAX_SIMPSON_DEPTH: u32 = 48;

#[derive(Debug)]
pub enum PassivityError {
    Mat(MatError),
    Dimension { what: &'static str, expected: usize, got: usize },
    /// The log-Lipschitz estimate came out nonnegative, so the Gronwall
    /// bound does not apply; carries both values for diagnostics.
    NonNegativeMu { mu1: f64, mu2: f64 },
    InvalidBound { what: &'static str, value: f64 },
    /// A reference output component is identically zero, so the relative
    /// error normalization is undefined.
    ZeroReference { component: usize },
    Io { path: String, detail: String },
}

impl fmt::Display for PassivityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PassivityError::Mat(e) => write!(f, "linear algebra failure: {}", e),
            PassivityError::Dimension { what, expected, got } => {
                write!(f, "{}: expected {}, got {}", what, expected, got)
            }
            PassivityError::NonNegativeMu { mu1, mu2 } => write!(
                f,
                "log-Lipschitz estimate is not negative: mu1 = {:.6e}, mu2 = {:.6e}",
                mu1, mu2
            ),
            PassivityError::InvalidBound { what, value } => {
                write!(f, "error bound precondition failed: {} = {:.6e}", what, value)
            }
            PassivityError::ZeroReference { component } => write!(
                f,
                "reference output component {} is identically zero",
                component + 1
            ),
            PassivityError::Io { path, detail } => write!(f, "{}: {}", path, detail),
        }
    }
}

impl std::error::Error for PassivityError {}

impl From<MatError> for PassivityError {
    fn from(e: MatError) -> Self {
        PassivityError::Mat(e)
    }
}

/// Magnetic energy evaluator for one state space. The optional map lifts a
/// trajectory state to the full potential vector; without it the state is a
/// field/circuit pair and the potential is its head block.
#[derive(Debug, Clone)]
pub struct StorageEvaluator {
    dae: MqsDae,
    map: Option<DMat>,
    dim: usize,
}

impl StorageEvaluator {
    /// Field/circuit states [a; i] of the unreduced system.
    pub fn for_field(dae: &MqsDae) -> Self {
        StorageEvaluator { dae: dae.clone(), map: None, dim: dae.n_state() }
    }

    /// Projected states; lifts through the silent-component embedding.
    pub fn for_regularized(reg: &RegularizedSystem) -> Self {
        StorageEvaluator {
            dae: reg.dae().clone(),
            map: Some(reg.lift().clone()),
            dim: reg.n_r(),
        }
    }

    /// Schur-form states; lifts through the full recovery map.
    pub fn for_ode(ode: &OdeSystem) -> Self {
        StorageEvaluator {
            dae: ode.dae().clone(),
            map: Some(ode.lift_full().clone()),
            dim: ode.n_ode(),
        }
    }

    /// Galerkin-reduced states; lifts through the basis recovery map.
    pub fn for_reduced(rom: &RomPod) -> Self {
        StorageEvaluator {
            dae: rom.ode().dae().clone(),
            map: Some(rom.u_recovery().clone()),
            dim: rom.dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Full potential represented by a state of this space.
    pub fn potential(&self, x: &DVec) -> DVec {
        match &self.map {
            Some(map) => map * x,
            None => x.rows(0, self.dae.n()).into_owned(),
        }
    }

    /// S(x) >= 0 with S(0) = 0; the flux integral per group is exact for
    /// constant reluctivity and adaptively quadratured otherwise.
    pub fn storage(&self, x: &DVec) -> Result<f64, PassivityError> {
        if x.len() != self.dim {
            return Err(PassivityError::Dimension {
                what: "storage state",
                expected: self.dim,
                got: x.len(),
            });
        }
        let a = self.potential(x);
        let curve = &self.dae.problem.curve;
        let mut s = 0.0;
        for gr in self.dae.groups() {
            let b = gr.flux(&a).norm();
            s += gr.weight * flux_energy(curve, gr.conducting, b);
        }
        Ok(s)
    }
}

/// integral_0^b nu(z) z dz for one material region.
fn flux_energy(curve: &ReluctivityCurve, conducting: bool, b: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    if !conducting {
        return 0.5 * curve.nu_air * b * b;
    }
    match curve.kind {
        CurveKind::Constant { nu } => 0.5 * nu * b * b,
        CurveKind::Brauer { .. } => {
            let f = |z: f64| curve.nu(true, z) * z;
            let fa = f(0.0);
            let fm = f(0.5 * b);
            let fb = f(b);
            let whole = simpson_rule(0.0, b, fa, fm, fb);
            let tol = QUADRATURE_REL_TOL * whole.abs().max(f64::MIN_POSITIVE);
            adaptive_simpson(&f, 0.0, b, fa, fm, fb, whole, tol, MAX_SIMPSON_DEPTH)
        }
    }
}

fn simpson_rule(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(a, m, fa, flm, fm);
    let right = simpson_rule(m, b, fm, frm, fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        // Richardson extrapolation of the composite rule.
        return left + right + err / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Result of the dissipation and supply-integral checks on one trajectory.
#[derive(Debug, Clone)]
pub struct PassivityReport {
    pub times: Vec<f64>,
    pub storage: Vec<f64>,
    /// Per-node slack S(t_k) - S(t_{k-1}) - trapezoid(u'y); entry 0 is 0.
    pub slack: Vec<f64>,
    /// Running trapezoid integral of u'y.
    pub io_integral: Vec<f64>,
    pub max_slack: f64,
    pub min_io: f64,
    /// Quadrature error budget both checks are compared against.
    pub budget: f64,
    pub dissipation_passed: bool,
    pub io_passed: bool,
}

/// Verifies the dissipation inequality S(t_{k+1}) - S(t_k) <= int u'y on
/// every interval of the trajectory, with a trapezoid quadrature budget of
/// tol * (1 + max |u'y|) * t_end absorbing the discretization error.
pub fn check_dissipation(
    traj: &Trajectory,
    eval: &StorageEvaluator,
    tol: f64,
) -> Result<PassivityReport, PassivityError> {
    let n = traj.len();
    if n == 0 {
        return Err(PassivityError::Dimension {
            what: "trajectory samples",
            expected: 1,
            got: 0,
        });
    }
    let mut storage = Vec::with_capacity(n);
    let mut power = Vec::with_capacity(n);
    for k in 0..n {
        storage.push(eval.storage(&traj.states[k])?);
        power.push(traj.inputs[k].dot(&traj.outputs[k]));
    }
    let span = traj.times[n - 1] - traj.times[0];
    let max_power = power.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let budget = tol * (1.0 + max_power) * span.max(f64::MIN_POSITIVE);

    let mut slack = vec![0.0; n];
    let mut io_integral = vec![0.0; n];
    let mut max_slack = f64::NEG_INFINITY;
    let mut min_io = 0.0f64;
    for k in 1..n {
        let dt = traj.times[k] - traj.times[k - 1];
        let supply = 0.5 * dt * (power[k] + power[k - 1]);
        slack[k] = storage[k] - storage[k - 1] - supply;
        io_integral[k] = io_integral[k - 1] + supply;
        max_slack = max_slack.max(slack[k]);
        min_io = min_io.min(io_integral[k]);
    }
    if n == 1 {
        max_slack = 0.0;
    }
    Ok(PassivityReport {
        times: traj.times.clone(),
        storage,
        slack,
        io_integral,
        max_slack,
        min_io,
        budget,
        dissipation_passed: max_slack <= budget,
        io_passed: min_io >= -budget,
    })
}

/// Running trapezoid integral of u'y on the grid and its minimum; the
/// minimum decides io-passivity of the sampled pair.
pub fn io_passivity_integral(
    u: &DMat,
    y: &DMat,
    times: &[f64],
) -> Result<(Vec<f64>, f64), PassivityError> {
    if y.ncols() != u.ncols() || u.ncols() != times.len() {
        return Err(PassivityError::Dimension {
            what: "sample count",
            expected: times.len(),
            got: u.ncols().min(y.ncols()),
        });
    }
    if y.nrows() != u.nrows() {
        return Err(PassivityError::Dimension {
            what: "port count",
            expected: u.nrows(),
            got: y.nrows(),
        });
    }
    let n = times.len();
    let mut running = vec![0.0; n];
    let mut min_io = 0.0f64;
    for k in 1..n {
        let dt = times[k] - times[k - 1];
        let p0 = u.column(k - 1).dot(&y.column(k - 1));
        let p1 = u.column(k).dot(&y.column(k));
        running[k] = running[k - 1] + 0.5 * dt * (p0 + p1);
        min_io = min_io.min(running[k]);
    }
    Ok((running, min_io))
}

/// Log-Lipschitz estimates (mu1, mu2) of the reduced vector field, both
/// negative by strong monotonicity of the material curve. mu1 uses the
/// unweighted stiffness over the whole domain with the uniform monotonicity
/// constant; mu2 splits off the linear part and uses the conducting-region
/// constant on the conducting block alone.
pub fn log_lipschitz_bounds(rom: &RomPod) -> Result<(f64, f64), PassivityError> {
    let dae = rom.ode().dae();
    let (n, n1) = (dae.n(), dae.n1());
    let mut t_all = Vec::new();
    let mut t_cond = Vec::new();
    for gr in dae.groups() {
        for (li, &ci) in gr.cols.iter().enumerate() {
            for (lj, &cj) in gr.cols.iter().enumerate() {
                let v = gr.weight * gr.gram[(li, lj)];
                t_all.push((ci, cj, v));
                if gr.conducting {
                    t_cond.push((ci, cj, v));
                }
            }
        }
    }
    let k_l = SparseMatrix::from_triplets(n, n, &t_all)?.to_dense();
    let k_l1 = SparseMatrix::from_triplets(n1, n1, &t_cond)?.to_dense();

    let curve = &dae.problem.curve;
    let u = rom.u_recovery();
    let g1 = symmetrize(&(u.transpose() * &k_l * u));
    let mu1 = -curve.m_mono() * matcore::sym_eig_extreme(&g1)?.lambda_max;

    let ua = rom.u_a1();
    let g2 = symmetrize(&(ua.transpose() * &k_l1 * ua));
    let lam_al = matcore::sym_eig_extreme(rom.a_frozen())?.lambda_max;
    let mu2 = lam_al - curve.m_mono_conducting() * matcore::sym_eig_extreme(&g2)?.lambda_max;

    if !(mu1 < 0.0 && mu2 < 0.0) {
        return Err(PassivityError::NonNegativeMu { mu1, mu2 });
    }
    Ok((mu1, mu2))
}

/// Interpolation error constant: |(S_K' U_f1)^{-1}| times the root of the
/// discarded snapshot energy.
pub fn deim_error_constant(
    x_f1: &DMat,
    u_f1: &DMat,
    kappa: &[usize],
    ell: usize,
) -> Result<f64, PassivityError> {
    if u_f1.ncols() != ell || kappa.len() != ell {
        return Err(PassivityError::Dimension {
            what: "interpolation order",
            expected: ell,
            got: u_f1.ncols().min(kappa.len()),
        });
    }
    let mut sk = DMat::zeros(ell, ell);
    for (pos, &k) in kappa.iter().enumerate() {
        if k >= u_f1.nrows() {
            return Err(PassivityError::Dimension {
                what: "interpolation row",
                expected: u_f1.nrows(),
                got: k,
            });
        }
        sk.row_mut(pos).copy_from(&u_f1.row(k));
    }
    let svd_sk = matcore::thin_svd(&sk)?;
    let smin = svd_sk.sigma[svd_sk.sigma.len() - 1];
    if !(smin > 0.0) {
        return Err(PassivityError::InvalidBound {
            what: "sampled basis minimum singular value",
            value: smin,
        });
    }
    let svd_x = matcore::thin_svd(x_f1)?;
    let tail: f64 = svd_x.sigma.iter().skip(ell).map(|s| s * s).sum();
    Ok(tail.sqrt() / smin)
}

/// Constants of the Gronwall state error envelope.
#[derive(Debug, Clone, Copy)]
pub struct ErrorBound {
    pub delta_deim: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub lambda_min_e: f64,
    pub c_norm: f64,
}

impl ErrorBound {
    pub fn new(
        delta_deim: f64,
        mu1: f64,
        mu2: f64,
        lambda_min_e: f64,
        c_norm: f64,
    ) -> Result<Self, PassivityError> {
        if !(lambda_min_e > 0.0) {
            return Err(PassivityError::InvalidBound {
                what: "lambda_min(E)",
                value: lambda_min_e,
            });
        }
        if !(mu1 < 0.0 && mu2 < 0.0) {
            return Err(PassivityError::NonNegativeMu { mu1, mu2 });
        }
        if !(delta_deim >= 0.0) || !(c_norm >= 0.0) {
            return Err(PassivityError::InvalidBound {
                what: "nonnegative bound constant",
                value: delta_deim.min(c_norm),
            });
        }
        Ok(ErrorBound { delta_deim, mu1, mu2, lambda_min_e, c_norm })
    }

    /// All constants read off one interpolated model.
    pub fn from_deim(deim: &RomDeim) -> Result<Self, PassivityError> {
        let tail: f64 = deim.sigma_f1().iter().skip(deim.ell()).map(|s| s * s).sum();
        let delta = deim.sampling_inverse_norm() * tail.sqrt();
        let (mu1, mu2) = log_lipschitz_bounds(deim.pod())?;
        let lam = matcore::sym_eig_extreme(deim.pod().e())?.lambda_min;
        let c_norm = matcore::thin_svd(deim.pod().c())?.sigma[0];
        ErrorBound::new(delta, mu1, mu2, lam, c_norm)
    }

    /// Sharpest available exponent.
    pub fn mu(&self) -> f64 {
        self.mu1.min(self.mu2)
    }

    /// theta(t) = (Delta/mu)(e^{mu t / lambda_min(E)} - 1) with mu < 0:
    /// zero at t = 0, nondecreasing, saturating at -Delta/mu.
    pub fn theta(&self, t: f64) -> f64 {
        self.theta_for(self.mu(), t)
    }

    pub fn theta_mu1(&self, t: f64) -> f64 {
        self.theta_for(self.mu1, t)
    }

    pub fn theta_mu2(&self, t: f64) -> f64 {
        self.theta_for(self.mu2, t)
    }

    fn theta_for(&self, mu: f64, t: f64) -> f64 {
        self.delta_deim / mu * ((mu * t / self.lambda_min_e).exp() - 1.0)
    }

    /// Output error envelope |C| theta(t).
    pub fn output_bound(&self, t: f64) -> f64 {
        self.c_norm * self.theta(t)
    }

    /// Limit of theta as t grows.
    pub fn asymptote(&self) -> f64 {
        -self.delta_deim / self.mu()
    }
}

/// Gronwall envelope for an arbitrary (validated) exponent; the bound
/// formula requires mu < 0 and a positive mass eigenvalue.
pub fn state_error_bound(
    delta_deim: f64,
    mu: f64,
    lambda_min_e: f64,
    t: f64,
) -> Result<f64, PassivityError> {
    if !(mu < 0.0) {
        return Err(PassivityError::InvalidBound { what: "mu", value: mu });
    }
    if !(lambda_min_e > 0.0) {
        return Err(PassivityError::InvalidBound {
            what: "lambda_min(E)",
            value: lambda_min_e,
        });
    }
    Ok(delta_deim / mu * ((mu * t / lambda_min_e).exp() - 1.0))
}

/// Perturbed output of the interpolated model with the per-node delta.
#[derive(Debug, Clone)]
pub struct PassifiedOutput {
    pub delta: Vec<f64>,
    /// One column per sample: y_delta = y + delta * u.
    pub y_delta: DMat,
}

/// Adds the smallest norm-certified perturbation delta(t) u(t) to the
/// interpolated output: delta = |C| theta / |u| where the input is nonzero,
/// zero elsewhere, so |y_delta - y| = |C| theta wherever u is active.
pub fn passify(traj: &Trajectory, bound: &ErrorBound) -> PassifiedOutput {
    let n = traj.len();
    let m = traj.n_outputs();
    let mut delta = vec![0.0; n];
    let mut y_delta = DMat::zeros(m, n);
    for k in 0..n {
        let unorm = traj.inputs[k].norm();
        if unorm > 0.0 {
            delta[k] = bound.c_norm * bound.theta(traj.times[k]) / unorm;
        }
        y_delta.set_column(k, &(&traj.outputs[k] + &traj.inputs[k] * delta[k]));
    }
    PassifiedOutput { delta, y_delta }
}

/// Componentwise-normalized output error time series: each component is
/// scaled by the peak magnitude of the reference component over the run.
pub fn relative_output_error(
    y_ref: &DMat,
    y_cmp: &DMat,
) -> Result<Vec<f64>, PassivityError> {
    if y_ref.shape() != y_cmp.shape() {
        return Err(PassivityError::Dimension {
            what: "output sample shape",
            expected: y_ref.ncols(),
            got: y_cmp.ncols(),
        });
    }
    let (m, n) = y_ref.shape();
    let mut scale = vec![0.0f64; m];
    for i in 0..m {
        for k in 0..n {
            scale[i] = scale[i].max(y_ref[(i, k)].abs());
        }
        if scale[i] == 0.0 {
            return Err(PassivityError::ZeroReference { component: i });
        }
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = 0.0;
        for i in 0..m {
            let d = (y_ref[(i, k)] - y_cmp[(i, k)]) / scale[i];
            acc += d * d;
        }
        out.push(acc.sqrt());
    }
    Ok(out)
}

/// One verification sample for the report file.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub t: f64,
    pub storage: f64,
    pub diss_slack: f64,
    pub io_integral: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub eps_norm: f64,
    pub delta: f64,
    pub y_delta: Vec<f64>,
}

/// Writes `t,S,diss_slack,io_integral,theta1,theta2,eps_norm,delta,
/// y_delta_1..m` with 17 significant digits.
pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<(), PassivityError> {
    let io_err = |e: std::io::Error| PassivityError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let m = rows.first().map_or(0, |r| r.y_delta.len());
    let mut header =
        String::from("t,S,diss_slack,io_integral,theta1,theta2,eps_norm,delta");
    for i in 0..m {
        header.push_str(&format!(",y_delta_{}", i + 1));
    }
    writeln!(w, "{}", header).map_err(io_err)?;
    for r in rows {
        let mut line = format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t, r.storage, r.diss_slack, r.io_integral, r.theta1, r.theta2,
            r.eps_norm, r.delta
        );
        for v in &r.y_delta {
            line.push_str(&format!(",{:.16e}", v));
        }
        writeln!(w, "{}", line).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Writes `key=value` lines for the per-theorem pass/fail summary.
pub fn write_summary(path: &Path, entries: &[(&str, String)]) -> Result<(), PassivityError> {
    let io_err = |e: std::io::Error| PassivityError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for (k, v) in entries {
        writeln!(w, "{}={}", k, v).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn symmetrize(m: &DMat) -> DMat {
    (m + m.transpose()) * 0.5
}
