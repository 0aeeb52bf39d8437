//! Fixed-step implicit time integration for constant-mass systems E x' = g(x, u).
//!
//! Backward differentiation formulas of order one and two are provided. Each
//! step solves the nonlinear system
//!
//! ```text
//!   E (x - x_hist) = dt' g(x, u(t_next))
//! ```
//!
//! with a full Newton iteration; `dt'` and `x_hist` encode the chosen formula,
//! and the first step of the order-two method falls back to order one. The
//! mass matrix may be singular (differential-algebraic form); in that case the
//! initial state must satisfy the algebraic rows and the per-step iteration
//! matrix must remain nonsingular, both of which are checked and reported.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use crate::matcore::{self, DMat, DVec, MatError, SparseLu, SparseMatrix};

/// Default Newton update tolerance, relative to 1 + |x|.
pub const NEWTON_TOL: f64 = 1e-10;
/// Default cap on Newton iterations per step.
pub const MAX_NEWTON: usize = 25;
/// Relative pivot floor handed to the sparse factorization.
const SPARSE_PIVOT_FLOOR: f64 = 1e-13;
/// Acceptance threshold for the algebraic rows of the initial residual.
const CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug)]
pub enum IntegratorError {
    Mat(MatError),
    InvalidGrid {
        dt: f64,
        t_end: f64,
        detail: &'static str,
    },
    BadDimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Newton did not contract to tolerance within the iteration cap.
    NewtonStalled {
        t: f64,
        step: usize,
        update_norm: f64,
    },
    /// The BDF iteration matrix E - dt' J_g lost rank.
    IterationMatrixSingular {
        t: f64,
        detail: String,
    },
    /// A zero row of E pairs with a nonzero entry of g(x0, u(0)).
    InconsistentStart {
        row: usize,
        residual: f64,
        tol: f64,
    },
    Io {
        path: String,
        detail: String,
    },
    Format {
        path: String,
        line: usize,
        detail: String,
    },
}

impl fmt::Display for IntegratorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntegratorError::Mat(e) => write!(f, "linear algebra failure: {}", e),
            IntegratorError::InvalidGrid { dt, t_end, detail } => {
                write!(f, "invalid time grid dt={:e}, t_end={:e}: {}", dt, t_end, detail)
            }
            IntegratorError::BadDimension { what, expected, got } => {
                write!(f, "{}: expected length {}, got {}", what, expected, got)
            }
            IntegratorError::NewtonStalled { t, step, update_norm } => write!(
                f,
                "Newton stalled at step {} (t={:.6e}): last update norm {:.3e}",
                step, t, update_norm
            ),
            IntegratorError::IterationMatrixSingular { t, detail } => {
                write!(f, "iteration matrix singular at t={:.6e}: {}", t, detail)
            }
            IntegratorError::InconsistentStart { row, residual, tol } => write!(
                f,
                "initial state violates algebraic row {}: residual {:.3e} exceeds {:.3e}; \
                 start from a consistent state such as rest",
                row, residual, tol
            ),
            IntegratorError::Io { path, detail } => write!(f, "{}: {}", path, detail),
            IntegratorError::Format { path, line, detail } => {
                write!(f, "{}:{}: {}", path, line, detail)
            }
        }
    }
}

impl std::error::Error for IntegratorError {}

impl From<MatError> for IntegratorError {
    fn from(e: MatError) -> Self {
        IntegratorError::Mat(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdfOrder {
    One,
    Two,
}

impl BdfOrder {
    pub fn as_str(&self) -> &'static str {
        match self {
            BdfOrder::One => "bdf1",
            BdfOrder::Two => "bdf2",
        }
    }
}

impl std::str::FromStr for BdfOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bdf1" | "1" => Ok(BdfOrder::One),
            "bdf2" | "2" => Ok(BdfOrder::Two),
            other => Err(format!("unknown BDF order '{}', expected bdf1 or bdf2", other)),
        }
    }
}

/// Uniform time grid plus Newton controls for one integration run.
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub dt: f64,
    pub t_end: f64,
    pub order: BdfOrder,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl StepControl {
    pub fn new(dt: f64, t_end: f64, order: BdfOrder) -> Self {
        StepControl {
            dt,
            t_end,
            order,
            newton_tol: NEWTON_TOL,
            max_newton: MAX_NEWTON,
        }
    }

    /// Number of steps; `t_end` must be an integer multiple of `dt`.
    pub fn steps(&self) -> Result<usize, IntegratorError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(IntegratorError::InvalidGrid {
                dt: self.dt,
                t_end: self.t_end,
                detail: "dt must be positive and finite",
            });
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(IntegratorError::InvalidGrid {
                dt: self.dt,
                t_end: self.t_end,
                detail: "t_end must be positive and finite",
            });
        }
        let raw = self.t_end / self.dt;
        let steps = raw.round();
        if steps < 1.0 || (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(IntegratorError::InvalidGrid {
                dt: self.dt,
                t_end: self.t_end,
                detail: "t_end must be an integer number of steps",
            });
        }
        Ok(steps as usize)
    }
}

/// Implicit system with a constant dense mass matrix, E x' = g(x, u).
pub trait ImplicitOde {
    fn dim(&self) -> usize;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn mass(&self) -> DMat;
    fn rhs(&self, x: &DVec, u: &DVec) -> Result<DVec, MatError>;
    fn rhs_jacobian(&self, x: &DVec) -> Result<DMat, MatError>;
    fn output(&self, x: &DVec, u: &DVec) -> DVec;
}

/// Implicit system with a constant sparse mass matrix, possibly singular.
pub trait ImplicitDae {
    fn dim(&self) -> usize;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn mass(&self) -> SparseMatrix;
    fn rhs(&self, x: &DVec, u: &DVec) -> Result<DVec, MatError>;
    fn rhs_jacobian(&self, x: &DVec) -> Result<SparseMatrix, MatError>;
    fn output(&self, x: &DVec, u: &DVec) -> DVec;
}

/// Sampled result of an integration run, including the initial sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVec>,
    pub inputs: Vec<DVec>,
    pub outputs: Vec<DVec>,
}

impl Trajectory {
    fn with_capacity(samples: usize) -> Self {
        Trajectory {
            times: Vec::with_capacity(samples),
            states: Vec::with_capacity(samples),
            inputs: Vec::with_capacity(samples),
            outputs: Vec::with_capacity(samples),
        }
    }

    fn push(&mut self, t: f64, x: DVec, u: DVec, y: DVec) {
        self.times.push(t);
        self.states.push(x);
        self.inputs.push(u);
        self.outputs.push(y);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.states.first().map_or(0, |v| v.len())
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.first().map_or(0, |v| v.len())
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.first().map_or(0, |v| v.len())
    }

    /// States as columns, one column per sample.
    pub fn state_matrix(&self) -> DMat {
        let n = self.n_states();
        let mut m = DMat::zeros(n, self.len());
        for (j, x) in self.states.iter().enumerate() {
            m.set_column(j, x);
        }
        m
    }

    /// Outputs as columns, one column per sample.
    pub fn output_matrix(&self) -> DMat {
        let p = self.n_outputs();
        let mut m = DMat::zeros(p, self.len());
        for (j, y) in self.outputs.iter().enumerate() {
            m.set_column(j, y);
        }
        m
    }

    /// Writes `t,x_1..,u_1..,y_1..` rows with 17 significant digits, so a
    /// read-back followed by another write reproduces the file byte for byte.
    pub fn write_csv(&self, path: &Path) -> Result<(), IntegratorError> {
        let io_err = |e: std::io::Error| IntegratorError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        };
        let file = File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        let mut header = String::from("t");
        for i in 0..self.n_states() {
            header.push_str(&format!(",x_{}", i + 1));
        }
        for i in 0..self.n_inputs() {
            header.push_str(&format!(",u_{}", i + 1));
        }
        for i in 0..self.n_outputs() {
            header.push_str(&format!(",y_{}", i + 1));
        }
        writeln!(w, "{}", header).map_err(io_err)?;
        for k in 0..self.len() {
            let mut row = format!("{:.16e}", self.times[k]);
            for v in self.states[k].iter() {
                row.push_str(&format!(",{:.16e}", v));
            }
            for v in self.inputs[k].iter() {
                row.push_str(&format!(",{:.16e}", v));
            }
            for v in self.outputs[k].iter() {
                row.push_str(&format!(",{:.16e}", v));
            }
            writeln!(w, "{}", row).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn read_csv(path: &Path) -> Result<Trajectory, IntegratorError> {
        let io_err = |e: std::io::Error| IntegratorError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        };
        let fmt_err = |line: usize, detail: String| IntegratorError::Format {
            path: path.display().to_string(),
            line,
            detail,
        };
        let file = File::open(path).map_err(io_err)?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| fmt_err(1, "empty file".into()))?;
        let header = header.map_err(io_err)?;
        let mut cols = header.split(',');
        if cols.next() != Some("t") {
            return Err(fmt_err(1, "first column must be 't'".into()));
        }
        let (mut n, mut m, mut p) = (0usize, 0usize, 0usize);
        for name in cols {
            let expected = match (name.split('_').next(), p, m) {
                (Some("x"), 0, 0) => {
                    n += 1;
                    format!("x_{}", n)
                }
                (Some("u"), 0, _) => {
                    m += 1;
                    format!("u_{}", m)
                }
                (Some("y"), _, _) => {
                    p += 1;
                    format!("y_{}", p)
                }
                _ => return Err(fmt_err(1, format!("unexpected column '{}'", name))),
            };
            if name != expected {
                return Err(fmt_err(1, format!("expected column '{}', got '{}'", expected, name)));
            }
        }
        if n == 0 {
            return Err(fmt_err(1, "no state columns".into()));
        }
        let width = 1 + n + m + p;
        let mut traj = Trajectory::with_capacity(16);
        for (idx, line) in lines {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| fmt_err(idx + 1, format!("bad number: {}", e)))?;
            if vals.len() != width {
                return Err(fmt_err(
                    idx + 1,
                    format!("expected {} fields, got {}", width, vals.len()),
                ));
            }
            traj.push(
                vals[0],
                DVec::from_column_slice(&vals[1..1 + n]),
                DVec::from_column_slice(&vals[1 + n..1 + n + m]),
                DVec::from_column_slice(&vals[1 + n + m..]),
            );
        }
        if traj.is_empty() {
            return Err(fmt_err(1, "no samples".into()));
        }
        Ok(traj)
    }
}

fn check_lengths(
    what: &'static str,
    expected: usize,
    got: usize,
) -> Result<(), IntegratorError> {
    if expected != got {
        return Err(IntegratorError::BadDimension { what, expected, got });
    }
    Ok(())
}

/// History vector and scaled step for one BDF step. The order-two formula
/// needs two back values and degrades to order one on the first step.
fn bdf_history(order: BdfOrder, x: &DVec, x_prev: Option<&DVec>, dt: f64) -> (DVec, f64) {
    match (order, x_prev) {
        (BdfOrder::One, _) | (BdfOrder::Two, None) => (x.clone(), dt),
        (BdfOrder::Two, Some(xm)) => (x.scale(4.0 / 3.0) - xm.scale(1.0 / 3.0), 2.0 * dt / 3.0),
    }
}

fn map_singular(e: MatError, t: f64) -> IntegratorError {
    match e {
        MatError::SingularFactor { .. } => IntegratorError::IterationMatrixSingular {
            t,
            detail: "the mass/Jacobian pencil lost rank; if this is the unreduced \
                     field/circuit system it carries redundant magnetic unknowns, \
                     apply the regularization transform before time stepping"
                .into(),
        },
        other => IntegratorError::Mat(other),
    }
}

/// Integrates a dense-mass implicit ODE on a uniform grid.
pub fn integrate_ode<S, F>(
    sys: &S,
    x0: &DVec,
    ctl: &StepControl,
    input: F,
) -> Result<Trajectory, IntegratorError>
where
    S: ImplicitOde + ?Sized,
    F: Fn(f64) -> DVec,
{
    let n = sys.dim();
    check_lengths("initial state", n, x0.len())?;
    let e = sys.mass();
    check_lengths("mass rows", n, e.nrows())?;
    check_lengths("mass cols", n, e.ncols())?;
    let steps = ctl.steps()?;

    let mut traj = Trajectory::with_capacity(steps + 1);
    let u0 = input(0.0);
    check_lengths("input sample", sys.n_inputs(), u0.len())?;
    let y0 = sys.output(x0, &u0);
    traj.push(0.0, x0.clone(), u0, y0);

    let mut x = x0.clone();
    let mut x_prev: Option<DVec> = None;
    for k in 0..steps {
        let t_next = (k + 1) as f64 * ctl.dt;
        let u_next = input(t_next);
        check_lengths("input sample", sys.n_inputs(), u_next.len())?;
        let (hist, dtp) = bdf_history(ctl.order, &x, x_prev.as_ref(), ctl.dt);

        let mut xn = hist.clone();
        let mut update = f64::INFINITY;
        let mut converged = false;
        for _ in 0..ctl.max_newton {
            let g = sys.rhs(&xn, &u_next)?;
            let fres = &e * (&xn - &hist) - g.scale(dtp);
            let mut jac = sys.rhs_jacobian(&xn)?.scale(-dtp);
            jac += &e;
            let delta = matcore::solve_lu(&jac, &(-fres)).map_err(|er| map_singular(er, t_next))?;
            xn += &delta;
            update = delta.norm();
            if update <= ctl.newton_tol * (1.0 + xn.norm()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(IntegratorError::NewtonStalled {
                t: t_next,
                step: k + 1,
                update_norm: update,
            });
        }
        let y = sys.output(&xn, &u_next);
        traj.push(t_next, xn.clone(), u_next, y);
        x_prev = Some(std::mem::replace(&mut x, xn));
    }
    Ok(traj)
}

/// Integrates a sparse-mass system on a uniform grid. The mass matrix may be
/// singular; zero rows of E must be matched by zero initial residual rows.
pub fn integrate_dae<S, F>(
    sys: &S,
    x0: &DVec,
    ctl: &StepControl,
    input: F,
) -> Result<Trajectory, IntegratorError>
where
    S: ImplicitDae + ?Sized,
    F: Fn(f64) -> DVec,
{
    let n = sys.dim();
    check_lengths("initial state", n, x0.len())?;
    let e = sys.mass();
    check_lengths("mass rows", n, e.nrows())?;
    check_lengths("mass cols", n, e.ncols())?;
    let steps = ctl.steps()?;

    let mut traj = Trajectory::with_capacity(steps + 1);
    let u0 = input(0.0);
    check_lengths("input sample", sys.n_inputs(), u0.len())?;

    // Rows of E with no entries are purely algebraic; the start state must
    // already satisfy them or the first step would absorb an O(1/dt) jump.
    let g0 = sys.rhs(x0, &u0)?;
    let gscale = CONSISTENCY_TOL * (1.0 + g0.norm());
    for i in 0..n {
        let (_, vals) = e.row(i);
        if vals.iter().all(|v| *v == 0.0) && g0[i].abs() > gscale {
            return Err(IntegratorError::InconsistentStart {
                row: i,
                residual: g0[i].abs(),
                tol: gscale,
            });
        }
    }

    let y0 = sys.output(x0, &u0);
    traj.push(0.0, x0.clone(), u0, y0);

    let e_triplets: Vec<(usize, usize, f64)> = e.triplet_iter().collect();
    let mut x = x0.clone();
    let mut x_prev: Option<DVec> = None;
    for k in 0..steps {
        let t_next = (k + 1) as f64 * ctl.dt;
        let u_next = input(t_next);
        check_lengths("input sample", sys.n_inputs(), u_next.len())?;
        let (hist, dtp) = bdf_history(ctl.order, &x, x_prev.as_ref(), ctl.dt);

        let mut xn = hist.clone();
        let mut update = f64::INFINITY;
        let mut converged = false;
        for _ in 0..ctl.max_newton {
            let g = sys.rhs(&xn, &u_next)?;
            let fres = e.matvec(&(&xn - &hist))? - g.scale(dtp);
            let jg = sys.rhs_jacobian(&xn)?;
            let mut trip = e_triplets.clone();
            trip.extend(jg.triplet_iter().map(|(r, c, v)| (r, c, -dtp * v)));
            let jac = SparseMatrix::from_triplets(n, n, &trip)?;
            let lu = SparseLu::factor(&jac, SPARSE_PIVOT_FLOOR)
                .map_err(|er| map_singular(er, t_next))?;
            let delta = lu.solve(&(-fres))?;
            xn += &delta;
            update = delta.norm();
            if update <= ctl.newton_tol * (1.0 + xn.norm()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(IntegratorError::NewtonStalled {
                t: t_next,
                step: k + 1,
                update_norm: update,
            });
        }
        let y = sys.output(&xn, &u_next);
        traj.push(t_next, xn.clone(), u_next, y);
        x_prev = Some(std::mem::replace(&mut x, xn));
    }
    Ok(traj)
}

#[cfg(test)]
mod tests;
