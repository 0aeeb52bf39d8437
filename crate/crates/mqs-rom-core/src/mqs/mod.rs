//! The structured quasilinear MQS differential-algebraic system.
//!
//! State z = [a; i] stacks the field unknowns (conducting block first) and
//! the port currents. The system reads
//!
//! ```text
//!   d/dt (Msig a)  = -K(a) a + X i
//!   d/dt (Xᵀ a)    = -R i + v
//!        y         = i
//! ```
//!
//! with Msig = blockdiag(M11, 0) and the curl-curl operator
//! K(a) = Cdᵀ Mnu(Cd a) Cd, where Mnu applies one reluctivity value per flux
//! group. Only conducting groups are nonlinear, and they touch only the first
//! n1 unknowns, so K splits exactly into a frozen linear operator (conducting
//! reluctivity held at its zero-flux value) plus a saturation term depending
//! on a1 alone. That split is what the reduction stages approximate.

use crate::matcore::{DMat, DVec, MatError, SparseMatrix};
use crate::problem::FemProblem;

/// Per-group assembly view: the dense sub-block of Cd on the group's rows,
/// the (sorted) global columns it touches, and the constant local Gram
/// matrix blockᵀ·block used for stiffness scatter.
#[derive(Debug, Clone)]
pub struct FluxGroup {
    pub weight: f64,
    pub conducting: bool,
    pub cols: Vec<usize>,
    pub block: DMat,
    pub gram: DMat,
}

impl FluxGroup {
    /// Group flux vector w_g = block · v[cols]. Conducting groups touch only
    /// the first n1 columns, so a bare a1 vector works for them too.
    pub fn flux(&self, v: &DVec) -> DVec {
        let local = DVec::from_fn(self.cols.len(), |j, _| v[self.cols[j]]);
        &self.block * local
    }
}

#[derive(Debug, Clone)]
pub struct MqsDae {
    pub problem: FemProblem,
    groups: Vec<FluxGroup>,
    k_frozen: SparseMatrix,
    nu0: f64,
}

impl MqsDae {
    pub fn new(problem: FemProblem) -> Result<Self, MatError> {
        let gd = problem.flux.group_dim;
        let n = problem.n_nodes();
        let mut groups = Vec::with_capacity(problem.flux.n_groups());
        for g in 0..problem.flux.n_groups() {
            let rows = problem.flux.group_rows(g);
            let mut cols: Vec<usize> = Vec::new();
            for r in rows.clone() {
                let (rc, _) = problem.cd.row(r);
                for &c in rc {
                    if !cols.contains(&c) {
                        cols.push(c);
                    }
                }
            }
            cols.sort_unstable();
            let mut block = DMat::zeros(gd, cols.len());
            for (li, r) in rows.clone().enumerate() {
                let (rc, rv) = problem.cd.row(r);
                for (&c, &v) in rc.iter().zip(rv) {
                    let lj = cols.binary_search(&c).unwrap();
                    block[(li, lj)] = v;
                }
            }
            let gram = block.transpose() * &block;
            groups.push(FluxGroup {
                weight: problem.flux.weights[g],
                conducting: problem.flux.conducting[g],
                cols,
                block,
                gram,
            });
        }

        let nu0 = problem.curve.nu_conducting_at_zero();
        let mut t = Vec::new();
        for gr in &groups {
            let nu = if gr.conducting { nu0 } else { problem.curve.nu_air };
            scatter_scaled_gram(&mut t, gr, nu * gr.weight);
        }
        let k_frozen = SparseMatrix::from_triplets(n, n, &t)?;
        Ok(MqsDae { problem, groups, k_frozen, nu0 })
    }

    pub fn n(&self) -> usize {
        self.problem.n_nodes()
    }

    pub fn n1(&self) -> usize {
        self.problem.n1
    }

    pub fn m(&self) -> usize {
        self.problem.m
    }

    /// DAE state dimension: field unknowns plus port currents.
    pub fn n_state(&self) -> usize {
        self.n() + self.m()
    }

    pub fn groups(&self) -> &[FluxGroup] {
        &self.groups
    }

    /// Zero-flux conducting reluctivity, the freezing point of the split.
    pub fn nu_frozen(&self) -> f64 {
        self.nu0
    }

    /// Linear part of K: conducting reluctivity frozen at zero flux.
    pub fn k_frozen(&self) -> &SparseMatrix {
        &self.k_frozen
    }

    /// Full quasilinear stiffness K(a).
    pub fn assemble_k(&self, a: &DVec) -> Result<SparseMatrix, MatError> {
        let mut t = Vec::new();
        for gr in &self.groups {
            let nu = if gr.conducting {
                let zeta = gr.flux(a).norm();
                self.problem.curve.nu(true, zeta)
            } else {
                self.problem.curve.nu_air
            };
            scatter_scaled_gram(&mut t, gr, nu * gr.weight);
        }
        SparseMatrix::from_triplets(self.n(), self.n(), &t)
    }

    /// Saturation force s(a1) with K(a)·a = K_frozen·a + [s(a1); 0].
    pub fn saturation_term(&self, a1: &DVec) -> DVec {
        let mut out = DVec::zeros(self.n1());
        for gr in &self.groups {
            if !gr.conducting {
                continue;
            }
            let w = gr.flux(a1);
            let zeta = w.norm();
            let dnu = self.problem.curve.nu(true, zeta) - self.nu0;
            if dnu == 0.0 {
                continue;
            }
            let y = gr.block.transpose() * w * (dnu * gr.weight);
            for (lj, &c) in gr.cols.iter().enumerate() {
                out[c] += y[lj];
            }
        }
        out
    }

    /// Jacobian of the saturation force: for each conducting group
    /// d/dw [w·nu(|w|)·weight] = weight·(dnu·I + nu'(z)/z · w wᵀ), pulled
    /// back through the group block.
    pub fn saturation_jacobian(&self, a1: &DVec) -> Result<SparseMatrix, MatError> {
        let mut t = Vec::new();
        for gr in &self.groups {
            if !gr.conducting {
                continue;
            }
            let w = gr.flux(a1);
            let zeta = w.norm();
            let dnu = self.problem.curve.nu(true, zeta) - self.nu0;
            if dnu != 0.0 {
                scatter_scaled_gram(&mut t, gr, dnu * gr.weight);
            }
            let slope = self.problem.curve.dnu_over_zeta(true, zeta);
            if slope != 0.0 && zeta > 0.0 {
                let bw = gr.block.transpose() * w;
                for (li, &ci) in gr.cols.iter().enumerate() {
                    for (lj, &cj) in gr.cols.iter().enumerate() {
                        t.push((ci, cj, slope * gr.weight * bw[li] * bw[lj]));
                    }
                }
            }
        }
        SparseMatrix::from_triplets(self.n1(), self.n1(), &t)
    }

    /// Analytic Jacobian of a -> K(a)a.
    pub fn jacobian_ka(&self, a: &DVec) -> Result<SparseMatrix, MatError> {
        let a1 = a.rows(0, self.n1()).into_owned();
        let sat = self.saturation_jacobian(&a1)?;
        let mut t: Vec<(usize, usize, f64)> = self.k_frozen.triplet_iter().collect();
        t.extend(sat.triplet_iter());
        SparseMatrix::from_triplets(self.n(), self.n(), &t)
    }

    /// Unit-reluctivity stiffness K_L = Cdᵀ Mf Cd, the monotonicity metric.
    pub fn k_unit(&self) -> SparseMatrix {
        let mut t = Vec::new();
        for gr in &self.groups {
            scatter_scaled_gram(&mut t, gr, gr.weight);
        }
        SparseMatrix::from_triplets(self.n(), self.n(), &t).unwrap()
    }

    /// Conducting-region unit stiffness on the a1 block.
    pub fn k_unit_conducting(&self) -> SparseMatrix {
        let mut t = Vec::new();
        for gr in &self.groups {
            if gr.conducting {
                scatter_scaled_gram(&mut t, gr, gr.weight);
            }
        }
        SparseMatrix::from_triplets(self.n1(), self.n1(), &t).unwrap()
    }

    /// K(a)·a evaluated through the frozen/saturation split.
    pub fn apply_k(&self, a: &DVec) -> Result<DVec, MatError> {
        let mut out = self.k_frozen.matvec(a)?;
        let a1 = a.rows(0, self.n1()).into_owned();
        let sat = self.saturation_term(&a1);
        for i in 0..self.n1() {
            out[i] += sat[i];
        }
        Ok(out)
    }

    /// Constant DAE mass matrix [[Msig, 0], [Xᵀ, 0]].
    pub fn mass_dae(&self) -> SparseMatrix {
        let n = self.n();
        let m = self.m();
        let mut t: Vec<(usize, usize, f64)> = self.problem.m11.triplet_iter().collect();
        for j in 0..m {
            for i in 0..n {
                let v = self.problem.x[(i, j)];
                if v != 0.0 {
                    t.push((n + j, i, v));
                }
            }
        }
        SparseMatrix::from_triplets(n + m, n + m, &t).unwrap()
    }

    /// Right-hand side g(z, u) = [-K(a)a + X i; -R i + u].
    pub fn rhs(&self, z: &DVec, u: &DVec) -> Result<DVec, MatError> {
        let n = self.n();
        let m = self.m();
        if z.len() != n + m || u.len() != m {
            return Err(MatError::DimensionMismatch {
                op: "dae rhs",
                expected: (n + m, m),
                got: (z.len(), u.len()),
            });
        }
        let a = z.rows(0, n).into_owned();
        let i = z.rows(n, m).into_owned();
        let ka = self.apply_k(&a)?;
        let mut out = DVec::zeros(n + m);
        let xi = &self.problem.x * &i;
        for r in 0..n {
            out[r] = -ka[r] + xi[r];
        }
        let ri = &self.problem.r * &i;
        for j in 0..m {
            out[n + j] = -ri[j] + u[j];
        }
        Ok(out)
    }

    /// Jacobian of the right-hand side in z: [[-J_K(a), X], [0, -R]].
    pub fn rhs_jacobian(&self, z: &DVec) -> Result<SparseMatrix, MatError> {
        let n = self.n();
        let m = self.m();
        let a = z.rows(0, n).into_owned();
        let jk = self.jacobian_ka(&a)?;
        let mut t: Vec<(usize, usize, f64)> =
            jk.triplet_iter().map(|(i, j, v)| (i, j, -v)).collect();
        for j in 0..m {
            for i in 0..n {
                let v = self.problem.x[(i, j)];
                if v != 0.0 {
                    t.push((i, n + j, v));
                }
            }
            for i in 0..m {
                let v = self.problem.r[(i, j)];
                if v != 0.0 {
                    t.push((n + i, n + j, -v));
                }
            }
        }
        SparseMatrix::from_triplets(n + m, n + m, &t)
    }

    /// Port output y = i.
    pub fn output(&self, z: &DVec) -> DVec {
        z.rows(self.n(), self.m()).into_owned()
    }
}

impl crate::integrator::ImplicitDae for MqsDae {
    fn dim(&self) -> usize {
        self.n_state()
    }

    fn n_inputs(&self) -> usize {
        self.m()
    }

    fn n_outputs(&self) -> usize {
        self.m()
    }

    fn mass(&self) -> SparseMatrix {
        self.mass_dae()
    }

    fn rhs(&self, x: &DVec, u: &DVec) -> Result<DVec, MatError> {
        MqsDae::rhs(self, x, u)
    }

    fn rhs_jacobian(&self, x: &DVec) -> Result<SparseMatrix, MatError> {
        MqsDae::rhs_jacobian(self, x)
    }

    fn output(&self, x: &DVec, _u: &DVec) -> DVec {
        MqsDae::output(self, x)
    }
}

fn scatter_scaled_gram(t: &mut Vec<(usize, usize, f64)>, gr: &FluxGroup, scale: f64) {
    for (li, &ci) in gr.cols.iter().enumerate() {
        for (lj, &cj) in gr.cols.iter().enumerate() {
            let v = scale * gr.gram[(li, lj)];
            if v != 0.0 {
                t.push((ci, cj, v));
            }
        }
    }
}
