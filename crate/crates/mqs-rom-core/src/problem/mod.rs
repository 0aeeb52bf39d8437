//! Problem assembly and ingestion for the structured MQS discretization.
//!
//! A [`FemProblem`] holds exactly the quantities the downstream pipeline
//! needs, in a conducting-first ordering of the potential unknowns:
//!
//! * `m11`: conductivity-weighted mass matrix on the n1 conducting unknowns,
//!   symmetric positive definite;
//! * `cd`: discrete curl/gradient mapping potentials to per-element flux
//!   unknowns (grouped rows, see [`FluxMap`]);
//! * `upsilon`: winding flux functions, with the load matrix `x = cdᵀ·upsilon`;
//! * `r`: positive definite port resistances;
//! * `curve`: quasilinear reluctivity, nonlinear only on conducting groups.
//!
//! Two reference constructors are provided: a 2D transformer cross-section on
//! a uniform triangulation ([`build_transformer_2d`]) and a structured-hex
//! synthetic problem with edge unknowns whose non-conducting curl block has a
//! nontrivial kernel ([`build_synthetic_3d`]). Problems can also be written
//! to and ingested from a plain-text bundle of Matrix Market files, with all
//! structural invariants re-validated on the way in.

mod bundle;
mod matrix_market;
mod synthetic3d;
mod transformer2d;

pub use bundle::{read_bundle, write_bundle};
pub use matrix_market::{read_matrix_market, write_matrix_market};
pub use synthetic3d::{build_synthetic_3d, Synthetic3dConfig};
pub use transformer2d::{build_transformer_2d, Rect, Transformer2dConfig};

use crate::matcore::{self, DMat, MatError, SparseMatrix};

/// Vacuum reluctivity 1/mu_0 in m/H.
pub const NU_VACUUM: f64 = 1.0 / (4.0e-7 * std::f64::consts::PI);

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemError {
    Geometry(String),
    Curve(String),
    Ingest(String),
    Io { path: String, detail: String },
    Format { path: String, line: usize, detail: String },
    Mat(MatError),
}

impl std::fmt::Display for ProblemError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemError::Geometry(s) => write!(f, "geometry error: {}", s),
            ProblemError::Curve(s) => write!(f, "reluctivity curve error: {}", s),
            ProblemError::Ingest(s) => write!(f, "ingestion invariant violated: {}", s),
            ProblemError::Io { path, detail } => write!(f, "io error on {}: {}", path, detail),
            ProblemError::Format { path, line, detail } => {
                write!(f, "format error in {} line {}: {}", path, line, detail)
            }
            ProblemError::Mat(e) => write!(f, "matrix error: {}", e),
        }
    }
}

impl std::error::Error for ProblemError {}

impl From<MatError> for ProblemError {
    fn from(e: MatError) -> Self {
        ProblemError::Mat(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemDim {
    TwoD,
    ThreeDType,
}

impl ProblemDim {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemDim::TwoD => "2d",
            ProblemDim::ThreeDType => "3d",
        }
    }
}

/// Grouping of the flux unknowns (rows of `cd`).
///
/// Each group carries one reluctivity value: its argument is the Euclidean
/// norm of the group's sub-vector of `cd·a`. 2D triangulations group the two
/// gradient components of one element (`group_dim = 2`); hex-face unknowns
/// stand alone (`group_dim = 1`). `weights` are the positive quadrature
/// weights (element areas / face areas) and double as the diagonal of the
/// unit-reluctivity flux mass matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxMap {
    pub group_dim: usize,
    pub weights: Vec<f64>,
    pub conducting: Vec<bool>,
}

impl FluxMap {
    pub fn n_groups(&self) -> usize {
        self.weights.len()
    }

    pub fn n_rows(&self) -> usize {
        self.group_dim * self.weights.len()
    }

    pub fn group_rows(&self, g: usize) -> std::ops::Range<usize> {
        g * self.group_dim..(g + 1) * self.group_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveKind {
    /// Constant reluctivity on the conducting region.
    Constant { nu: f64 },
    /// Brauer saturation curve nu(z) = k1 exp(k2 z^2) + k3.
    Brauer { k1: f64, k2: f64, k3: f64 },
}

/// Reluctivity data for both material regions, with certified strong
/// monotonicity and Lipschitz constants of z -> nu(z) z on [0, zeta_max].
///
/// The constants are the numerical min/max of the analytic derivative
/// d(nu(z) z)/dz on a fine grid including both endpoints. For the supported
/// curve families the derivative is monotone, so the endpoint samples are the
/// exact extrema and every difference quotient lies in [m, L].
#[derive(Debug, Clone, PartialEq)]
pub struct ReluctivityCurve {
    pub kind: CurveKind,
    pub nu_air: f64,
    pub zeta_max: f64,
    m_c: f64,
    l_c: f64,
}

const CURVE_SCAN_POINTS: usize = 4096;

impl ReluctivityCurve {
    pub fn brauer(k1: f64, k2: f64, k3: f64, nu_air: f64, zeta_max: f64) -> Result<Self, ProblemError> {
        Self::new(CurveKind::Brauer { k1, k2, k3 }, nu_air, zeta_max)
    }

    pub fn constant(nu: f64, nu_air: f64, zeta_max: f64) -> Result<Self, ProblemError> {
        Self::new(CurveKind::Constant { nu }, nu_air, zeta_max)
    }

    pub fn new(kind: CurveKind, nu_air: f64, zeta_max: f64) -> Result<Self, ProblemError> {
        if !(nu_air > 0.0) || !nu_air.is_finite() {
            return Err(ProblemError::Curve(format!(
                "air reluctivity must be positive and finite, got {}",
                nu_air
            )));
        }
        if !(zeta_max > 0.0) || !zeta_max.is_finite() {
            return Err(ProblemError::Curve(format!(
                "zeta_max must be positive and finite, got {}",
                zeta_max
            )));
        }
        match kind {
            CurveKind::Constant { nu } if !(nu > 0.0) => {
                return Err(ProblemError::Curve(format!(
                    "constant reluctivity must be positive, got {}",
                    nu
                )));
            }
            CurveKind::Brauer { k1, k2, k3 } if !(k1 >= 0.0 && k2 >= 0.0 && k3 >= 0.0) => {
                return Err(ProblemError::Curve(format!(
                    "Brauer parameters must be nonnegative, got ({}, {}, {})",
                    k1, k2, k3
                )));
            }
            _ => {}
        }
        let mut curve = ReluctivityCurve {
            kind,
            nu_air,
            zeta_max,
            m_c: 0.0,
            l_c: 0.0,
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=CURVE_SCAN_POINTS {
            let z = zeta_max * (i as f64) / (CURVE_SCAN_POINTS as f64);
            let d = curve.dh_conducting(z);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(ProblemError::Curve(format!(
                "curve is not strongly monotone on [0, {}]: derivative range [{:.3e}, {:.3e}]",
                zeta_max, lo, hi
            )));
        }
        curve.m_c = lo;
        curve.l_c = hi;
        Ok(curve)
    }

    /// Same curve with refit constants on a new certified range.
    pub fn with_zeta_max(&self, zeta_max: f64) -> Result<Self, ProblemError> {
        Self::new(self.kind, self.nu_air, zeta_max)
    }

    /// Reluctivity value for a flux magnitude in the given material region.
    pub fn nu(&self, conducting: bool, zeta: f64) -> f64 {
        if !conducting {
            return self.nu_air;
        }
        match self.kind {
            CurveKind::Constant { nu } => nu,
            CurveKind::Brauer { k1, k2, k3 } => k1 * (k2 * zeta * zeta).exp() + k3,
        }
    }

    /// `nu'(zeta) / zeta`, which stays finite at zero for the smooth families.
    pub fn dnu_over_zeta(&self, conducting: bool, zeta: f64) -> f64 {
        if !conducting {
            return 0.0;
        }
        match self.kind {
            CurveKind::Constant { .. } => 0.0,
            CurveKind::Brauer { k1, k2, .. } => 2.0 * k1 * k2 * (k2 * zeta * zeta).exp(),
        }
    }

    /// Derivative of z -> nu(z) z on the conducting region.
    pub fn dh_conducting(&self, zeta: f64) -> f64 {
        self.nu(true, zeta) + self.dnu_over_zeta(true, zeta) * zeta * zeta
    }

    /// Strong monotonicity constant over both regions.
    pub fn m_mono(&self) -> f64 {
        self.m_c.min(self.nu_air)
    }

    /// Lipschitz constant over both regions.
    pub fn l_lip(&self) -> f64 {
        self.l_c.max(self.nu_air)
    }

    /// Strong monotonicity constant of the conducting curve alone.
    pub fn m_mono_conducting(&self) -> f64 {
        self.m_c
    }

    /// Conducting reluctivity at zero flux; the linear/nonlinear splitting
    /// point for the nonlinear term.
    pub fn nu_conducting_at_zero(&self) -> f64 {
        self.nu(true, 0.0)
    }
}

/// Immutable structured MQS problem. Constructed by the builders or ingested
/// from a bundle; `validate` re-checks every structural invariant.
#[derive(Debug, Clone)]
pub struct FemProblem {
    pub dimension: ProblemDim,
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub m11: SparseMatrix,
    pub cd: SparseMatrix,
    pub upsilon: SparseMatrix,
    pub x: DMat,
    pub r: DMat,
    pub curve: ReluctivityCurve,
    pub flux: FluxMap,
}

impl FemProblem {
    pub fn n_nodes(&self) -> usize {
        self.n1 + self.n2
    }

    /// Conducting block of the winding load matrix (rows 0..n1).
    pub fn x1(&self) -> DMat {
        self.x.rows(0, self.n1).into_owned()
    }

    /// Non-conducting block of the winding load matrix (rows n1..).
    pub fn x2(&self) -> DMat {
        self.x.rows(self.n1, self.n2).into_owned()
    }

    /// Diagonal unit-reluctivity flux mass matrix.
    pub fn mf(&self) -> SparseMatrix {
        let n = self.flux.n_rows();
        let mut t = Vec::with_capacity(n);
        for g in 0..self.flux.n_groups() {
            for row in self.flux.group_rows(g) {
                t.push((row, row, self.flux.weights[g]));
            }
        }
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    /// Flux mass restricted to conducting groups, full size with zero rows on
    /// the rest. Its sparsity pattern encodes the conducting group set.
    pub fn mf1(&self) -> SparseMatrix {
        let n = self.flux.n_rows();
        let mut t = Vec::new();
        for g in 0..self.flux.n_groups() {
            if self.flux.conducting[g] {
                for row in self.flux.group_rows(g) {
                    t.push((row, row, self.flux.weights[g]));
                }
            }
        }
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    /// Check every structural invariant; returns the first violation with a
    /// diagnostic naming the invariant.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let n = self.n1 + self.n2;
        if self.n1 == 0 {
            return Err(ProblemError::Ingest("n1 >= 1: no conducting unknowns".into()));
        }
        if self.m == 0 {
            return Err(ProblemError::Ingest("m >= 1: no ports".into()));
        }
        if self.flux.group_dim == 0 || self.flux.conducting.len() != self.flux.n_groups() {
            return Err(ProblemError::Ingest(
                "flux map: group_dim >= 1 and one conducting flag per group".into(),
            ));
        }
        if self.flux.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(ProblemError::Ingest("flux weights must be positive and finite".into()));
        }
        if self.m11.nrows() != self.n1 || self.m11.ncols() != self.n1 {
            return Err(ProblemError::Ingest(format!(
                "M11 shape {}x{} does not match n1 = {}",
                self.m11.nrows(),
                self.m11.ncols(),
                self.n1
            )));
        }
        if self.cd.nrows() != self.flux.n_rows() || self.cd.ncols() != n {
            return Err(ProblemError::Ingest(format!(
                "Cd shape {}x{} does not match flux rows {} x nodes {}",
                self.cd.nrows(),
                self.cd.ncols(),
                self.flux.n_rows(),
                n
            )));
        }
        if self.upsilon.nrows() != self.flux.n_rows() || self.upsilon.ncols() != self.m {
            return Err(ProblemError::Ingest("Upsilon shape mismatch".into()));
        }
        if self.x.nrows() != n || self.x.ncols() != self.m {
            return Err(ProblemError::Ingest("X shape mismatch".into()));
        }
        if self.r.nrows() != self.m || self.r.ncols() != self.m {
            return Err(ProblemError::Ingest("R shape mismatch".into()));
        }

        let m11d = self.m11.to_dense();
        let eig = matcore::sym_eig_extreme(&m11d)
            .map_err(|e| ProblemError::Ingest(format!("M11 symmetric: {}", e)))?;
        if !(eig.lambda_min > 0.0) {
            return Err(ProblemError::Ingest(format!(
                "M11 positive definite: lambda_min = {:.3e}",
                eig.lambda_min
            )));
        }
        let eig_r = matcore::sym_eig_extreme(&self.r)
            .map_err(|e| ProblemError::Ingest(format!("R symmetric: {}", e)))?;
        if !(eig_r.lambda_min > 0.0) {
            return Err(ProblemError::Ingest(format!(
                "R positive definite: lambda_min = {:.3e}",
                eig_r.lambda_min
            )));
        }

        let xw = self.cd.tr_mul_dense(&self.upsilon.to_dense())?;
        let dx = (&self.x - &xw).norm();
        if dx > 1e-10 * self.x.norm().max(1.0) {
            return Err(ProblemError::Ingest(format!(
                "X = Cdᵀ·Upsilon: residual {:.3e}",
                dx
            )));
        }

        if self.n2 < self.m {
            return Err(ProblemError::Ingest(format!(
                "X2 full column rank needs n2 >= m, got n2 = {}, m = {}",
                self.n2, self.m
            )));
        }
        let x2 = self.x2();
        let svd = matcore::thin_svd(&x2)?;
        let smax = svd.sigma[0];
        let smin = svd.sigma[svd.sigma.len() - 1];
        if !(smax > 0.0) || smin <= 1e-10 * smax {
            return Err(ProblemError::Ingest(format!(
                "X2 full column rank: sigma_min/sigma_max = {:.3e}",
                if smax > 0.0 { smin / smax } else { 0.0 }
            )));
        }

        // Conducting flux groups must touch only conducting unknowns so the
        // nonlinear block depends on a1 alone.
        for g in 0..self.flux.n_groups() {
            if self.flux.conducting[g] {
                for row in self.flux.group_rows(g) {
                    let (cols, _) = self.cd.row(row);
                    if cols.iter().any(|&c| c >= self.n1) {
                        return Err(ProblemError::Ingest(format!(
                            "conducting flux group {} touches non-conducting unknowns",
                            g
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
