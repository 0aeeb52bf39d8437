//! Model order reduction for quasilinear magneto-quasistatic (MQS) field/circuit
//! systems.
//!
//! The toolkit covers the full path from a structured finite-element DAE to a
//! certified reduced model:
//!
//! 1. [`problem`] assembles (or ingests) the structured quantities of the MQS
//!    discretization: conducting-node mass `M11`, discrete curl/gradient `C_d`,
//!    winding matrix `Υ`, resistances `R`, and a quasilinear reluctivity curve.
//! 2. [`mqs`] evaluates the coupled field/circuit DAE, its residuals, and the
//!    analytic Newton Jacobian of the curl-curl term.
//! 3. [`regularization`] projects out the singular non-conducting components,
//!    certifies that the resulting pencil has tractable index, builds the
//!    condensed block form, the symmetric reflexive pseudoinverse, the
//!    state-independent output matrix, and the equivalent low-index ODE.
//! 4. [`integrator`] runs fixed-step BDF1/BDF2 with an inexactness-free Newton
//!    solver on either the sparse full system or the dense reduced systems.
//! 5. [`rom`] computes POD bases from snapshot matrices and assembles the
//!    projected ODE plus its DEIM-sampled nonlinearity.
//! 6. [`passivity`] evaluates the magnetic storage function, checks the discrete
//!    dissipation inequality, computes the computable state error bounds, and
//!    perturbs reduced outputs just enough to restore input/output passivity.
//!
//! [`matcore`] holds the shared matrix infrastructure: dense kernels, rank
//! decisions, orthonormal bases, and a sparse LU for the stiff Newton systems.

/// Crate version, recorded in run manifests alongside artifact digests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod integrator;
pub mod matcore;
pub mod mqs;
pub mod passivity;
pub mod problem;
pub mod regularization;
pub mod rom;

pub use integrator::{BdfOrder, StepControl, Trajectory};
pub use passivity::{
    check_dissipation, deim_error_constant, io_passivity_integral, log_lipschitz_bounds,
    passify, relative_output_error, state_error_bound, ErrorBound, PassivityReport,
    StorageEvaluator,
};
pub use regularization::{regularize, OdeSystem, RegularizedSystem};
pub use matcore::{DMat, DVec, OrthonormalBasis, SparseMatrix};
pub use mqs::MqsDae;
pub use problem::{FemProblem, ReluctivityCurve};
pub use rom::{build_deim, build_pod, deim_select, pod_basis, PodBasis, PodSpec, RomDeim, RomPod};
