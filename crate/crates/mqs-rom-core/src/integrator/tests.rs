use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::mqs::MqsDae;
use crate::problem::{
    build_synthetic_3d, build_transformer_2d, Synthetic3dConfig, Transformer2dConfig,
};

/// Scalar test plant x' = -x^3 + u with manufactured forcing
/// u(t) = cos t + sin^3 t, so the exact solution is x(t) = sin t.
struct CubicForced;

impl ImplicitOde for CubicForced {
    fn dim(&self) -> usize {
        1
    }

    fn n_inputs(&self) -> usize {
        1
    }

    fn n_outputs(&self) -> usize {
        1
    }

    fn mass(&self) -> DMat {
        DMat::identity(1, 1)
    }

    fn rhs(&self, x: &DVec, u: &DVec) -> Result<DVec, MatError> {
        Ok(DVec::from_element(1, -x[0].powi(3) + u[0]))
    }

    fn rhs_jacobian(&self, x: &DVec) -> Result<DMat, MatError> {
        Ok(DMat::from_element(1, 1, -3.0 * x[0] * x[0]))
    }

    fn output(&self, x: &DVec, _u: &DVec) -> DVec {
        x.clone()
    }
}

fn cubic_forcing(t: f64) -> DVec {
    DVec::from_element(1, t.cos() + t.sin().powi(3))
}

fn cubic_error(steps: usize, order: BdfOrder) -> f64 {
    let t_end = 1.0;
    let ctl = StepControl::new(t_end / steps as f64, t_end, order);
    let traj = integrate_ode(&CubicForced, &DVec::zeros(1), &ctl, cubic_forcing).unwrap();
    assert_eq!(traj.len(), steps + 1);
    (traj.states.last().unwrap()[0] - t_end.sin()).abs()
}

#[test]
fn bdf_methods_recover_nominal_convergence_orders() {
    let e1 = cubic_error(40, BdfOrder::One);
    let e2 = cubic_error(80, BdfOrder::One);
    let p1 = (e1 / e2).log2();
    assert!(
        (p1 - 1.0).abs() <= 0.15,
        "BDF1 observed order {:.3} (errors {:.3e}, {:.3e})",
        p1,
        e1,
        e2
    );

    let e1 = cubic_error(40, BdfOrder::Two);
    let e2 = cubic_error(80, BdfOrder::Two);
    let p2 = (e1 / e2).log2();
    assert!(
        (p2 - 2.0).abs() <= 0.2,
        "BDF2 observed order {:.3} (errors {:.3e}, {:.3e})",
        p2,
        e1,
        e2
    );
}

#[test]
fn newton_reports_stall_when_iteration_cap_is_tight() {
    let mut ctl = StepControl::new(0.5, 1.0, BdfOrder::One);
    ctl.max_newton = 1;
    let err = integrate_ode(&CubicForced, &DVec::from_element(1, 2.0), &ctl, cubic_forcing)
        .unwrap_err();
    match err {
        IntegratorError::NewtonStalled { step, update_norm, .. } => {
            assert_eq!(step, 1);
            assert!(update_norm > NEWTON_TOL);
        }
        other => panic!("expected NewtonStalled, got {}", other),
    }
}

#[test]
fn time_grid_must_divide_evenly() {
    let ctl = StepControl::new(0.3, 1.0, BdfOrder::One);
    assert!(matches!(
        integrate_ode(&CubicForced, &DVec::zeros(1), &ctl, cubic_forcing),
        Err(IntegratorError::InvalidGrid { .. })
    ));
    let ctl = StepControl::new(-0.1, 1.0, BdfOrder::One);
    assert!(matches!(ctl.steps(), Err(IntegratorError::InvalidGrid { .. })));
}

fn transformer_dae() -> MqsDae {
    let problem = build_transformer_2d(&Transformer2dConfig::default()).unwrap();
    MqsDae::new(problem).unwrap()
}

fn port_drive(m: usize) -> impl Fn(f64) -> DVec {
    move |t: f64| {
        let mut u = DVec::zeros(m);
        u[0] = (2.0 * PI * t).sin();
        u
    }
}

#[test]
fn field_circuit_dae_refines_at_first_order() {
    let dae = transformer_dae();
    let x0 = DVec::zeros(dae.n_state());
    let t_end = 0.2;
    let run = |steps: usize| {
        let ctl = StepControl::new(t_end / steps as f64, t_end, BdfOrder::One);
        let traj = integrate_dae(&dae, &x0, &ctl, port_drive(dae.m())).unwrap();
        assert_eq!(traj.len(), steps + 1);
        assert_eq!(traj.states[0], x0);
        assert!((traj.times.last().unwrap() - t_end).abs() < 1e-12);
        traj.states.last().unwrap().clone()
    };
    let x_h = run(8);
    let x_h2 = run(16);
    let x_h4 = run(32);
    let d1 = (&x_h - &x_h2).norm();
    let d2 = (&x_h2 - &x_h4).norm();
    assert!(d1.is_finite() && d2 > 0.0);
    // successive-difference ratio of a first-order method tends to 2
    let ratio = d1 / d2;
    assert!(
        (1.5..=2.7).contains(&ratio),
        "refinement ratio {:.3} outside first-order window (d1={:.3e}, d2={:.3e})",
        ratio,
        d1,
        d2
    );
}

#[test]
fn dae_start_must_satisfy_algebraic_rows() {
    let dae = transformer_dae();
    let mut x0 = DVec::zeros(dae.n_state());
    x0[dae.n1()] = 1.0;
    let ctl = StepControl::new(0.01, 0.1, BdfOrder::One);
    let err = integrate_dae(&dae, &x0, &ctl, port_drive(dae.m())).unwrap_err();
    match err {
        IntegratorError::InconsistentStart { row, residual, tol } => {
            assert!(row >= dae.n1());
            assert!(residual > tol);
        }
        other => panic!("expected InconsistentStart, got {}", other),
    }
}

#[test]
fn redundant_unknowns_yield_structured_singularity_error() {
    let problem = build_synthetic_3d(&Synthetic3dConfig::default()).unwrap();
    let dae = MqsDae::new(problem).unwrap();
    let x0 = DVec::zeros(dae.n_state());
    let ctl = StepControl::new(1e-3, 2e-3, BdfOrder::One);
    let err = integrate_dae(&dae, &x0, &ctl, port_drive(dae.m())).unwrap_err();
    match &err {
        IntegratorError::IterationMatrixSingular { t, detail } => {
            assert!(*t > 0.0);
            assert!(detail.contains("regularization"));
        }
        other => panic!("expected IterationMatrixSingular, got {}", other),
    }
}

#[test]
fn trajectory_csv_round_trips_and_rewrites_identically() {
    let ctl = StepControl::new(0.1, 1.0, BdfOrder::Two);
    let traj = integrate_ode(&CubicForced, &DVec::zeros(1), &ctl, cubic_forcing).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("traj.csv");
    let p2 = dir.path().join("traj_rewrite.csv");
    traj.write_csv(&p1).unwrap();
    let back = Trajectory::read_csv(&p1).unwrap();
    assert_eq!(back, traj);
    back.write_csv(&p2).unwrap();
    let b1 = std::fs::read(&p1).unwrap();
    let b2 = std::fs::read(&p2).unwrap();
    assert_eq!(b1, b2, "rewriting a parsed trajectory must be byte-identical");
}

#[test]
fn csv_rejects_malformed_headers_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "t,x_1,q_1\n0.0,1.0,2.0\n").unwrap();
    assert!(matches!(
        Trajectory::read_csv(&p),
        Err(IntegratorError::Format { line: 1, .. })
    ));
    std::fs::write(&p, "t,x_1,u_1,y_1\n0.0,1.0\n").unwrap();
    assert!(matches!(
        Trajectory::read_csv(&p),
        Err(IntegratorError::Format { line: 2, .. })
    ));
    std::fs::write(&p, "t,x_1\n0.0,nope\n").unwrap();
    assert!(matches!(
        Trajectory::read_csv(&p),
        Err(IntegratorError::Format { line: 2, .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip_is_exact_for_arbitrary_samples(
        n in 1usize..4,
        m in 0usize..3,
        p in 0usize..3,
        rows in 1usize..5,
        seed in prop::array::uniform4(-1e18f64..1e18),
    ) {
        let mut traj = Trajectory::with_capacity(rows);
        let mut v = seed[0];
        let mut next = || {
            // deterministic scramble so every cell differs
            v = (v * 1.000000013 + seed[1] * 0.37 + seed[2]).sin() * seed[3].abs().max(1.0);
            v
        };
        for k in 0..rows {
            traj.push(
                k as f64 * 0.125,
                DVec::from_fn(n, |_, _| next()),
                DVec::from_fn(m, |_, _| next()),
                DVec::from_fn(p, |_, _| next()),
            );
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        traj.write_csv(&path).unwrap();
        let back = Trajectory::read_csv(&path).unwrap();
        prop_assert_eq!(back, traj);
    }
}
