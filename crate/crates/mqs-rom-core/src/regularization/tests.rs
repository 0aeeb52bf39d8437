use proptest::prelude::*;

use super::*;
use crate::integrator::{integrate_dae, integrate_ode, BdfOrder, StepControl};
use crate::matcore::{DMat, DVec, SparseMatrix};
use crate::problem::{
    build_synthetic_3d, build_transformer_2d, FemProblem, FluxMap, ProblemDim,
    ReluctivityCurve, Synthetic3dConfig, Transformer2dConfig,
};

fn reg_2d() -> RegularizedSystem {
    let problem = build_transformer_2d(&Transformer2dConfig::default()).unwrap();
    regularize(MqsDae::new(problem).unwrap()).unwrap()
}

fn reg_3d() -> RegularizedSystem {
    let problem = build_synthetic_3d(&Synthetic3dConfig::default()).unwrap();
    regularize(MqsDae::new(problem).unwrap()).unwrap()
}

/// Smallest valid problem with a nontrivial ker(C2): two conducting nodes on
/// their own unit groups, one retained air unknown shared by two air groups,
/// and one fully silent unknown (an empty cd column). One port couples into
/// the air unknown only. Every reduced quantity has a short closed form.
fn toy_problem(nu_c: f64, nu_air: f64, r0: f64) -> FemProblem {
    let cd = SparseMatrix::from_triplets(
        4,
        4,
        &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 2, 1.0)],
    )
    .unwrap();
    let upsilon = SparseMatrix::from_triplets(4, 1, &[(2, 0, 1.0)]).unwrap();
    let x = cd.tr_mul_dense(&upsilon.to_dense()).unwrap();
    FemProblem {
        dimension: ProblemDim::TwoD,
        n1: 2,
        n2: 2,
        m: 1,
        m11: SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap(),
        cd,
        upsilon,
        x,
        r: DMat::from_element(1, 1, r0),
        curve: ReluctivityCurve::constant(nu_c, nu_air, 10.0).unwrap(),
        flux: FluxMap {
            group_dim: 1,
            weights: vec![1.0; 4],
            conducting: vec![true, true, false, false],
        },
    }
}

fn reg_toy(nu_c: f64, nu_air: f64, r0: f64) -> RegularizedSystem {
    let problem = toy_problem(nu_c, nu_air, r0);
    problem.validate().unwrap();
    regularize(MqsDae::new(problem).unwrap()).unwrap()
}

fn rel_err(got: &DMat, want: &DMat) -> f64 {
    (got - want).norm() / want.norm().max(f64::MIN_POSITIVE)
}

fn svd_rank(m: &DMat) -> usize {
    let svd = matcore::thin_svd(m).unwrap();
    if svd.sigma.len() == 0 || svd.sigma[0] == 0.0 {
        return 0;
    }
    svd.sigma.iter().filter(|&&s| s > RANK_TOL * svd.sigma[0]).count()
}

#[test]
fn mass_matrix_matches_explicit_block_formula() {
    let reg = reg_2d();
    let p = &reg.dae().problem;
    let (n1, q) = (reg.n1(), reg.q());
    let x1 = p.x1();
    let yx2 = reg.yhat().transpose() * p.x2();
    let rinv = reg.r_inv();

    let mut want = DMat::zeros(reg.n_r(), reg.n_r());
    want.view_mut((0, 0), (n1, n1))
        .copy_from(&(p.m11.to_dense() + &x1 * rinv * x1.transpose()));
    want.view_mut((0, n1), (n1, q))
        .copy_from(&(&x1 * rinv * yx2.transpose()));
    want.view_mut((n1, 0), (q, n1))
        .copy_from(&(&yx2 * rinv * x1.transpose()));
    want.view_mut((n1, n1), (q, q))
        .copy_from(&(&yx2 * rinv * yx2.transpose()));
    assert!(rel_err(reg.e_r(), &want) < 1e-13);

    // The factored route must agree with its own factors.
    let refactored = reg.f_sigma() * reg.m_sigma_r() * reg.f_sigma().transpose();
    assert!(rel_err(reg.e_r(), &refactored) < 1e-13);
}

#[test]
fn stiffness_matches_block_assembly_at_sampled_states() {
    let reg = reg_2d();
    let dae = reg.dae().clone();
    let p = &dae.problem;
    let (n1, n2, q) = (reg.n1(), p.n2, reg.q());
    for x in reg.sample_states(3, 7) {
        let a = reg.lift_potential(&x);
        let k = dae.assemble_k(&a).unwrap().to_dense();
        let k11 = k.view((0, 0), (n1, n1)).into_owned();
        let k12 = k.view((0, n1), (n1, n2)).into_owned();
        let k22 = k.view((n1, n1), (n2, n2)).into_owned();
        let k12h = &k12 * reg.yhat();
        let k22h = reg.yhat().transpose() * &k22 * reg.yhat();

        let mut want = DMat::zeros(reg.n_r(), reg.n_r());
        want.view_mut((0, 0), (n1, n1)).copy_from(&-&k11);
        want.view_mut((0, n1), (n1, q)).copy_from(&-&k12h);
        want.view_mut((n1, 0), (q, n1)).copy_from(&-k12h.transpose());
        want.view_mut((n1, n1), (q, q)).copy_from(&-&k22h);
        assert!(rel_err(&reg.a_r(&x).unwrap(), &want) < 1e-13);
    }
}

#[test]
fn rhs_splits_into_frozen_part_and_saturation_force() {
    let reg = reg_2d();
    let u = DVec::zeros(reg.m());
    for x in reg.sample_states(3, 11) {
        let direct = reg.a_r(&x).unwrap() * &x;
        let split = reg.rhs(&x, &u).unwrap();
        let scale = direct.norm().max(1.0);
        assert!(
            (&direct - &split).norm() / scale < 1e-12,
            "A_r(x)x and the frozen/saturation split disagree"
        );
    }
}

#[test]
fn iteration_matrix_is_mass_plus_constant_coupling() {
    let reg = reg_2d();
    let (n1, q) = (reg.n1(), reg.q());
    let kf = reg.dae().k_frozen().to_dense();
    let n2 = reg.dae().problem.n2;
    let k12h = kf.view((0, n1), (n1, n2)).into_owned() * reg.yhat();
    let k22h =
        reg.yhat().transpose() * kf.view((n1, n1), (n2, n2)).into_owned() * reg.yhat();
    let yy = reg.y_ker() * reg.y_ker().transpose();

    let mut want = reg.e_r().clone();
    let mut top = want.view_mut((0, n1), (n1, q));
    top += &(&k12h * &yy);
    let mut bottom = want.view_mut((n1, n1), (q, q));
    bottom += &(&k22h * &yy);

    for x in reg.sample_states(2, 13) {
        assert!(rel_err(&reg.index_matrix(&x).unwrap(), &want) < 1e-13);
    }

    let cert = reg.check_index_one(42).unwrap();
    assert!(cert.passed);
    assert!(cert.sigma_min > cert.threshold);
    assert!(cert.state_dependence <= INDEPENDENCE_TOL);
}

#[test]
fn output_matrix_agrees_with_port_elimination_route() {
    for reg in [reg_2d(), reg_3d()] {
        let (n1, q) = (reg.n1(), reg.q());
        let kf = reg.dae().k_frozen().to_dense();
        let n2 = reg.dae().problem.n2;
        let k12h = kf.view((0, n1), (n1, n2)).into_owned() * reg.yhat();
        let k22h =
            reg.yhat().transpose() * kf.view((n1, n1), (n2, n2)).into_owned() * reg.yhat();
        let mut row2 = DMat::zeros(q, reg.n_r());
        row2.view_mut((0, 0), (q, n1)).copy_from(&k12h.transpose());
        row2.view_mut((0, n1), (q, q)).copy_from(&k22h);
        let proj = DMat::identity(reg.n_r(), reg.n_r()) - reg.pi_inf();
        let want = reg.z_hat().transpose() * row2 * proj;
        assert!(rel_err(reg.output_matrix(), &want) < 1e-9);
    }
}

#[test]
fn pseudoinverse_satisfies_reflexive_identities() {
    for reg in [reg_2d(), reg_3d()] {
        let e = reg.e_r();
        let ep = reg.e_pinv();
        let pi = reg.pi_inf();
        let eye = DMat::identity(reg.n_r(), reg.n_r());

        assert!(rel_err(&(e * ep * e), e) < 1e-9);
        assert!(rel_err(&(ep * e * ep), ep) < 1e-9);
        assert!((ep - ep.transpose()).norm() / ep.norm() < 1e-12);
        assert!(rel_err(&(ep * e), &(&eye - pi)) < 1e-8);
        assert!(rel_err(&(pi * pi), pi) < 1e-8);

        // E E^- A(x) = A(x) E^- E: both sides drop the same deflated part.
        let x = &reg.sample_states(1, 5)[0];
        let a = reg.a_r(x).unwrap();
        let left = e * ep * &a;
        let right = &a * ep * e;
        assert!(rel_err(&left, &right) < 1e-8);
    }
}

#[test]
fn winding_coupling_survives_projection_exactly() {
    for reg in [reg_2d(), reg_3d()] {
        let grid = reg.b_r().transpose() * reg.e_pinv() * reg.b_r();
        assert!(rel_err(&grid, reg.r_inv()) < 1e-10);
    }
}

#[test]
fn two_dimensional_problem_reduces_by_identity_embedding() {
    let reg = reg_2d();
    let p = &reg.dae().problem;
    assert_eq!(reg.k2(), 0);
    assert_eq!(reg.q(), p.n2);
    assert_eq!(reg.n_r(), p.n1 + p.n2);
    // Trivial kernel: the embedding is the identity, not a rotation.
    assert_eq!(reg.yhat(), &DMat::identity(p.n2, p.n2));

    let cf = reg.condensed_form();
    assert_eq!(cf.n_0, 0);
    assert_eq!(cf.n_inf, reg.q() - reg.m());
    assert_eq!(cf.n_s, p.n1 + reg.m());
    assert_eq!(cf.n_s + cf.n_0 + cf.n_inf, reg.n_r());

    reg.verify_kernel_structure(29).unwrap();
}

#[test]
fn three_dimensional_dimensions_follow_rank_counts() {
    let reg = reg_3d();
    let p = &reg.dae().problem;
    assert_eq!(reg.k2(), 1);
    assert_eq!(reg.q(), p.n2 - 1);
    assert_eq!(reg.n_r(), p.n1 + p.n2 - 1);

    // Deflation counts must match the independent SVD ranks of the factors:
    // rank E_r = rank F_sigma^T and rank A_r = rank F_nu^T.
    let cf = reg.condensed_form();
    assert_eq!(cf.n_inf, reg.n_r() - svd_rank(reg.f_sigma()));
    assert_eq!(cf.n_0, reg.n_r() - svd_rank(reg.f_nu()));
    assert_eq!(cf.n_s + cf.n_0 + cf.n_inf, reg.n_r());
    assert!(cf.n_0 > 0, "hex kernel should deflate stiffness rank");
    assert!(cf.n_inf > 0);

    reg.verify_kernel_structure(31).unwrap();
    let cert = reg.check_index_one(17).unwrap();
    assert!(cert.passed);
}

#[test]
fn projected_three_dimensional_system_timesteps_cleanly() {
    // The unprojected hex problem makes the BDF iteration matrix singular;
    // after projection the same problem integrates without incident.
    let reg = reg_3d();
    let ctl = StepControl::new(5e-4, 1e-2, BdfOrder::Two);
    let x0 = DVec::zeros(reg.n_r());
    let traj = integrate_ode(&reg, &x0, &ctl, |t| {
        DVec::from_column_slice(&[(2.0 * std::f64::consts::PI * t).sin(), 0.0])
    })
    .unwrap();
    assert_eq!(traj.len(), 21);
    assert!(traj.output_matrix().iter().all(|v| v.is_finite()));
}

#[test]
fn toy_system_matches_hand_computed_reduction() {
    let (nu_c, nu_air, r0) = (2.0, 3.0, 1.0);
    let reg = reg_toy(nu_c, nu_air, r0);
    assert_eq!(reg.k2(), 1);
    assert_eq!(reg.q(), 1);
    assert_eq!(reg.n_r(), 3);

    // The image basis of C2^T is the first coordinate axis up to sign.
    let yhat = reg.yhat();
    assert_eq!(yhat.ncols(), 1);
    assert!((yhat[(0, 0)].abs() - 1.0).abs() < 1e-14);
    assert!(yhat[(1, 0)].abs() < 1e-14);

    let cf = reg.condensed_form();
    assert_eq!((cf.n_s, cf.n_0, cf.n_inf), (3, 0, 0));

    let e_want = DMat::from_diagonal(&DVec::from_column_slice(&[1.0, 1.0, 1.0 / r0]));
    assert!(rel_err(reg.e_r(), &e_want) < 1e-13);

    // Frozen stiffness: conducting nu on the two head unknowns, both air
    // groups stacked on the single retained air unknown.
    let x0 = DVec::zeros(3);
    let a_want =
        DMat::from_diagonal(&DVec::from_column_slice(&[-nu_c, -nu_c, -2.0 * nu_air]));
    assert!(rel_err(&reg.a_r(&x0).unwrap(), &a_want) < 1e-13);

    let b = reg.b_r();
    assert!(b[(0, 0)].abs() < 1e-14 && b[(1, 0)].abs() < 1e-14);
    assert!((b[(2, 0)].abs() - 1.0 / r0).abs() < 1e-13);

    let c = reg.output_matrix();
    assert!(c[(0, 0)].abs() < 1e-12 && c[(0, 1)].abs() < 1e-12);
    assert!((c[(0, 2)].abs() - 2.0 * nu_air).abs() < 1e-11);

    // Sign-invariant port quantities: C_r E_r^{-1} B_r = 2 nu_air (the r0
    // factors cancel) and the DC gain C_r (-A_r)^{-1} B_r = 1/r0 (Ohm's law).
    let gain = (c * reg.e_pinv() * b)[(0, 0)];
    assert!((gain - 2.0 * nu_air).abs() < 1e-10);
    let dc = (c * (-reg.a_r(&x0).unwrap()).try_inverse().unwrap() * b)[(0, 0)];
    assert!((dc - 1.0 / r0).abs() < 1e-10);

    reg.verify_kernel_structure(3).unwrap();
    let cert = reg.check_index_one(9).unwrap();
    assert!(cert.passed);
}

#[test]
fn toy_outputs_follow_closed_form_exponential() {
    let (nu_c, nu_air, r0) = (2.0, 3.0, 1.0);
    let reg = reg_toy(nu_c, nu_air, r0);
    let ode = reg.to_ode().unwrap();
    let rate = 2.0 * nu_air * r0;
    let v0 = 1.0;

    let ctl = StepControl::new(1e-3, 0.5, BdfOrder::Two);
    let drive = move |_t: f64| DVec::from_element(1, v0);
    let x0r = DVec::zeros(3);
    let x0o = DVec::zeros(3);
    let tr_reg = integrate_ode(&reg, &x0r, &ctl, drive).unwrap();
    let tr_ode = integrate_ode(&ode, &x0o, &ctl, drive).unwrap();

    let yr = tr_reg.output_matrix();
    let yo = tr_ode.output_matrix();
    for (k, &t) in tr_reg.times.iter().enumerate() {
        let exact = (v0 / r0) * (1.0 - (-rate * t).exp());
        assert!((yr[(0, k)] - exact).abs() < 2e-4, "t={} reg={}", t, yr[(0, k)]);
        assert!((yo[(0, k)] - exact).abs() < 2e-4, "t={} ode={}", t, yo[(0, k)]);
    }
}

#[test]
fn ode_blocks_follow_schur_elimination_of_free_directions() {
    let reg = reg_2d();
    let ode = reg.to_ode().unwrap();
    let (n1, m) = (reg.n1(), reg.m());

    // Z columns: orthonormal, orthogonal to the kernel directions.
    let z = ode.z();
    assert!((z.transpose() * z - DMat::identity(m, m)).norm() < 1e-12);
    assert!((z.transpose() * reg.y_ker()).norm() < 1e-12);

    // The ODE output matrix must be the projected output composed with the
    // linear recovery of the eliminated directions.
    let want_c = reg.output_matrix() * ode.recovery();
    assert!(rel_err(ode.c_ode(), &want_c) < 1e-9);

    // Mass: congruence of E_r with [I 0; 0 Z], SPD.
    let mut tz = DMat::zeros(reg.n_r(), n1 + m);
    tz.view_mut((0, 0), (n1, n1)).fill_with_identity();
    tz.view_mut((n1, n1), (reg.q(), m)).copy_from(z);
    let want_e = tz.transpose() * reg.e_r() * &tz;
    assert!(rel_err(ode.e_ode(), &want_e) < 1e-12);
    let eig = matcore::sym_eig_extreme(ode.e_ode()).unwrap();
    assert!(eig.lambda_min > 0.0);

    // Stiffness at sampled states: pull the full A_r through the recovery and
    // project; the Schur form must reproduce it on the retained coordinates.
    for x in reg.sample_states(2, 23) {
        let x_ode = ode.project_regular(&x);
        let x_manifold = ode.recover_regular(&x_ode);
        let a_full = reg.a_r(&x_manifold).unwrap();
        let want_a = tz.transpose() * &a_full * ode.recovery();
        assert!(rel_err(&ode.a_ode(&x_ode).unwrap(), &want_a) < 1e-11);
    }
}

#[test]
fn projected_and_schur_trajectories_agree_with_full_system() {
    let problem = build_transformer_2d(&Transformer2dConfig::default()).unwrap();
    let dae = MqsDae::new(problem).unwrap();
    let reg = regularize(dae.clone()).unwrap();
    let ode = reg.to_ode().unwrap();

    let drive = |t: f64| {
        DVec::from_column_slice(&[(2.0 * std::f64::consts::PI * t).sin(), 0.0])
    };
    let ctl = StepControl::new(1.25e-3, 0.05, BdfOrder::Two);

    let tr_full = integrate_dae(&dae, &DVec::zeros(dae.n_state()), &ctl, drive).unwrap();
    let tr_reg = integrate_ode(&reg, &DVec::zeros(reg.n_r()), &ctl, drive).unwrap();
    let tr_ode = integrate_ode(&ode, &DVec::zeros(ode.n_ode()), &ctl, drive).unwrap();

    let yf = tr_full.output_matrix();
    let yr = tr_reg.output_matrix();
    let yo = tr_ode.output_matrix();
    let scale = yf.amax().max(f64::MIN_POSITIVE);
    assert!((&yr - &yf).amax() / scale < 1e-7, "projected vs full outputs");
    assert!((&yo - &yr).amax() / scale < 1e-7, "schur vs projected outputs");

    // Discrete states correspond through the constant recovery map.
    let xr = tr_reg.state_matrix();
    let xo = tr_ode.state_matrix();
    let last = tr_reg.len() - 1;
    let x_rec = ode.recover_regular(&xo.column(last).into_owned());
    let x_reg = xr.column(last).into_owned();
    assert!(
        (&x_rec - &x_reg).norm() / x_reg.norm() < 1e-7,
        "recovered state should land on the projected trajectory"
    );
    let x_proj = ode.project_regular(&x_reg);
    assert!((&x_proj - xo.column(last)).norm() / x_proj.norm() < 1e-7);
}

#[test]
fn saturating_stiffness_is_honestly_state_dependent() {
    let reg = reg_2d();
    let samples = reg.sample_states(3, 19);
    let small = reg.a_r(&samples[0]).unwrap();
    let large = reg.a_r(&samples[2]).unwrap();
    let rel = (&large - &small).norm() / small.norm();
    assert!(
        rel > 1e-6,
        "saturation should move the conducting block, got rel change {:.3e}",
        rel
    );
}

#[test]
fn singular_resistance_is_rejected_with_a_named_matrix() {
    let mut problem = toy_problem(2.0, 3.0, 1.0);
    problem.r[(0, 0)] = 0.0;
    let err = regularize(MqsDae::new(problem).unwrap()).unwrap_err();
    match err {
        RegError::Singular { what, .. } => assert!(what.contains("resistance")),
        other => panic!("expected Singular, got {:?}", other),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn toy_identities_hold_across_material_values(
        nu_c in 0.5f64..400.0,
        nu_air in 0.5f64..400.0,
        r0 in 0.25f64..8.0,
    ) {
        let reg = reg_toy(nu_c, nu_air, r0);
        prop_assert_eq!(reg.n_r(), 3);
        prop_assert_eq!(reg.k2(), 1);

        let e_want = DMat::from_diagonal(&DVec::from_column_slice(&[1.0, 1.0, 1.0 / r0]));
        prop_assert!(rel_err(reg.e_r(), &e_want) < 1e-12);

        let c = reg.output_matrix();
        prop_assert!((c[(0, 2)].abs() - 2.0 * nu_air).abs() < 1e-9 * nu_air.max(1.0));

        let e = reg.e_r();
        let ep = reg.e_pinv();
        prop_assert!(rel_err(&(e * ep * e), e) < 1e-11);
        prop_assert!(rel_err(&(ep * e * ep), ep) < 1e-11);
        let gain = (c * ep * reg.b_r())[(0, 0)];
        prop_assert!((gain - 2.0 * nu_air).abs() < 1e-9 * nu_air.max(1.0));
        let x0 = DVec::zeros(3);
        let dc = (c * (-reg.a_r(&x0).unwrap()).try_inverse().unwrap() * reg.b_r())[(0, 0)];
        prop_assert!((dc - 1.0 / r0).abs() < 1e-9 / r0.min(1.0));
    }
}
