mod common;

use approx::assert_abs_diff_eq;
use common::*;
use proptest::prelude::*;
use rand::Rng;
use semiprog::channels::apply;
use semiprog::conic::*;
use semiprog::dynamics::{semigroup_choi, unitary_choi, Choi, Lindbladian};
use semiprog::matcore::*;
use semiprog::programmability::{pauli_program_protocol, port_obstruction_check};
use semiprog::protocols::{coherent_protocol, ProgramStateFamily};
use semiprog::Error;

fn one_by_one(x: f64) -> CMatrix {
    CMatrix::from_element(1, 1, c(x, 0.0))
}

fn trace_map(m: &CMatrix) -> CMatrix {
    CMatrix::from_element(1, 1, trace(m))
}

fn depolarizing_difference() -> Choi {
    let full = Choi::from_map(2, 2, |x| identity(2) * trace(x) * c(0.5, 0.0));
    Choi::identity(2).add(&full.scale(-1.0)).unwrap()
}

/// max over pure inputs ψ on in⊗ref of ‖(Φ ⊗ id)(ψ)‖₁ by random search with
/// local refinement.
fn brute_force_diamond(j: &Choi, seed: u64) -> f64 {
    let d = j.dim_in;
    let mut r = rng(seed);
    let value = |v: &CVector| {
        let psi = projector(&(v / c(v.norm(), 0.0)));
        // (Φ ⊗ id)(ψ) with the input factor first
        let mut out = zeros(j.dim_out * d, j.dim_out * d);
        for a in 0..d {
            for b in 0..d {
                let block = CMatrix::from_fn(d, d, |i, k| psi[(i * d + a, k * d + b)]);
                out += kron(&apply(j, &block).unwrap(), &ketbra(d, a, b));
            }
        }
        trace_norm(&out)
    };
    let rand_vec = |r: &mut rand_chacha::ChaCha8Rng| {
        CVector::from_fn(d * d, |_, _| {
            c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))
        })
    };
    let mut best_v = rand_vec(&mut r);
    let mut best = value(&best_v);
    for _ in 0..500 {
        let v = rand_vec(&mut r);
        let f = value(&v);
        if f > best {
            best = f;
            best_v = v;
        }
    }
    let mut step = 0.3;
    while step > 1e-7 {
        let mut improved = false;
        for _ in 0..40 {
            let v = &best_v + rand_vec(&mut r) * c(step, 0.0);
            let f = value(&v);
            if f > best {
                best = f;
                best_v = v;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

#[test]
fn hermitian_coordinates_are_orthonormal() {
    let mut r = rng(91);
    let a = random_hermitian(&mut r, 4);
    let b = random_hermitian(&mut r, 4);
    let (xa, xb) = (herm_to_coords(&a), herm_to_coords(&b));
    assert!(dist(&coords_to_herm(&xa, 4), &a) < 1e-14);
    let dot: f64 = xa.iter().zip(&xb).map(|(p, q)| p * q).sum();
    assert_abs_diff_eq!(dot, (&a * &b).trace().re, epsilon = 1e-12);
}

#[test]
fn trivial_trace_program() {
    let mut p = SdpProblem::new();
    let x = p.add_psd("X", 2);
    p.objective_matrix(x, &identity(2)).unwrap();
    p.add_equality(vec![Term::map(x, trace_map)], &one_by_one(1.0))
        .unwrap();
    let sol = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert_abs_diff_eq!(sol.objective_value, 1.0, epsilon = 1e-6);
    assert!(sol.primal_residual <= 1e-7 && sol.dual_residual <= 1e-7);
    assert!(min_eigenvalue(&sol.matrix(x)) >= -1e-9);
}

#[test]
fn largest_eigenvalue_program() {
    let mut r = rng(92);
    for d in [2, 3, 5] {
        let a = random_hermitian(&mut r, d);
        let mut p = SdpProblem::new();
        let s = p.add_psd("S", d);
        let lam = p.add_free("lambda");
        p.objective_scalar(lam, 1.0).unwrap();
        // S = λI − A
        p.add_equality(
            vec![Term::scaled(s, 1.0), Term::Scalar(lam, -identity(d))],
            &(-&a),
        )
        .unwrap();
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        let oracle = *eigvalsh(&a).last().unwrap();
        assert_abs_diff_eq!(sol.scalar(lam), oracle, epsilon = 1e-5);
    }
}

#[test]
fn infeasible_programs_are_certified() {
    let mut p = SdpProblem::new();
    let x = p.add_psd("X", 2);
    p.objective_matrix(x, &identity(2)).unwrap();
    p.add_equality(vec![Term::map(x, trace_map)], &one_by_one(-1.0))
        .unwrap();
    let sol = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Infeasible);
    assert_eq!(sol.status.as_str(), "infeasible");

    // inconsistent affine system
    let mut q = SdpProblem::new();
    let s = q.add_free("s");
    q.objective_scalar(s, 1.0).unwrap();
    q.add_equality(vec![Term::Scalar(s, identity(1))], &one_by_one(1.0))
        .unwrap();
    q.add_equality(vec![Term::Scalar(s, identity(1))], &one_by_one(2.0))
        .unwrap();
    assert_eq!(
        solve(&q, &SolverSettings::default()).unwrap().status,
        SdpStatus::Infeasible
    );

    // empty row with nonzero right-hand side
    let mut e = SdpProblem::new();
    let s = e.add_nonneg("s");
    e.add_equality(vec![Term::Scalar(s, zeros(1, 1))], &one_by_one(1.0))
        .unwrap();
    assert_eq!(
        solve(&e, &SolverSettings::default()).unwrap().status,
        SdpStatus::Infeasible
    );
}

#[test]
fn iteration_limit_is_reported() {
    let mut r = rng(93);
    let a = random_hermitian(&mut r, 4);
    let mut p = SdpProblem::new();
    let s = p.add_psd("S", 4);
    let lam = p.add_free("lambda");
    p.objective_scalar(lam, 1.0).unwrap();
    p.add_equality(
        vec![Term::scaled(s, 1.0), Term::Scalar(lam, -identity(4))],
        &(-&a),
    )
    .unwrap();
    let settings = SolverSettings {
        max_iter: 3,
        ..SolverSettings::default()
    };
    let sol = solve(&p, &settings).unwrap();
    assert_eq!(sol.status, SdpStatus::MaxIter);
    assert_eq!(sol.iterations, 3);
}

#[test]
fn builder_validation() {
    let mut p = SdpProblem::new();
    let x = p.add_psd("X", 2);
    let s = p.add_free("s");
    assert!(matches!(p.objective_scalar(x, 1.0), Err(Error::Invalid(_))));
    assert!(matches!(
        p.objective_matrix(s, &identity(1)),
        Err(Error::Invalid(_))
    ));
    assert!(matches!(
        p.objective_matrix(x, &identity(3)),
        Err(Error::Dimension(_))
    ));
    let nonherm = real_matrix(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    assert!(matches!(
        p.add_equality(vec![Term::scaled(x, 1.0)], &nonherm),
        Err(Error::Invalid(_))
    ));
    assert!(matches!(
        p.add_equality(vec![Term::scaled(x, 1.0)], &identity(3)),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        p.add_equality(
            vec![Term::map(x, move |m: &CMatrix| &nonherm * m)],
            &identity(2)
        ),
        Err(Error::Invalid(_))
    ));
    assert!(matches!(
        solve(&SdpProblem::new(), &SolverSettings::default()),
        Err(Error::Solver(_))
    ));
    assert_eq!(p.name(x), "X");
    assert_eq!(p.num_variables(), 5);
}

#[test]
fn diamond_norm_of_channels_is_one() {
    assert_abs_diff_eq!(
        diamond_norm(&Choi::identity(2)).unwrap(),
        1.0,
        epsilon = 1e-6
    );
    let mut r = rng(94);
    let u = random_unitary(&mut r, 2);
    assert_abs_diff_eq!(
        diamond_norm(&unitary_choi(&u)).unwrap(),
        1.0,
        epsilon = 1e-6
    );
    let ch = random_choi(&mut r, 2, 2);
    assert_abs_diff_eq!(diamond_norm(&ch).unwrap(), 1.0, epsilon = 1e-6);
    assert_eq!(
        diamond_norm(&Choi::new(2, 2, zeros(4, 4)).unwrap()).unwrap(),
        0.0
    );
}

#[test]
fn diamond_norm_of_depolarizing_difference() {
    let diff = depolarizing_difference();
    let sdp = diamond_norm(&diff).unwrap();
    let oracle = brute_force_diamond(&diff, 95);
    assert_abs_diff_eq!(oracle, 1.5, epsilon = 1e-6);
    assert_abs_diff_eq!(0.5 * sdp, 0.75, epsilon = 1e-6);
}

#[test]
fn diamond_norm_matches_brute_force_on_random_differences() {
    let mut r = rng(96);
    for k in 0..3 {
        let a = random_choi(&mut r, 2, 2);
        let b = random_choi(&mut r, 2, 2);
        let diff = a.add(&b.scale(-1.0)).unwrap();
        let sdp = diamond_norm(&diff).unwrap();
        let oracle = brute_force_diamond(&diff, 100 + k);
        assert_abs_diff_eq!(sdp, oracle, epsilon = 1e-5);
    }
}

#[test]
fn diamond_norm_of_transpose_is_two() {
    let t = Choi::from_map(2, 2, |x| x.transpose());
    assert_abs_diff_eq!(diamond_norm(&t).unwrap(), 2.0, epsilon = 1e-6);
    let nonherm = Choi::new(1, 2, real_matrix(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
    assert!(matches!(diamond_norm(&nonherm), Err(Error::Invalid(_))));
}

#[test]
fn nu_is_zero_on_channels() {
    let mut r = rng(97);
    for _ in 0..3 {
        let ch = random_choi(&mut r, 2, 2);
        assert_abs_diff_eq!(implementability_nu(&ch).unwrap(), 0.0, epsilon = 1e-6);
    }
}

#[test]
fn nu_of_transpose_map() {
    // explicit split ρᵀ = 3/2·(I trρ + ρᵀ)/3 − 1/2·(I trρ − ρᵀ) has p₁+p₂ = 2,
    // and the diamond norm 2 bounds the cost from below
    let t = Choi::from_map(2, 2, |x| x.transpose());
    let e1 = Choi::from_map(2, 2, |x| {
        (identity(2) * trace(x) + x.transpose()) / c(3.0, 0.0)
    });
    let e2 = Choi::from_map(2, 2, |x| identity(2) * trace(x) - x.transpose());
    assert!(semiprog::dynamics::is_cptp(&e1, 1e-12) && semiprog::dynamics::is_cptp(&e2, 1e-12));
    let split = e1.scale(1.5).add(&e2.scale(-0.5)).unwrap();
    assert!(dist(&split.matrix, &t.matrix) < 1e-14);
    assert_abs_diff_eq!(implementability_nu(&t).unwrap(), 1.0, epsilon = 1e-6);
}

#[test]
fn nu_of_swap_processor() {
    let (processor, _) = coherent_protocol(&swap_operator(2), 1e-9).unwrap();
    let nu = implementability_nu(&processor.choi).unwrap();
    assert_abs_diff_eq!(nu, 1.0, epsilon = 1e-3);
    let gen = Choi::of_generator(&Lindbladian::emission(1.0).unwrap());
    assert!(matches!(implementability_nu(&gen), Err(Error::NotHptp(_))));
}

#[test]
fn time_grid_includes_endpoints() {
    let g = time_grid(10.0, 21).unwrap();
    assert_eq!(g.len(), 21);
    assert_eq!(g[0], 0.0);
    assert_eq!(g[20], 10.0);
    assert!(time_grid(0.0, 5).is_err());
    assert!(time_grid(1.0, 1).is_err());
}

#[test]
fn cost_of_zero_generator() {
    let l = Lindbladian::zero(2);
    let fam = ProgramStateFamily::constant(max_entangled(2), "choi-of-identity");
    let res = programming_cost(&l, &fam, 10.0, 0.0, 20).unwrap();
    assert_eq!(res.status, CostStatus::Programmable);
    assert_abs_diff_eq!(res.gamma, 0.0, epsilon = 1e-6);
    let port = port_based_cost(&l, 10.0, 0.0, 20).unwrap();
    assert_abs_diff_eq!(port.gamma, 0.0, epsilon = 1e-6);

    // the optimal processor is itself a channel
    let j = res.processor.unwrap();
    let proc_choi = Choi::new(8, 2, hermitize(&j)).unwrap();
    assert_abs_diff_eq!(
        implementability_nu(&proc_choi).unwrap(),
        0.0,
        epsilon = 1e-5
    );
}

#[test]
fn cost_of_pauli_dephasing_with_diagonal_program() {
    let l = Lindbladian::dephasing(0.5).unwrap();
    let (_, fam) = pauli_program_protocol(&l).unwrap();
    let res = programming_cost(&l, &fam, 5.0, 0.0, 20).unwrap();
    assert!(res.is_programmable());
    assert_abs_diff_eq!(res.gamma, 0.0, epsilon = 1e-5);
}

#[test]
fn cost_of_emission_is_positive() {
    let l = Lindbladian::emission(1.0).unwrap();
    assert!(port_obstruction_check(&l, 1e-9).is_obstructed());
    let res = port_based_cost(&l, 10.0, 0.0, 20).unwrap();
    assert_eq!(res.status, CostStatus::Programmable);
    assert!(res.gamma > 1e-3);
}

#[test]
fn initial_cost_is_zero() {
    let l = Lindbladian::emission(1.0).unwrap();
    let fam = ProgramStateFamily::port_based(&l);
    let res = programming_cost_on_grid(&l, &fam, &[0.0], 0.0, &SolverSettings::default()).unwrap();
    assert_abs_diff_eq!(res.gamma, 0.0, epsilon = 1e-6);
}

#[test]
fn cost_reports_infeasibility() {
    let l = Lindbladian::emission(1.0).unwrap();
    let fam = ProgramStateFamily::constant(scaled_identity(2, 0.5), "mixed");
    let res = programming_cost(&l, &fam, 10.0, 0.0, 20).unwrap();
    assert_eq!(res.status, CostStatus::NotProgrammable);
    assert!(res.gamma.is_infinite());
    assert!(matches!(
        programming_cost(&l, &fam, 10.0, -0.1, 20),
        Err(Error::Invalid(_))
    ));
    assert!(matches!(
        programming_cost_on_grid(&l, &fam, &[], 0.0, &SolverSettings::default()),
        Err(Error::Invalid(_))
    ));
}

#[test]
fn cost_is_monotone_in_horizon() {
    let l = Lindbladian::emission(1.0).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for t_max in [1.0, 3.0, 10.0] {
        let g = port_based_cost(&l, t_max, 0.0, 20).unwrap().gamma;
        assert!(g >= prev - 1e-5, "T={t_max}: {g} < {prev}");
        prev = g;
    }
}

#[test]
fn cost_is_monotone_in_epsilon_and_nonnegative() {
    let l = Lindbladian::emission(1.0).unwrap();
    let mut prev = f64::INFINITY;
    for eps in [0.0, 0.05, 0.1, 0.15, 0.2] {
        let res = port_based_cost(&l, 10.0, eps, 12).unwrap();
        assert!(res.is_programmable());
        assert!(res.gamma >= -1e-6);
        assert!(res.gamma <= prev + 1e-5, "ε={eps}: {} > {prev}", res.gamma);
        prev = res.gamma;
    }
}

#[test]
fn cost_is_invariant_under_program_unitaries() {
    let l = Lindbladian::dephasing(0.5).unwrap();
    let (_, fam) = pauli_program_protocol(&l).unwrap();
    let u = random_unitary(&mut rng(98), 4);
    let a = programming_cost(&l, &fam, 3.0, 0.0, 10).unwrap().gamma;
    let b = programming_cost(&l, &fam.rotated(&u), 3.0, 0.0, 10)
        .unwrap()
        .gamma;
    assert!((a - b).abs() <= 2.0 * SolverSettings::default().tol * 10.0);
}

#[test]
fn grid_refinement_is_stable() {
    let l = Lindbladian::emission(1.0).unwrap();
    let (coarse, fine) =
        grid_refinement_check(&l, &ProgramStateFamily::port_based(&l), 10.0, 0.0, 20).unwrap();
    assert!((coarse.gamma - fine.gamma).abs() < 1e-4);
}

#[test]
fn nu_bounds_diamond_norm() {
    // 2^ν is a two-channel implementation cost and dominates the diamond norm
    let (processor, _) = coherent_protocol(&pauli(3), 1e-9).unwrap();
    let nu = implementability_nu(&processor.choi).unwrap();
    let dn = diamond_norm(&processor.choi).unwrap();
    assert!(dn <= 2f64.powf(nu) + 1e-5);
    assert_abs_diff_eq!(dn, 2f64.powf(nu), epsilon = 1e-4);
    let _ = semigroup_choi(&Lindbladian::zero(2), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn prop_lambda_max(seed in any::<u64>(), d in 2usize..5) {
        let mut r = rng(seed);
        let a = random_hermitian(&mut r, d);
        let mut p = SdpProblem::new();
        let s = p.add_psd("S", d);
        let lam = p.add_free("lambda");
        p.objective_scalar(lam, 1.0).unwrap();
        p.add_equality(vec![Term::scaled(s, 1.0), Term::Scalar(lam, -identity(d))], &(-&a)).unwrap();
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        prop_assert_eq!(sol.status, SdpStatus::Optimal);
        prop_assert!((sol.scalar(lam) - eigvalsh(&a)[d - 1]).abs() < 1e-5);
    }

    #[test]
    fn prop_diamond_norm_of_channel_is_one(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ch = random_choi(&mut r, 2, 2);
        prop_assert!((diamond_norm(&ch).unwrap() - 1.0).abs() < 1e-5);
    }
}
