mod common;

use approx::assert_abs_diff_eq;
use common::*;
use proptest::prelude::*;
use semiprog::channels::{self, compose_serial, KrausChannel};
use semiprog::dynamics::*;
use semiprog::matcore::*;
use semiprog::protocols;
use semiprog::Error;

fn ad_kraus(eta: f64) -> KrausChannel {
    let e0 = real_matrix(2, 2, &[1.0, 0.0, 0.0, (1.0 - eta).sqrt()]);
    let e1 = real_matrix(2, 2, &[0.0, eta.sqrt(), 0.0, 0.0]);
    KrausChannel::new(vec![e0, e1]).unwrap()
}

#[test]
fn liouville_matches_master_equation() {
    let mut r = rng(31);
    for d in [2, 3] {
        let l = random_lindbladian(&mut r, d, 3);
        let liou = build_liouville(&l);
        for _ in 0..5 {
            let rho = random_state(&mut r, d);
            assert!(dist(&liou.apply(&rho), &l.apply(&rho)) < 1e-12);
        }
    }
}

#[test]
fn liouville_of_zero_generator_is_zero() {
    assert_eq!(build_liouville(&Lindbladian::zero(3)).matrix, zeros(9, 9));
}

#[test]
fn dephasing_scales_coherences() {
    let g = 0.7;
    let l = Lindbladian::dephasing(g).unwrap();
    let mut r = rng(32);
    let rho = random_state(&mut r, 2);
    let out = build_liouville(&l).apply(&rho);
    assert!(out[(0, 0)].norm() < 1e-15 && out[(1, 1)].norm() < 1e-15);
    assert!((out[(0, 1)] - rho[(0, 1)] * c(-2.0 * g, 0.0)).norm() < 1e-14);
    assert!((out[(1, 0)] - rho[(1, 0)] * c(-2.0 * g, 0.0)).norm() < 1e-14);
}

#[test]
fn emission_action() {
    let g = 1.3;
    let l = Lindbladian::emission(g).unwrap();
    let mut r = rng(33);
    let rho = random_state(&mut r, 2);
    let out = build_liouville(&l).apply(&rho);
    let expect = CMatrix::from_row_slice(
        2,
        2,
        &[
            rho[(1, 1)] * g,
            rho[(0, 1)] * (-0.5 * g),
            rho[(1, 0)] * (-0.5 * g),
            rho[(1, 1)] * (-g),
        ],
    );
    assert!(dist(&out, &expect) < 1e-14);
}

#[test]
fn generator_annihilates_trace() {
    let mut r = rng(34);
    for _ in 0..20 {
        let l = random_lindbladian(&mut r, 3, 2);
        let rho = random_state(&mut r, 3);
        assert!(trace(&l.apply(&rho)).norm() < 1e-10);
    }
}

#[test]
fn construction_errors() {
    let h = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
    assert!(matches!(
        Lindbladian::new(h, vec![]),
        Err(Error::Invalid(_))
    ));
    assert!(matches!(
        Lindbladian::new(zeros(2, 2), vec![(pauli(1), -1.0)]),
        Err(Error::Invalid(_))
    ));
    assert!(matches!(
        Lindbladian::new(zeros(2, 2), vec![(identity(3), 1.0)]),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        Lindbladian::new(zeros(2, 3), vec![]),
        Err(Error::NotSquare { .. })
    ));
    let l = Lindbladian::new(zeros(2, 2), vec![(pauli(1), 0.0), (pauli(3), 0.5)]).unwrap();
    assert_eq!(l.jumps().len(), 1);
}

#[test]
fn json_roundtrip_and_errors() {
    let mut r = rng(35);
    let l = random_lindbladian(&mut r, 2, 2);
    let back = Lindbladian::from_json(&l.to_json()).unwrap();
    assert!(dist(&build_liouville(&back).matrix, &build_liouville(&l).matrix) < 1e-14);

    let text = r#"{"dim": 2, "hamiltonian": [[1,0],[0,0],[0,0],[-1,0]], "jumps": [{"rate": 0.5, "op": [[0,0],[1,0],[0,0],[0,0]]}]}"#;
    let l = Lindbladian::from_json(text).unwrap();
    assert_eq!(l.dim(), 2);
    assert_eq!(l.jumps()[0].rate, 0.5);

    let broken = "{\n  \"dim\": 2,\n  \"hamiltonian\": [[1,0],\n}";
    match Lindbladian::from_json(broken) {
        Err(Error::Parse(msg)) => assert!(msg.contains("line 4"), "{msg}"),
        other => panic!("expected parse error, got {other:?}"),
    }
    let short = r#"{"dim": 2, "hamiltonian": [[1,0],[0,0],[0,0]]}"#;
    match Lindbladian::from_json(short) {
        Err(Error::Dimension(msg)) => assert!(msg.contains("hamiltonian")),
        other => panic!("expected dimension error, got {other:?}"),
    }
    let unknown = r#"{"dim": 1, "hamiltonian": [[0,0]], "extra": 1}"#;
    assert!(matches!(
        Lindbladian::from_json(unknown),
        Err(Error::Parse(_))
    ));
}

#[test]
fn evolve_state_examples() {
    let mut r = rng(36);
    let l = random_lindbladian(&mut r, 3, 2);
    let rho = random_state(&mut r, 3);
    assert!(dist(&evolve_state(&l, &rho, 0.0).unwrap(), &rho) < 1e-14);
    assert!(matches!(
        evolve_state(&l, &rho, -1.0),
        Err(Error::Invalid(_))
    ));

    let lam = 0.5;
    let sd = Lindbladian::swap_dephasing(lam).unwrap();
    let psi0 = ketbra(4, 1, 1);
    for k in 0..=20 {
        let t = 0.5 * k as f64;
        let out = evolve_state(&sd, &psi0, t).unwrap();
        let overlap = (&psi0 * &out).trace().re;
        assert_abs_diff_eq!(
            overlap,
            0.5 * (1.0 + (-lam * t).exp() * (2.0 * t).cos()),
            epsilon = 1e-10
        );
    }

    let em = Lindbladian::emission(1.0).unwrap();
    let out = evolve_state(&em, &ketbra(2, 1, 1), 2f64.ln()).unwrap();
    assert!(dist(&out, &diag(&[0.5, 0.5])) < 1e-12);
}

#[test]
fn semigroup_choi_examples() {
    let mut r = rng(37);
    let l = random_lindbladian(&mut r, 2, 2);
    assert!(
        dist(
            &semigroup_choi(&l, 0.0).unwrap().matrix,
            &(max_entangled(2) * c(2.0, 0.0))
        ) < 1e-12
    );

    let g = 0.8;
    let em = Lindbladian::emission(g).unwrap();
    for t in [0.1, 0.7, 2.0] {
        let eta = 1.0 - (-g * t).exp();
        let j = semigroup_choi(&em, t).unwrap();
        assert!(dist(&j.matrix, &ad_kraus(eta).to_choi().matrix) < 1e-12);
    }

    let dp = Lindbladian::dephasing(g).unwrap();
    for t in [0.1, 0.7, 2.0] {
        let w = (-2.0 * g * t).exp();
        let zc = unitary_choi(&pauli(3));
        let mix = Choi::identity(2)
            .scale((1.0 + w) / 2.0)
            .add(&zc.scale((1.0 - w) / 2.0))
            .unwrap();
        assert!(dist(&semigroup_choi(&dp, t).unwrap().matrix, &mix.matrix) < 1e-12);
    }
}

#[test]
fn semigroup_choi_agrees_with_evolution() {
    let mut r = rng(38);
    let l = random_lindbladian(&mut r, 3, 2);
    let j = semigroup_choi(&l, 0.9).unwrap();
    assert!(is_cptp(&j, 1e-9));
    for _ in 0..5 {
        let rho = random_state(&mut r, 3);
        assert!(
            dist(
                &channels::apply(&j, &rho).unwrap(),
                &evolve_state(&l, &rho, 0.9).unwrap()
            ) < 1e-10
        );
    }
}

#[test]
fn choi_liouville_roundtrip() {
    let id = Choi::from_liouville(&identity(9), 3, 3).unwrap();
    assert!(dist(&id.matrix, &(max_entangled(3) * c(3.0, 0.0))) < 1e-14);

    let mut r = rng(39);
    for _ in 0..100 {
        let k = random_matrix(&mut r, 4, 4);
        let j = Choi::from_liouville(&k, 2, 2).unwrap();
        assert_eq!(j.to_liouville(), k);
        assert_eq!(Choi::from_liouville(&j.to_liouville(), 2, 2).unwrap(), j);
    }
    assert!(matches!(
        Choi::from_liouville(&identity(5), 2, 2),
        Err(Error::Dimension(_))
    ));

    // Choi of the emission generator column by column from L(|i><j|)
    let em = Lindbladian::emission(0.6).unwrap();
    let jl = build_liouville(&em).to_choi();
    let mut oracle = zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            oracle += kron(&ketbra(2, i, j), &em.apply(&ketbra(2, i, j)));
        }
    }
    assert!(dist(&jl.matrix, &oracle) < 1e-14);
    assert!(dist(&Choi::of_generator(&em).matrix, &oracle) < 1e-14);
}

#[test]
fn steady_state_examples() {
    let ss = steady_states(&Lindbladian::zero(2), 1e-9);
    assert_eq!(ss.states.len(), 1);
    assert!(dist(&ss.states[0], &scaled_identity(2, 0.5)) < 1e-14);

    let ss = steady_states(&Lindbladian::emission(1.0).unwrap(), 1e-9);
    assert!(ss.is_unique());
    assert!(dist(&ss.states[0], &ketbra(2, 0, 0)) < 1e-10);

    let dp = Lindbladian::dephasing(0.4).unwrap();
    let ss = steady_states(&dp, 1e-9);
    assert_eq!(ss.kernel_dim, 2);
    assert_eq!(ss.states.len(), 2);
    for s in &ss.states {
        assert!(s[(0, 1)].norm() < 1e-10);
        check_state(s, 1e-9).unwrap();
    }

    let mut r = rng(40);
    let l = random_lindbladian(&mut r, 3, 3);
    let ss = steady_states(&l, 1e-8);
    for s in &ss.states {
        check_state(s, 1e-9).unwrap();
        assert!(trace_norm(&l.apply(s)) <= 1e-8);
    }
}

#[test]
fn channel_property_checks() {
    let id = Choi::identity(2);
    assert!(is_cptp(&id, 1e-9) && is_hptp(&id, 1e-9));

    let gen = Choi::of_generator(&Lindbladian::coherent(pauli(3)).unwrap());
    assert!(!is_cptp(&gen, 1e-9));
    assert!(min_eigenvalue(&gen.matrix) < -1e-3);

    let (processor, _) = protocols::coherent_protocol(&swap_operator(2), 1e-9).unwrap();
    assert_eq!(processor.choi.matrix.nrows(), 32);
    assert!(is_hptp(&processor.choi, 1e-9));
    assert!(!is_cptp(&processor.choi, 1e-9));
}

#[test]
fn liouville_spectrum_in_left_half_plane() {
    let mut r = rng(41);
    for _ in 0..20 {
        let l = random_lindbladian(&mut r, 3, 2);
        for ev in build_liouville(&l).eigenvalues() {
            assert!(ev.re <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_semigroup_law(seed in any::<u64>(), s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let mut r = rng(seed);
        let l = random_lindbladian(&mut r, 2, 2);
        let composed = compose_serial(&semigroup_choi(&l, s).unwrap(), &semigroup_choi(&l, t).unwrap()).unwrap();
        prop_assert!(dist(&composed.matrix, &semigroup_choi(&l, s + t).unwrap().matrix) < 1e-9);
    }

    #[test]
    fn prop_trajectory_stays_a_state(seed in any::<u64>(), t in 0.0f64..5.0) {
        let mut r = rng(seed);
        let l = random_lindbladian(&mut r, 3, 2);
        let rho = evolve_state(&l, &random_state(&mut r, 3), t).unwrap();
        prop_assert!((trace(&rho).re - 1.0).abs() < 1e-10);
        prop_assert!(min_eigenvalue(&rho) >= -1e-9);
    }

    #[test]
    fn prop_choi_liouville_inverse(seed in any::<u64>(), din in 1usize..4, dout in 1usize..4) {
        let mut r = rng(seed);
        let j = Choi::new(din, dout, random_matrix(&mut r, din * dout, din * dout)).unwrap();
        let back = Choi::from_liouville(&j.to_liouville(), din, dout).unwrap();
        prop_assert_eq!(back, j);
    }
}
