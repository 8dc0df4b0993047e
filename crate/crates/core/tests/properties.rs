//! Randomized invariants of the operator algebra, closure and right-hand side.

use bbgky::bbgky::{Packing, Propagator};
use bbgky::cluster::closure;
use bbgky::correction::{least_norm_solve, param_len, ConstraintSystem, RowKind};
use bbgky::fock::{binom_f64, FockBasis};
use bbgky::hamiltonian::energy;
use bbgky::numerics::{adjoint, eigh};
use bbgky::operator::{join, lift_unitary, partial_trace, rotate_basis, trace_distance, uid_split, BosonicOperator};
use bbgky::oracle::{bec_rdm, extract_rdm, n_body_hamiltonian, CIState};
use bbgky::representability::k_matrix;
use bbgky::selftest::{dense_partial_trace, random_hermitian, random_model, random_operator, random_state, random_unitary};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rdms(a: &CIState, order: usize) -> Vec<BosonicOperator> {
    (1..=order).map(|o| extract_rdm(a, o).unwrap()).collect()
}

fn lifted(b: &BosonicOperator, u: &Array2<Complex64>) -> BosonicOperator {
    rotate_basis(b, u).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rank_inverts_unrank(m in 1usize..5, o in 0usize..7) {
        let basis = FockBasis::new(m, o).unwrap();
        for (k, occ) in basis.states().iter().enumerate() {
            prop_assert_eq!(occ.iter().sum::<u32>() as usize, o);
            prop_assert_eq!(basis.rank(occ).unwrap(), k);
        }
    }

    #[test]
    fn partial_trace_matches_dense(seed: u64, m in 1usize..4, o in 1usize..4) {
        let b = random_operator(&mut rng(seed), m, o).unwrap();
        let fast = partial_trace(&b, 1).unwrap();
        let dense = dense_partial_trace(&b).unwrap();
        prop_assert!(fast.max_abs_diff(&dense).unwrap() < 1e-12);
        prop_assert!((fast.trace() - b.trace()).abs() < 1e-12);
    }

    #[test]
    fn exact_rdms_are_compatible_and_positive(seed: u64, m in 2usize..4, n in 2usize..6) {
        let a = random_state(&mut rng(seed), m, n).unwrap();
        let r = rdms(&a, n);
        for o in 1..n {
            prop_assert!(partial_trace(&r[o], 1).unwrap().max_abs_diff(&r[o - 1]).unwrap() < 1e-12);
        }
        for x in &r {
            prop_assert!((x.trace() - 1.0).abs() < 1e-12);
            prop_assert!(x.eig().unwrap().min() > -1e-12);
        }
    }

    #[test]
    fn uid_is_a_projection(seed: u64, m in 1usize..4, o in 1usize..4) {
        let b = random_operator(&mut rng(seed), m, o).unwrap();
        let (red, irr) = uid_split(&b).unwrap();
        prop_assert!(red.add(&irr).unwrap().max_abs_diff(&b).unwrap() < 1e-10);
        prop_assert!(partial_trace(&irr, 1).unwrap().max_abs() < 1e-10);
        let (red2, irr2) = uid_split(&red).unwrap();
        prop_assert!(red2.max_abs_diff(&red).unwrap() < 1e-10);
        prop_assert!(irr2.max_abs() < 1e-10);
    }

    #[test]
    fn join_is_symmetric(seed: u64, m in 1usize..4, o1 in 1usize..3, o2 in 1usize..3) {
        let mut g = rng(seed);
        let a = random_operator(&mut g, m, o1).unwrap();
        let b = random_operator(&mut g, m, o2).unwrap();
        prop_assert!(join(&a, &b).unwrap().max_abs_diff(&join(&b, &a).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn join_of_condensates_is_a_condensate(seed: u64, m in 1usize..4, o1 in 1usize..3, o2 in 1usize..3) {
        let phi = random_state(&mut rng(seed), m, 1).unwrap().amplitudes;
        let ab = join(&bec_rdm(&phi, o1).unwrap(), &bec_rdm(&phi, o2).unwrap()).unwrap();
        // The join carries the multiplicity binom(o1 + o2, o1).
        let want = bec_rdm(&phi, o1 + o2).unwrap().scaled(binom_f64(o1 + o2, o1));
        prop_assert!(ab.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn join_commutes_with_rotation(seed: u64, m in 2usize..4) {
        let mut g = rng(seed);
        let a = random_operator(&mut g, m, 1).unwrap();
        let b = random_operator(&mut g, m, 2).unwrap();
        let u = random_unitary(&mut g, m).unwrap();
        let lhs = lifted(&join(&a, &b).unwrap(), &u);
        let rhs = join(&lifted(&a, &u), &lifted(&b, &u)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn lifted_unitaries_are_unitary(seed: u64, m in 1usize..4, o in 1usize..4) {
        let u = random_unitary(&mut rng(seed), m).unwrap();
        let l = lift_unitary(&u, o).unwrap();
        let e = adjoint(&l).dot(&l);
        for i in 0..e.nrows() {
            for j in 0..e.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((e[[i, j]] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn closure_is_compatible(seed: u64, m in 2usize..4, order in 1usize..4) {
        let a = random_state(&mut rng(seed), m, order + 2).unwrap();
        let r = rdms(&a, order);
        let c = closure(&r).unwrap();
        prop_assert_eq!(c.order(), order + 1);
        prop_assert!(partial_trace(&c, 1).unwrap().max_abs_diff(&r[order - 1]).unwrap() < 1e-10);
    }

    #[test]
    fn closure_is_covariant(seed: u64, m in 2usize..4, order in 1usize..4) {
        let mut g = rng(seed);
        let a = random_state(&mut g, m, order + 2).unwrap();
        let u = random_unitary(&mut g, m).unwrap();
        let r = rdms(&a, order);
        let rotated: Vec<_> = r.iter().map(|x| lifted(x, &u)).collect();
        let lhs = lifted(&closure(&r).unwrap(), &u);
        let rhs = closure(&rotated).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn derivatives_are_traceless_and_compatible(seed: u64, m in 2usize..4, order in 1usize..4) {
        let mut g = rng(seed);
        let n = order + 2;
        let spec = random_model(&mut g, m, n).unwrap();
        let a = random_state(&mut g, m, n).unwrap();
        let r = rdms(&a, order);
        let p = Propagator::new(&spec, order, Packing::AllOrders).unwrap();
        let d = p.rhs(0.0, &r).unwrap();
        for x in &d {
            prop_assert!(x.trace().abs() < 1e-12);
        }
        for o in 1..order {
            prop_assert!(partial_trace(&d[o], 1).unwrap().max_abs_diff(&d[o - 1]).unwrap() < 1e-9);
        }
    }

    #[test]
    fn rdm_energy_matches_wavefunction(seed: u64, m in 2usize..4, n in 2usize..6) {
        let mut g = rng(seed);
        let spec = random_model(&mut g, m, n).unwrap();
        let a = random_state(&mut g, m, n).unwrap();
        let e = energy(&extract_rdm(&a, 1).unwrap(), &extract_rdm(&a, 2).unwrap(), &spec).unwrap();
        let want = a.expectation(&n_body_hamiltonian(&spec).unwrap());
        prop_assert!((e - want).abs() < 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn k_matrix_of_a_wavefunction(seed: u64, m in 2usize..4, n in 2usize..7) {
        let a = random_state(&mut rng(seed), m, n).unwrap();
        let k = k_matrix(&extract_rdm(&a, 1).unwrap(), &extract_rdm(&a, 2).unwrap(), n).unwrap();
        prop_assert!((k.trace() - 1.0).abs() < 1e-10);
        prop_assert!(k.eig().unwrap().min() > -1e-10);
    }

    #[test]
    fn trace_distance_is_bounded_and_invariant(seed: u64, m in 2usize..4, n in 2usize..5) {
        let mut g = rng(seed);
        let a = extract_rdm(&random_state(&mut g, m, n).unwrap(), 2).unwrap();
        let b = extract_rdm(&random_state(&mut g, m, n).unwrap(), 2).unwrap();
        let u = random_unitary(&mut g, m).unwrap();
        let d = trace_distance(&a, &b).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        prop_assert!((trace_distance(&lifted(&a, &u), &lifted(&b, &u)).unwrap() - d).abs() < 1e-10);
    }

    #[test]
    fn eigendecomposition_reconstructs(seed: u64, n in 1usize..12) {
        let a = random_hermitian(&mut rng(seed), n);
        let e = eigh(&a).unwrap();
        let v = &e.vectors;
        let lam = Array2::from_diag(&e.values.mapv(|x| Complex64::new(x, 0.0)));
        let back = v.dot(&lam).dot(&adjoint(v));
        let vv = adjoint(v).dot(v);
        for i in 0..n {
            prop_assert!(i == 0 || e.values[i] >= e.values[i - 1]);
            for j in 0..n {
                prop_assert!((back[[i, j]] - a[[i, j]]).norm() < 1e-10);
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((vv[[i, j]] - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn least_norm_solution_is_minimal(seed: u64, rows in 1usize..6) {
        let mut g = rng(seed);
        let p = param_len(2).unwrap();
        let a = Array2::from_shape_fn((rows, p), |_| g.gen_range(-1.0..1.0));
        let b = Array1::from_shape_fn(rows, |_| g.gen_range(-1.0..1.0));
        let sys = ConstraintSystem { a: a.clone(), b: b.clone(), scale: 1.0, kinds: vec![RowKind::DDefect; rows], m: 2 };
        let sol = least_norm_solve(&sys).unwrap();
        let c = Array1::from(sol.vector.clone());
        prop_assert!((a.dot(&c) - &b).iter().all(|x| x.abs() < 1e-10));
        // Null-space directions from the spectrum of A^T A.
        let ata = a.t().dot(&a).mapv(|x| Complex64::new(x, 0.0));
        let e = eigh(&ata).unwrap();
        for k in 0..p {
            if e.values[k] < 1e-10 {
                let v: Array1<f64> = e.vectors.column(k).mapv(|z| z.re);
                prop_assert!(c.dot(&v).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn rotated_operator_round_trip() {
    let mut g = rng(7);
    let b = random_operator(&mut g, 3, 2).unwrap();
    let u = random_unitary(&mut g, 3).unwrap();
    let back = lifted(&lifted(&b, &u), &adjoint(&u));
    assert!(back.max_abs_diff(&b).unwrap() < 1e-12);
}
