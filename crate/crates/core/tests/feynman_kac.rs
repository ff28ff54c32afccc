mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use semilinear::feynman_kac::{
    perron_radius_by_squaring, perturbed_resolvent, potential_monotonicity_check, spectral_radius_identity_check,
    uniqueness_check, zero_mode_check, PerturbedOperator, BRANCH_TOL, ZERO_MODE_TOL,
};
use semilinear::spectral::principal_eigenpair;
use semilinear::{solve, Error, GeneratorModel, Nonlinearity, Side, SolveOptions};

fn scalar(l: f64) -> GeneratorModel {
    GeneratorModel::from_matrix(DMatrix::from_element(1, 1, l)).unwrap()
}

fn two_state() -> GeneratorModel {
    GeneratorModel::from_matrix(DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0])).unwrap()
}

#[test]
fn scalar_perturbation() {
    let op = PerturbedOperator::from_values(&scalar(-1.0), &[2.0]).unwrap();
    assert_relative_eq!(perturbed_resolvent(&op, 0.0).unwrap()[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
    let c = spectral_radius_identity_check(&op, 1.0).unwrap();
    assert_relative_eq!(c.lhs, 0.25, epsilon = 1e-14);
    assert_relative_eq!(c.rhs, 0.25, epsilon = 1e-14);

    // V = 0 is the plain resolvent.
    let m = two_state();
    let op = PerturbedOperator::from_values(&m, &[0.0, 0.0]).unwrap();
    assert_relative_eq!(perturbed_resolvent(&op, 0.5).unwrap(), m.resolvent(0.5).unwrap(), epsilon = 1e-14);
    assert_relative_eq!(spectral_radius_identity_check(&op, 0.5).unwrap().rhs, 1.0 / 1.5, epsilon = 1e-12);
}

#[test]
fn monotonicity_examples() {
    let m = two_state();
    let c = potential_monotonicity_check(&m, &[0.0, 0.0], &[0.0, 1.0]).unwrap();
    // L - diag(0, 1) = [[-2, 1], [1, -3]] has s = (-5 + sqrt 5) / 2, against
    // s(L) = -1.
    assert_relative_eq!(c.gap, (3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-12);
    assert!(c.holds);
    let c = potential_monotonicity_check(&m, &[0.5, -0.5], &[0.75, -0.25]).unwrap();
    assert_relative_eq!(c.gap, 0.25, epsilon = 1e-12);
    assert!(potential_monotonicity_check(&m, &[0.0, 1.0], &[0.0, 1.0]).is_err());
    assert!(potential_monotonicity_check(&m, &[0.0, 1.0], &[0.0, 0.0]).is_err());
}

#[test]
fn zero_modes() {
    let f = Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap();
    let z = zero_mode_check(&scalar(-1.0), &DVector::from_element(1, 2.0), &f).unwrap();
    assert!(z.value <= 1e-14);
    assert!(z.fixed_point_gaps.iter().all(|(_, g)| *g <= 1e-14));

    // f = lambda1 y on the principal eigenvector.
    let l = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.5, 0.3, -1.0, 0.2, 1.0, 1.0, -3.0]);
    let m = GeneratorModel::from_matrix(l).unwrap();
    let e = principal_eigenpair(&m, &[0.0; 3], Side::Primal).unwrap();
    let f = Nonlinearity::linear(3, e.eigenvalue).unwrap();
    assert!(zero_mode_check(&m, &e.eigenvector, &f).unwrap().value <= 1e-10);

    // Solver output on a two-state problem.
    let f = Nonlinearity::logistic(vec![2.0, 3.0], vec![1.0, 0.5]).unwrap();
    let u = solve(&two_state(), &f, &SolveOptions::default()).unwrap().solution().unwrap();
    assert!(zero_mode_check(&two_state(), &u, &f).unwrap().value <= 1e-8);
    assert!(zero_mode_check(&two_state(), &DVector::from_vec(vec![1.0, 0.0]), &f).is_err());
}

#[test]
fn uniqueness_examples() {
    let opts = SolveOptions::default();
    let f = Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap();
    let v = uniqueness_check(&scalar(-1.0), &f, &[DVector::from_element(1, 2.0)], &opts).unwrap();
    assert!(v.unique && v.branch_gap <= BRANCH_TOL && v.zero_mode_check <= ZERO_MODE_TOL);

    let f = Nonlinearity::power_minus_linear(1, 0.5, 0.0).unwrap();
    let v = uniqueness_check(&scalar(-1.0), &f, &[DVector::from_element(1, 1.0)], &opts).unwrap();
    assert!(v.unique && v.branch_gap <= BRANCH_TOL);

    // The eigenline: c phi and 2c phi both solve -Lu = lambda1 u.
    let m = two_state();
    let f = Nonlinearity::linear(2, 1.0).unwrap();
    let phi = DVector::from_element(2, 1.0);
    let e = uniqueness_check(&m, &f, &[phi.clone(), &phi * 2.0], &opts).unwrap_err();
    assert!(matches!(e, Error::MonotonicityNotStrict { .. }));
}

#[test]
fn uniqueness_through_solver_report() {
    let opts = SolveOptions {
        uniqueness: true,
        ..Default::default()
    };
    let l = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 0.5, 0.0, -0.5]);
    let m = GeneratorModel::from_matrix(l).unwrap();
    let f = Nonlinearity::logistic(vec![1.0, 2.0, 1.5], vec![1.0, 1.0, 2.0]).unwrap();
    let r = solve(&m, &f, &opts).unwrap();
    let v = r.uniqueness.unwrap();
    assert!(v.unique, "{v:?}");
    assert!(v.branch_gap <= BRANCH_TOL);
}

/// Largest eigenvalue modulus, from the dense eigenvalues.
fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn radius_identity((l, v) in common::any_generator(8).prop_flat_map(|l| {
        let n = l.nrows();
        (Just(l), proptest::collection::vec(-1.0..2.0f64, n))
    }), gap in 0.05..3.0f64) {
        let m = GeneratorModel::from_matrix(l.clone()).unwrap();
        let op = PerturbedOperator::from_values(&m, &v).unwrap();
        let lv = &l - DMatrix::from_diagonal(&DVector::from_vec(v.clone()));
        let s = common::spectral_bound(&lv);
        prop_assert!((op.spectral_bound - s).abs() <= 1e-9 * (1.0 + s.abs()));
        let alpha = s + gap;
        let g = perturbed_resolvent(&op, alpha).unwrap();
        let dense = common::resolvent(&lv, alpha);
        prop_assert!((&g - &dense).amax() <= 1e-9 * dense.amax());
        let r = spectral_radius(&dense);
        prop_assert!((r * gap - 1.0).abs() <= 1e-9);
        prop_assert!((perron_radius_by_squaring(&dense) - r).abs() <= 1e-9 * r);
        let c = spectral_radius_identity_check(&op, alpha).unwrap();
        prop_assert!(c.relative_gap <= 1e-9);
    }

    #[test]
    fn strict_monotonicity((l, v1, bump) in common::any_generator(8).prop_flat_map(|l| {
        let n = l.nrows();
        (Just(l), proptest::collection::vec(-1.0..2.0f64, n), proptest::collection::vec(0.0..1.0f64, n))
    }), hit in 0usize..8) {
        let m = GeneratorModel::from_matrix(l.clone()).unwrap();
        let n = l.nrows();
        let mut v2: Vec<f64> = v1.iter().zip(&bump).map(|(a, b)| a + if *b > 0.5 { *b } else { 0.0 }).collect();
        v2[hit % n] += 1e-2;
        let c = potential_monotonicity_check(&m, &v1, &v2).unwrap();
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_vec(v.to_vec()));
        let s1 = common::spectral_bound(&(&l - diag(&v1)));
        let s2 = common::spectral_bound(&(&l - diag(&v2)));
        prop_assert!((c.gap - (s1 - s2)).abs() <= 1e-9);
        prop_assert!(c.holds && c.gap > 0.0);
        // A constant shift moves the bound by exactly that constant.
        let shifted: Vec<f64> = v1.iter().map(|x| x + 0.3).collect();
        let c = potential_monotonicity_check(&m, &v1, &shifted).unwrap();
        prop_assert!((c.gap - 0.3).abs() <= 1e-9);
    }
}
