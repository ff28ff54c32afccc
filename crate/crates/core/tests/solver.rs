mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use semilinear::solver::{
    criterion_for, definition_residual, is_subsolution, is_supersolution, solution_map_monotonicity_check,
    solve_truncated, subsolution_seed, supersolution_seed, truncate, TruncationParams,
};
use semilinear::{solve, Error, GeneratorModel, Nonlinearity, SolveOptions, Status};

fn scalar(l: f64) -> GeneratorModel {
    GeneratorModel::from_matrix(DMatrix::from_element(1, 1, l)).unwrap()
}

fn two_state() -> GeneratorModel {
    GeneratorModel::from_matrix(DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0])).unwrap()
}

#[test]
fn scalar_closed_forms() {
    let opts = SolveOptions::default();
    let r = solve(&scalar(-1.0), &Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap(), &opts).unwrap();
    assert_eq!(r.status, Status::Solved);
    assert_relative_eq!(r.u.unwrap()[0], 2.0, epsilon = 1e-8);

    // lambda u = sqrt(u) gives u = lambda^-2.
    for lambda in [1.0, 2.0, 5.0] {
        let f = Nonlinearity::power_minus_linear(1, 0.5, 0.0).unwrap();
        let r = solve(&scalar(-lambda), &f, &opts).unwrap();
        assert_relative_eq!(r.u.unwrap()[0], lambda.powi(-2), epsilon = 1e-8);
    }
}

#[test]
fn linear_source_fails_the_criterion() {
    let f = Nonlinearity::linear(1, 0.5).unwrap();
    let r = solve(&scalar(-1.0), &f, &SolveOptions::default()).unwrap();
    assert_eq!(r.status, Status::CriterionFailed);
    assert!(r.u.is_none());
    assert!(!r.criterion.satisfied);

    let strict = SolveOptions {
        strict: true,
        ..Default::default()
    };
    assert!(matches!(solve(&scalar(-1.0), &f, &strict), Err(Error::CriterionFailed { .. })));
}

#[test]
fn ordered_sources_give_ordered_solutions() {
    let m = scalar(-1.0);
    let f1 = Nonlinearity::logistic(vec![2.0], vec![1.0]).unwrap();
    let f2 = Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap();
    let opts = SolveOptions::default();
    assert_relative_eq!(solve(&m, &f1, &opts).unwrap().u.unwrap()[0], 1.0, epsilon = 1e-8);
    assert!(solution_map_monotonicity_check(&m, &f1, &f2, &opts).unwrap());
    assert!(solution_map_monotonicity_check(&m, &f1, &f1, &opts).unwrap());
    assert!(solution_map_monotonicity_check(&m, &f2, &f1, &opts).is_err());

    // Two states, against time-stepped equilibria.
    let m = two_state();
    let f1 = Nonlinearity::logistic(vec![1.5, 2.0], vec![1.0, 1.0]).unwrap();
    let f2 = Nonlinearity::logistic(vec![2.0, 2.5], vec![1.0, 0.5]).unwrap();
    let u1 = common::equilibrium(&m.l, &|i, y| f1.value(i, y), &DVector::from_element(2, 1.0));
    let u2 = common::equilibrium(&m.l, &|i, y| f2.value(i, y), &DVector::from_element(2, 1.0));
    assert!(u1.iter().zip(u2.iter()).all(|(a, b)| a <= b));
    let s1 = solve(&m, &f1, &opts).unwrap().solution().unwrap();
    let s2 = solve(&m, &f2, &opts).unwrap().solution().unwrap();
    assert!((s1 - u1).amax() <= 1e-8 && (s2 - u2).amax() <= 1e-8);
    assert!(solution_map_monotonicity_check(&m, &f1, &f2, &opts).unwrap());
}

#[test]
fn seeds() {
    assert_eq!(supersolution_seed(&scalar(-1.0), 2.0).unwrap()[0], 3.0);
    let s = supersolution_seed(&two_state(), 3.0).unwrap();
    assert_relative_eq!(s, DVector::from_element(2, 4.0), epsilon = 1e-14);
    assert_eq!(supersolution_seed(&two_state(), 0.0).unwrap(), DVector::from_element(2, 1.0));
    assert!(supersolution_seed(&scalar(0.0), 1.0).is_err());

    assert_eq!(subsolution_seed(&DVector::from_element(1, 1.0), 2.0)[0], 0.25);
    assert_eq!(subsolution_seed(&DVector::from_element(1, 0.0), 4.0)[0], 0.25);
}

#[test]
fn growing_two_state_model() {
    // Row sum of the second state is positive: s(L) > 0.
    let m = GeneratorModel::from_matrix(DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 1.0, -0.25])).unwrap();
    assert!(m.spectral_bound > 0.0);
    let f = Nonlinearity::logistic(vec![2.0, 1.5], vec![1.0, 0.5]).unwrap();
    let r = solve(&m, &f, &SolveOptions::default()).unwrap();
    assert!(r.shifts.doob);
    let want = common::equilibrium(&m.l, &|i, y| f.value(i, y), &DVector::from_element(2, 1.0));
    assert!((r.solution().unwrap() - want).amax() <= 1e-8);
    assert!(r.residual.unwrap() <= 1e-8);
}

#[test]
fn truncated_fixed_point_matches_dense_identity() {
    let m = two_state();
    let f = Nonlinearity::logistic(vec![3.0, 2.0], vec![1.0, 2.0]).unwrap();
    let params = TruncationParams {
        k: 4.0,
        n: Some(8.0),
        mu: 0.0,
    };
    let g = truncate(&f, params.k, params.n);
    let gamma = params.gamma();
    let under = DVector::from_element(2, gamma);
    let over = supersolution_seed(&m, params.k).unwrap();
    assert!(is_subsolution(&m.l, &g, gamma, &under));
    assert!(is_supersolution(&m.l, &g, gamma, &over));
    let r = solve_truncated(&m, &f, params, (&under, &over), 1e-13, 100_000).unwrap();
    let u = r.u;
    // u = gamma + (-L)^{-1} f_{k,n}(u).
    let gu = DVector::from_fn(2, |i, _| g.value(i, u[i]));
    let rhs = DVector::from_element(2, gamma) + common::resolvent(&m.l, 0.0) * gu;
    assert!((&u - rhs).amax() <= 1e-10);
    assert!(u.iter().zip(over.iter()).all(|(a, b)| a <= b));
    assert!(u.iter().all(|x| *x >= gamma));
}

#[test]
fn residual_of_the_exact_solution_vanishes() {
    let f = Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap();
    let m = scalar(-1.0);
    assert!(definition_residual(&m, &f, &DVector::from_element(1, 2.0), 1.0).unwrap() <= 1e-14);
    assert!(definition_residual(&m, &f, &DVector::from_element(1, 1.0), 1.0).unwrap() > 0.1);
}

#[test]
fn criterion_values() {
    use semilinear::ExtendedReal::*;
    let c = criterion_for(&scalar(-1.0), &Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap()).unwrap();
    assert_eq!((c.lambda1_a0, c.lambda1_ainf, c.satisfied), (Finite(-2.0), PlusInf, true));
    let c = criterion_for(&scalar(-1.0), &Nonlinearity::power_minus_linear(1, 0.5, 0.0).unwrap()).unwrap();
    assert_eq!(c.lambda1_a0, MinusInf);
    assert_relative_eq!(c.lambda1_ainf.finite().unwrap(), 1.0, epsilon = 1e-12);
}

fn problem(sub_markovian: bool) -> impl Strategy<Value = (DMatrix<f64>, Nonlinearity)> {
    let models = if sub_markovian {
        common::sub_markovian(6, 0.1..1.0).boxed()
    } else {
        common::any_generator(6).boxed()
    };
    models.prop_flat_map(|l| {
        let n = l.nrows();
        let s = common::spectral_bound(&l);
        let logistic = (common::vector(n, 0.5..3.0), common::vector(n, 0.5..2.0)).prop_map(move |(mu, beta)| {
            let mu: Vec<f64> = mu.iter().map(|x| x + (-s).max(0.0)).collect();
            Nonlinearity::logistic(mu, beta.iter().copied().collect()).unwrap()
        });
        let power = (0.3..0.8f64, 0.5..2.0f64, 0.1..1.0f64)
            .prop_map(move |(q, b, c)| Nonlinearity::scaled_power(n, b, q, s.max(0.0) + c).unwrap());
        (Just(l), prop_oneof![logistic, power])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matches_time_stepped_equilibrium((l, f) in problem(true)) {
        let m = GeneratorModel::from_matrix(l.clone()).unwrap();
        let r = solve(&m, &f, &SolveOptions::default()).unwrap();
        prop_assert_eq!(r.status, Status::Solved);
        let u = r.solution().unwrap();
        prop_assert!(u.iter().all(|x| *x > 0.0));
        let want = common::equilibrium(&l, &|i, y| f.value(i, y), &DVector::from_element(l.nrows(), 1.0));
        prop_assert!((&u - &want).amax() <= 1e-7 * (1.0 + want.amax()), "{} vs {}", u, want);
        // -Lu = f(u) directly.
        let fu = DVector::from_fn(u.len(), |i, _| f.value(i, u[i]));
        prop_assert!((&l * &u + fu).amax() <= 1e-7 * (1.0 + l.amax() * u.amax()));
    }

    #[test]
    fn growing_models_match_equilibrium((l, f) in problem(false)) {
        let m = GeneratorModel::from_matrix(l.clone()).unwrap();
        let r = solve(&m, &f, &SolveOptions::default()).unwrap();
        prop_assert_eq!(r.status, Status::Solved);
        prop_assert_eq!(r.shifts.doob, !m.sub_markovian);
        let want = common::equilibrium(&l, &|i, y| f.value(i, y), &DVector::from_element(l.nrows(), 1.0));
        prop_assert!((r.solution().unwrap() - &want).amax() <= 1e-7 * (1.0 + want.amax()));
    }

    #[test]
    fn supersolution_seed_brackets((l, f) in problem(true), k in 0.5..20.0f64, n in 1.0..50.0f64) {
        let m = GeneratorModel::from_matrix(l.clone()).unwrap();
        let g = truncate(&f, k, Some(n));
        let over = supersolution_seed(&m, k).unwrap();
        // 1 + R(k 1) against the dense inverse.
        let want = common::resolvent(&l, 0.0) * DVector::from_element(l.nrows(), k);
        prop_assert!((&over - want.add_scalar(1.0)).amax() <= 1e-10 * over.amax());
        prop_assert!(is_supersolution(&l, &g, 1.0 / n, &over));
    }
}
