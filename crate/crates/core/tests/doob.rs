mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use semilinear::doob::{conjugate, doob_transform, pull_back_checked, pull_back_solution, transform_nonlinearity};
use semilinear::state_model::validate_generator;
use semilinear::{solve, Error, GeneratorModel, MeasureSpace, Nonlinearity, SolveOptions};

#[test]
fn constant_eigenvector_is_identity() {
    let m = GeneratorModel::from_matrix(DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0])).unwrap();
    let d = doob_transform(&m).unwrap();
    assert_relative_eq!(d.transformed.l, m.l, epsilon = 1e-12);
    let v = DVector::from_vec(vec![0.3, 1.7]);
    // phi = (1, 1) / sqrt(2) under the unit 2-norm.
    assert_relative_eq!(pull_back_solution(&v, &d.phi1), &v / 2f64.sqrt(), epsilon = 1e-12);
}

#[test]
fn nonsymmetric_pair() {
    // phi = (1, sqrt 2) up to scale, s = -3 + sqrt 2.
    let l = DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 2.0, -3.0]);
    let m = validate_generator(l, MeasureSpace::new(vec![1.0, 1.0], 2.0).unwrap()).unwrap();
    let d = doob_transform(&m).unwrap();
    let r2 = 2f64.sqrt();
    assert_relative_eq!(d.phi1.eigenvector[1] / d.phi1.eigenvector[0], r2, epsilon = 1e-12);
    let want = DMatrix::from_row_slice(2, 2, &[-3.0, r2, r2, -3.0]);
    assert_relative_eq!(d.transformed.l, want, epsilon = 1e-12);
    for i in 0..2 {
        assert_relative_eq!(d.transformed.l.row(i).sum(), -3.0 + r2, epsilon = 1e-12);
    }
    assert!(d.transformed.sub_markovian);
    // Measure weights phi^2, proportional to (1, 2).
    assert_relative_eq!(d.transformed_measure[1] / d.transformed_measure[0], 2.0, max_relative = 1e-10);
}

#[test]
fn nonlinearity_and_pull_back() {
    let l = DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 2.0, -3.0]);
    let m = GeneratorModel::from_matrix(l).unwrap();
    let d = doob_transform(&m).unwrap();
    let f = Nonlinearity::logistic(vec![4.0, 3.0], vec![1.0, 2.0]).unwrap();
    let fphi = transform_nonlinearity(&f, &d.phi1).unwrap();
    let phi = &d.phi1.eigenvector;
    for i in 0..2 {
        assert_relative_eq!(fphi.value(i, 0.7), f.value(i, phi[i] * 0.7) / phi[i], epsilon = 1e-14);
    }
    // Solve in the transformed frame and pull back.
    let v = solve(&d.transformed, &fphi, &SolveOptions::default()).unwrap().solution().unwrap();
    let u = pull_back_checked(&m, &f, &v, &d.phi1, 1e-8).unwrap();
    let want = common::equilibrium(&m.l, &|i, y| f.value(i, y), &DVector::from_element(2, 1.0));
    assert!((u - want).amax() <= 1e-8);
    // A wrong candidate is refused.
    assert!(matches!(
        pull_back_checked(&m, &f, &(v * 1.5), &d.phi1, 1e-8),
        Err(Error::ResidualTooLarge { .. })
    ));
}

#[test]
fn positive_bound_refused() {
    let m = GeneratorModel::from_matrix(DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 1.0, -0.25])).unwrap();
    assert!(matches!(doob_transform(&m), Err(Error::PositiveSpectralBound(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn transformed_rows_sum_to_bound(l in common::any_generator(8)) {
        let m = GeneratorModel::from_matrix(l.clone()).unwrap();
        let base = m.shift_to_negative_bound(1.0).shifted;
        let d = doob_transform(&base).unwrap();
        let s = common::spectral_bound(&base.l);
        for i in 0..l.nrows() {
            prop_assert!((d.transformed.l.row(i).sum() - s).abs() <= 1e-10 * (1.0 + l.amax()));
        }
        prop_assert!(d.transformed.sub_markovian);
        let st = common::spectral_bound(&d.transformed.l);
        prop_assert!((st - s).abs() <= 1e-9 * (1.0 + s.abs()));
        // Off-diagonal signs survive the conjugation.
        for i in 0..l.nrows() {
            for j in 0..l.nrows() {
                if i != j {
                    prop_assert!(d.transformed.l[(i, j)] >= 0.0);
                    prop_assert_eq!(d.transformed.l[(i, j)] > 0.0, l[(i, j)] > 0.0);
                }
            }
        }
    }

    #[test]
    fn conjugation_intertwines(l in common::any_generator(8), seed in 0..1000u32) {
        let n = l.nrows();
        let phi = DVector::from_fn(n, |i, _| 0.5 + ((i as f64 + 1.0) * (seed as f64 + 0.3)).sin().abs());
        let v = DVector::from_fn(n, |i, _| ((i as f64 + 3.0) * (seed as f64 + 0.7)).cos());
        let lhs = conjugate(&l, &phi) * &v;
        let rhs = (&l * v.component_mul(&phi)).component_div(&phi);
        prop_assert!((lhs - rhs).amax() <= 1e-12 * (1.0 + l.amax()) * 4.0);
    }
}
