use approx::assert_relative_eq;
use proptest::prelude::*;

use semilinear::nonlinearity::{
    log_grid, lower_slope, shift_delta, validate_hypotheses, GridSpec, Verdict, EPSILON,
};
use semilinear::solver::truncate;
use semilinear::{Error, ExtendedReal, Nonlinearity, Table};

use ExtendedReal::*;

#[test]
fn evaluation_examples() {
    let f = Nonlinearity::power_minus_linear(1, 0.5, 1.0).unwrap();
    assert_eq!(f.evaluate(0, 4.0).unwrap(), -2.0);
    assert_eq!(f.positive_part(0, 4.0), 0.0);
    assert_eq!(f.negative_part(0, 4.0), 2.0);

    let f = Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap();
    assert_eq!(f.evaluate(0, 0.0).unwrap(), 0.0);

    let f = Nonlinearity::saturating(vec![2.0]).unwrap();
    assert_eq!(f.evaluate(0, 1.0).unwrap(), 1.0);

    assert_eq!(f.evaluate(1, 1.0).unwrap_err(), Error::StateOutOfRange { index: 1, n: 1 });
    assert_eq!(f.evaluate(0, -1.0).unwrap_err(), Error::NegativeArgument(-1.0));
}

#[test]
fn construction_rejects_bad_data() {
    assert!(Nonlinearity::logistic(vec![1.0, 2.0], vec![1.0]).is_err());
    assert!(Nonlinearity::power_minus_linear(1, 0.0, 1.0).is_err());
    assert!(Nonlinearity::saturating(vec![f64::NAN]).is_err());
    assert!(Table::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    assert!(Nonlinearity::new(0, semilinear::Kind::Saturating { a: vec![] }).is_err());
    let f = Nonlinearity::saturating(vec![1.0]).unwrap();
    assert!(f.conjugated(&[0.0]).is_err());
}

#[test]
fn slope_examples() {
    let (a0, ai) = Nonlinearity::power_minus_linear(1, 0.5, 1.0).unwrap().slopes();
    assert_eq!((a0.values[0], ai.values[0]), (PlusInf, Finite(-1.0)));
    let (a0, ai) = Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap().slopes();
    assert_eq!((a0.values[0], ai.values[0]), (Finite(3.0), MinusInf));
    let (a0, ai) = Nonlinearity::saturating(vec![2.0]).unwrap().slopes();
    assert_eq!((a0.values[0], ai.values[0]), (Finite(2.0), Finite(0.0)));
    let (a0, ai) = Nonlinearity::linear(2, 0.7).unwrap().slopes();
    assert_eq!(a0.values, vec![Finite(0.7); 2]);
    assert_eq!(ai.values, vec![Finite(0.7); 2]);
    // Shifting by c y moves both slopes by c.
    let (a0, ai) = Nonlinearity::saturating(vec![2.0]).unwrap().shifted(0.5).slopes();
    assert_eq!((a0.values[0], ai.values[0]), (Finite(2.5), Finite(0.5)));
}

#[test]
fn hypothesis_examples() {
    let grid = GridSpec::default();
    let c = validate_hypotheses(&Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap(), &grid);
    assert!(c.passed());
    assert_relative_eq!(c.lambda.unwrap(), 3.0, epsilon = 1e-12);

    // max(sqrt(y) - y) = 1/4 at y = 1/4.
    let c = validate_hypotheses(&Nonlinearity::power_minus_linear(1, 0.5, 1.0).unwrap(), &grid);
    assert!(c.passed());
    assert_eq!(c.lambda.unwrap(), 0.0);
    assert_relative_eq!(c.h.unwrap()[0], 0.25, epsilon = 1e-9);

    let c = validate_hypotheses(&Nonlinearity::scaled_power(1, -1.0, 0.5, 0.0).unwrap(), &grid);
    match c.verdict {
        Verdict::Fail { condition, .. } => assert_eq!(condition, "lower_slope"),
        Verdict::Pass => panic!("-sqrt(y) has no lower slope bound"),
    }

    let c = validate_hypotheses(&Nonlinearity::scaled_power(1, 1.0, 2.0, 0.0).unwrap(), &grid);
    match c.verdict {
        Verdict::Fail { condition, .. } => assert_eq!(condition, "growth"),
        Verdict::Pass => panic!("y^2 grows superlinearly"),
    }
}

#[test]
fn shift_examples() {
    let grid = GridSpec::default();
    // sqrt(y) - y >= 0 on (0, 1] with equality at 1, so the smallest
    // constant is 0 and only the strictness margin is added.
    let f = Nonlinearity::power_minus_linear(1, 0.5, 1.0).unwrap();
    let cert = validate_hypotheses(&f, &grid);
    assert_eq!(cert.c_delta(1.0).unwrap().c_delta, Some(0.0));
    let (g, shift) = shift_delta(&f, 1.0, &cert).unwrap();
    assert_relative_eq!(shift, EPSILON);
    for y in log_grid(1e-6, 1.0, 50) {
        assert_relative_eq!(g.value(0, y), y.sqrt() - y + EPSILON * y, max_relative = 1e-9);
        assert!(g.value(0, y) > 0.0);
    }

    // Already positive on (0, 1]: no shift.
    let f = Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap();
    let (_, shift) = shift_delta(&f, 1.0, &validate_hypotheses(&f, &grid)).unwrap();
    assert_eq!(shift, 0.0);

    // -y: C = 1, shifted to eps y.
    let f = Nonlinearity::linear(1, -1.0).unwrap();
    let (g, shift) = shift_delta(&f, 1.0, &validate_hypotheses(&f, &grid)).unwrap();
    assert_relative_eq!(shift, 1.0 + EPSILON);
    assert_relative_eq!(g.value(0, 0.5), 0.5 * EPSILON, max_relative = 1e-6);

    // No certificate for delta = 2.
    assert_eq!(shift_delta(&f, 2.0, &cert).unwrap_err(), Error::MissingLowerSlopeBound(2.0));
}

#[test]
fn truncation_examples() {
    let f = Nonlinearity::power_minus_linear(1, 0.5, 1.0).unwrap();
    assert_eq!(truncate(&f, 1.0, Some(1.0)).value(0, 4.0), -1.0);
    assert_eq!(truncate(&f, 1.0, Some(1.0)).value(0, 0.0), 0.0);
    let f = Nonlinearity::logistic(vec![3.0], vec![1.0]).unwrap();
    assert_eq!(truncate(&f, 10.0, Some(5.0)).value(0, 1.0), 2.0);
}

#[test]
fn conjugation_example() {
    // y^2 conjugated by phi = 2 gives (2y)^2 / 2 = 2y^2.
    let f = Nonlinearity::scaled_power(1, 1.0, 2.0, 0.0).unwrap();
    let g = f.conjugated(&[2.0]).unwrap();
    for y in [0.0, 0.5, 1.0, 3.0] {
        assert_relative_eq!(g.value(0, y), 2.0 * y * y, max_relative = 1e-15);
    }
    assert_eq!(f.conjugated(&[1.0]).unwrap().value(0, 1.7), f.value(0, 1.7));
}

#[test]
fn serde_round_trip() {
    let f = Nonlinearity::logistic(vec![3.0, 1.0], vec![1.0, 2.0]).unwrap().shifted(0.25);
    let f = f.conjugated(&[1.0, 2.0]).unwrap();
    let text = serde_json::to_string(&f).unwrap();
    let back: Nonlinearity = serde_json::from_str(&text).unwrap();
    assert_eq!(back, f);
}

/// Smallest sampled quotient on `(0, delta]`. On a linear piece `a + b y`
/// the quotient `a / y + b` is monotone, so table knots are added to the
/// samples.
fn sampled_ratio_inf(f: &Nonlinearity, i: usize, delta: f64) -> f64 {
    let mut ys = log_grid(1e-9 * delta, delta, 2000);
    if let semilinear::Kind::Tabulated { tables } = &f.kind {
        ys.extend(tables[i].knots.iter().filter(|&&k| k > 0.0 && k <= delta));
    }
    ys.into_iter().map(|y| f.quotient(i, y)).fold(f64::INFINITY, f64::min)
}

fn family() -> impl Strategy<Value = Nonlinearity> {
    prop_oneof![
        (0.1..5.0f64, 0.1..3.0f64).prop_map(|(mu, beta)| Nonlinearity::logistic(vec![mu], vec![beta]).unwrap()),
        (0.2..0.8f64, -2.0..2.0f64, 0.2..3.0f64)
            .prop_map(|(q, c, b)| Nonlinearity::scaled_power(1, b, q, c).unwrap()),
        (-3.0..3.0f64).prop_map(|a| Nonlinearity::saturating(vec![a]).unwrap()),
        (-2.0..2.0f64).prop_map(|c| Nonlinearity::linear(1, c).unwrap()),
        (
            proptest::collection::vec(0.0..2.0f64, 2..6),
            proptest::collection::vec(-2.0..2.0f64, 6)
        )
            .prop_map(|(gaps, vals)| {
                let mut knots = vec![0.0];
                for g in gaps {
                    knots.push(knots.last().unwrap() + g + 0.05);
                }
                let mut values = vec![0.0];
                values.extend(vals.iter().take(knots.len() - 1));
                Nonlinearity::tabulated(vec![Table::new(knots, values).unwrap()]).unwrap()
            }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn slopes_match_sampled_quotients(f in family()) {
        let (a0, ai) = f.slopes();
        // Infinite slopes show up as quotients that keep moving.
        let (near0, nearer0) = (f.quotient(0, 1e-10), f.quotient(0, 1e-14));
        let (far, farther) = (f.quotient(0, 1e10), f.quotient(0, 1e14));
        match a0.values[0] {
            Finite(x) => prop_assert!((x - near0).abs() <= 1e-4 * (1.0 + x.abs())),
            PlusInf => prop_assert!(nearer0 > near0 && near0 > f.quotient(0, 1e-6)),
            MinusInf => prop_assert!(nearer0 < near0 && near0 < f.quotient(0, 1e-6)),
        }
        match ai.values[0] {
            Finite(x) => prop_assert!((x - farther).abs() <= (x - far).abs() + 1e-12 && (x - farther).abs() <= 1e-2 * (1.0 + x.abs())),
            PlusInf => prop_assert!(farther > far && far > f.quotient(0, 1e6)),
            MinusInf => prop_assert!(farther < far && far < f.quotient(0, 1e6)),
        }
    }

    #[test]
    fn ratio_inf_is_a_lower_bound(f in family(), delta in 0.1..5.0f64) {
        let exact = f.ratio_inf(0, delta);
        let sampled = sampled_ratio_inf(&f, 0, delta);
        prop_assert!(exact <= sampled + 1e-9 * (1.0 + sampled.abs()));
        if exact.is_finite() {
            // The infimum is attained near the sampled minimum, or in the limit at 0.
            let at0 = f.quotient(0, 1e-12 * delta);
            prop_assert!(sampled.min(at0) <= exact + 1e-3 * (1.0 + exact.abs()));
            let ls = lower_slope(&f, delta);
            prop_assert_eq!(ls.c_delta, Some((-exact).max(0.0)));
        }
    }

    #[test]
    fn certified_bounds_hold_on_samples(f in family()) {
        let grid = GridSpec::default();
        let cert = validate_hypotheses(&f, &grid);
        if let (Some(lambda), Some(h)) = (cert.lambda, cert.h.as_ref()) {
            for y in log_grid(1e-6, 1e6, 300) {
                prop_assert!(f.value(0, y) <= h[0] + lambda * y + 1e-9 * (1.0 + y));
            }
        }
        if let Some(c) = cert.c_delta(1.0).and_then(|l| l.c_delta) {
            for y in log_grid(1e-8, 1.0, 200) {
                prop_assert!(f.value(0, y) >= -c * y - 1e-12);
            }
            let (g, _) = shift_delta(&f, 1.0, &cert).unwrap();
            for y in log_grid(1e-8, 1.0, 200) {
                prop_assert!(g.value(0, y) > 0.0);
            }
        }
    }

    #[test]
    fn truncation_properties(f in family(), k in 0.1..20.0f64, n in 0.1..20.0f64, y in 0.0..50.0f64) {
        let t = truncate(&f, k, Some(n));
        let v = t.value(0, y);
        let (plus, minus) = (v.max(0.0), (-v).max(0.0));
        prop_assert!(plus <= k && plus <= k * y + 1e-15);
        prop_assert!(minus <= n);
        // Nondecreasing in k, nonincreasing in n.
        prop_assert!(truncate(&f, 2.0 * k, Some(n)).value(0, y) >= v);
        prop_assert!(truncate(&f, k, Some(2.0 * n)).value(0, y) <= v);
        prop_assert!(truncate(&f, k, None).value(0, y) <= v);
        // Agrees with f once both cuts are inactive.
        let fy = f.value(0, y);
        if fy >= 0.0 && fy <= k.min(k * y) || fy < 0.0 && -fy <= n {
            prop_assert_eq!(v, fy);
        }
    }

    #[test]
    fn conjugation_rescales(f in family(), phi in 0.05..20.0f64, y in 0.0..10.0f64) {
        let g = f.conjugated(&[phi]).unwrap();
        let want = f.value(0, phi * y) / phi;
        prop_assert!((g.value(0, y) - want).abs() <= 1e-12 * (1.0 + want.abs()));
        prop_assert_eq!(g.slopes(), f.slopes());
    }
}
