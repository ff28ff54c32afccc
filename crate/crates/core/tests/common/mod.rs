//! Oracles that share no code with the library: dense eigenvalues from
//! nalgebra, a Taylor matrix exponential, and equilibria found by time
//! stepping followed by Newton polishing.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Irreducible sub-Markovian generator: a directed cycle of rates plus the
/// extra `rates` (zero entries are dropped), with `killing` on the diagonal.
pub fn generator(n: usize, rates: &[f64], killing: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = rates[i * n + j];
                let cycle = j == (i + 1) % n;
                l[(i, j)] = if cycle { r.max(0.05) } else if r > 0.5 { r } else { 0.0 };
            }
        }
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
        l[(i, i)] = -off - killing[i];
    }
    l
}

/// Strategy for sub-Markovian irreducible generators with `n <= max_n` and
/// killing rates in `killing`.
pub fn sub_markovian(max_n: usize, killing: std::ops::Range<f64>) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_n).prop_flat_map(move |n| {
        (
            proptest::collection::vec(0.0..1.0f64, n * n),
            proptest::collection::vec(killing.clone(), n),
        )
            .prop_map(move |(r, k)| generator(n, &r, &k))
    })
}

/// As [`sub_markovian`] but one row may have positive sum.
pub fn any_generator(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_n).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0..1.0f64, n * n),
            proptest::collection::vec(-1.0..1.0f64, n),
        )
            .prop_map(move |(r, k)| generator(n, &r, &k))
    })
}

pub fn vector(n: usize, range: std::ops::Range<f64>) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(range, n).prop_map(DVector::from_vec)
}

/// Largest real part of the spectrum.
pub fn spectral_bound(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `e^{tM}` by scaling and squaring a 40-term Taylor series.
pub fn expm(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let a = m * t;
    let norm = a.abs().column_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let n = m.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..40 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// `(alpha - L)^{-1}` by Gauss-Jordan on the dense matrix.
pub fn resolvent(l: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let n = l.nrows();
    (DMatrix::identity(n, n) * alpha - l).try_inverse().expect("invertible")
}

/// Positive equilibrium of `u' = Lu + f(u)`: explicit Euler from `u0` until
/// the residual is small, then Newton with a difference Jacobian.
pub fn equilibrium(l: &DMatrix<f64>, f: &dyn Fn(usize, f64) -> f64, u0: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let residual = |u: &DVector<f64>| l * u + DVector::from_fn(n, |i, _| f(i, u[i]));
    let dt = 0.2 / (1.0 + l.abs().column_sum().max());
    let mut u = u0.clone();
    for _ in 0..2_000_000 {
        let r = residual(&u);
        if r.amax() < 1e-7 {
            break;
        }
        u += r * dt;
        u.apply(|x| *x = x.max(1e-300));
    }
    for _ in 0..50 {
        let r = residual(&u);
        if r.amax() < 1e-14 {
            break;
        }
        let mut jac = l.clone();
        for i in 0..n {
            let h = 1e-7 * (1.0 + u[i].abs());
            jac[(i, i)] += (f(i, u[i] + h) - f(i, u[i] - h)) / (2.0 * h);
        }
        let step = jac.lu().solve(&r).expect("nonsingular Jacobian");
        u -= step;
    }
    u
}
