//! Random instances for property suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::nonlinearity::Nonlinearity;
use crate::state_model::GeneratorModel;

/// Off-diagonal rates on a directed cycle (so the graph is strongly
/// connected) plus random extra edges with probability `density`.
pub fn random_rates<R: Rng>(rng: &mut R, n: usize, density: f64) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let on_cycle = j == (i + 1) % n;
            if on_cycle || rng.random::<f64>() < density {
                l[(i, j)] = rng.random_range(0.1..1.0);
            }
        }
    }
    l
}

fn with_diagonal(mut l: DMatrix<f64>, offsets: &[f64]) -> DMatrix<f64> {
    for i in 0..l.nrows() {
        let off: f64 = l.row(i).sum() - l[(i, i)];
        l[(i, i)] = -off + offsets[i];
    }
    l
}

/// Irreducible sub-Markovian generator with killing rates drawn from
/// `killing` on every state, so `s(L) <= -killing.start`.
pub fn random_sub_markovian<R: Rng>(
    rng: &mut R,
    n: usize,
    density: f64,
    killing: std::ops::Range<f64>,
) -> GeneratorModel {
    let rates = random_rates(rng, n, density);
    let offsets: Vec<f64> = (0..n).map(|_| -rng.random_range(killing.clone())).collect();
    GeneratorModel::from_matrix(with_diagonal(rates, &offsets)).expect("valid by construction")
}

/// Irreducible generator with at least one positive row sum.
pub fn random_non_sub_markovian<R: Rng>(rng: &mut R, n: usize, density: f64) -> GeneratorModel {
    let rates = random_rates(rng, n, density);
    let mut offsets: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.5)).collect();
    let hot = rng.random_range(0..n);
    offsets[hot] = rng.random_range(0.2..1.0);
    GeneratorModel::from_matrix(with_diagonal(rates, &offsets)).expect("valid by construction")
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize, range: std::ops::Range<f64>) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(range.clone()))
}

/// Logistic `mu y - beta y^2` with `mu_i > -s(L)` on every state, so the
/// criterion holds and `f(y)/y` is strictly decreasing.
pub fn random_logistic<R: Rng>(rng: &mut R, model: &GeneratorModel) -> Nonlinearity {
    let base = (-model.spectral_bound).max(0.0);
    let mu = (0..model.n()).map(|_| base + rng.random_range(0.5..3.0)).collect();
    let beta = (0..model.n()).map(|_| rng.random_range(0.5..2.0)).collect();
    Nonlinearity::logistic(mu, beta).expect("positive coefficients")
}

/// A random member of a strictly-decreasing-quotient family for which the
/// criterion holds: logistic, or `b y^q - c y` with `q < 1`.
pub fn random_decreasing_quotient<R: Rng>(rng: &mut R, model: &GeneratorModel) -> Nonlinearity {
    if rng.random::<bool>() {
        random_logistic(rng, model)
    } else {
        let q = rng.random_range(0.3..0.8);
        let c = model.spectral_bound.max(0.0) + rng.random_range(0.1..1.0);
        let b = rng.random_range(0.5..2.0);
        Nonlinearity::scaled_power(model.n(), b, q, c).expect("valid coefficients")
    }
}
