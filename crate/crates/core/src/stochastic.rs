//! Monte Carlo oracle: a killed continuous-time Markov chain simulated by
//! exact jump-hold sampling.
//!
//! Every path draws from its own ChaCha8 stream keyed by `(seed, path
//! index)`, and batch sums are reduced in path order, so estimates do not
//! depend on the thread count.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state_model::{row_sums_nonpositive, GeneratorModel};

/// Marker for the cemetery state.
pub const CEMETERY: usize = usize::MAX;

/// Minimum number of batches behind a standard error.
pub const MIN_BATCHES: usize = 30;
pub const DEFAULT_BATCHES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    /// Visited states; killed paths end with [`CEMETERY`].
    pub states: Vec<usize>,
    /// Jump epochs, one fewer than `states`.
    pub jump_times: Vec<f64>,
    pub killed: bool,
    /// Killing time; `None` when the path survives the horizon.
    pub lifetime: Option<f64>,
    pub horizon: f64,
}

impl PathSample {
    /// State occupied at time `t`, `None` once killed.
    pub fn state_at(&self, t: f64) -> Option<usize> {
        let j = self.jump_times.partition_point(|&s| s <= t);
        let s = self.states[j];
        (s != CEMETERY).then_some(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub batches: usize,
    /// Paths still alive at the horizon.
    pub truncated_paths: usize,
    /// Bound on the mass lost to the horizon, already added to `std_error`.
    pub truncation_bound: f64,
}

/// Per-state jump tables for the embedded chain.
#[derive(Debug, Clone)]
struct Chain {
    rate: Vec<f64>,
    /// Cumulative jump probabilities; the remainder up to one is killing.
    cumulative: Vec<Vec<(usize, f64)>>,
}

impl Chain {
    fn new(model: &GeneratorModel) -> Result<Self> {
        if let Some((row, sum)) = row_sums_nonpositive(&model.l) {
            return Err(Error::NotSubMarkovian { row, sum });
        }
        let n = model.n();
        let mut rate = Vec::with_capacity(n);
        let mut cumulative = Vec::with_capacity(n);
        for i in 0..n {
            let q = -model.l[(i, i)];
            let mut acc = 0.0;
            let mut row = Vec::new();
            if q > 0.0 {
                for j in 0..n {
                    let r = model.l[(i, j)];
                    if j != i && r > 0.0 {
                        acc += r / q;
                        row.push((j, acc));
                    }
                }
            }
            rate.push(q.max(0.0));
            cumulative.push(row);
        }
        Ok(Self { rate, cumulative })
    }

    /// Holding time at `i` (infinite for absorbing states) and the next state.
    fn step(&self, i: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
        let q = self.rate[i];
        if q <= 0.0 {
            return (f64::INFINITY, i);
        }
        let hold: f64 = rng.sample::<f64, _>(Exp1) / q;
        let x: f64 = rng.random();
        let next = self.cumulative[i]
            .iter()
            .find(|(_, c)| x < *c)
            .map_or(CEMETERY, |(j, _)| *j);
        (hold, next)
    }

    /// Walks the path up to `horizon`, calling `visit(state, t0, t1)` for
    /// every holding interval.
    fn walk(
        &self,
        start: usize,
        horizon: f64,
        rng: &mut ChaCha8Rng,
        mut visit: impl FnMut(usize, f64, f64),
    ) -> (bool, Option<f64>) {
        let mut t = 0.0;
        let mut i = start;
        loop {
            let (hold, next) = self.step(i, rng);
            let end = t + hold;
            if end >= horizon {
                visit(i, t, horizon);
                return (false, None);
            }
            visit(i, t, end);
            if next == CEMETERY {
                return (true, Some(end));
            }
            t = end;
            i = next;
        }
    }
}

pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

fn check_start(model: &GeneratorModel, start: usize) -> Result<()> {
    if start >= model.n() {
        return Err(Error::StateOutOfRange {
            index: start,
            n: model.n(),
        });
    }
    Ok(())
}

/// Default horizon `50 / (alpha - s(L))`, infinite when that gap is not
/// positive.
pub fn default_horizon(model: &GeneratorModel, alpha: f64) -> f64 {
    let gap = alpha - model.spectral_bound;
    if gap > 0.0 {
        50.0 / gap
    } else {
        f64::INFINITY
    }
}

/// One path from `start`, using stream 0 of `seed`.
pub fn sample_path(model: &GeneratorModel, start: usize, horizon: f64, seed: u64) -> Result<PathSample> {
    sample_path_indexed(model, start, horizon, seed, 0)
}

pub fn sample_path_indexed(
    model: &GeneratorModel,
    start: usize,
    horizon: f64,
    seed: u64,
    path_index: u64,
) -> Result<PathSample> {
    check_start(model, start)?;
    let chain = Chain::new(model)?;
    let mut rng = path_rng(seed, path_index);
    let mut states = Vec::new();
    let mut jump_times = Vec::new();
    let (killed, lifetime) = chain.walk(start, horizon, &mut rng, |i, _, t1| {
        states.push(i);
        jump_times.push(t1);
    });
    if killed {
        states.push(CEMETERY);
    } else {
        // The last interval ends at the horizon, not at a jump.
        jump_times.pop();
    }
    Ok(PathSample {
        states,
        jump_times,
        killed,
        lifetime,
        horizon,
    })
}

/// Path functionals evaluated in parallel, reduced in path order into
/// equal-size batches.
fn batched<F>(n_paths: usize, seed: u64, per_path: F) -> Result<(f64, f64, usize)>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    if n_paths < MIN_BATCHES {
        return Err(Error::PreconditionUnverified(format!(
            "need at least {MIN_BATCHES} paths, got {n_paths}"
        )));
    }
    let batches = DEFAULT_BATCHES.min(n_paths).max(MIN_BATCHES);
    let values: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| per_path(&mut path_rng(seed, p)))
        .collect();
    let mut means = Vec::with_capacity(batches);
    let mut total = 0.0;
    for b in 0..batches {
        let lo = b * n_paths / batches;
        let hi = (b + 1) * n_paths / batches;
        let s: f64 = values[lo..hi].iter().sum();
        total += s;
        means.push(s / (hi - lo) as f64);
    }
    let value = total / n_paths as f64;
    let bm = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((value, (var / batches as f64).sqrt(), batches))
}

/// `E_start ∫_0^ζ e^{-alpha t} g(X_t) dt`, integrated exactly on every
/// holding interval.
pub fn estimate_resolvent_apply(
    model: &GeneratorModel,
    g: &DVector<f64>,
    alpha: f64,
    start: usize,
    n_paths: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    check_start(model, start)?;
    if g.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: g.len(),
        });
    }
    if alpha < 0.0 {
        return Err(Error::NegativeArgument(alpha));
    }
    if alpha == 0.0 && !(model.spectral_bound < 0.0) {
        return Err(Error::SpectralBoundNotNegative(model.spectral_bound));
    }
    let chain = Chain::new(model)?;
    let horizon = default_horizon(model, alpha);
    let alive = std::sync::atomic::AtomicUsize::new(0);
    let (value, se, batches) = batched(n_paths, seed, |rng| {
        let mut acc = 0.0;
        let (killed, _) = chain.walk(start, horizon, rng, |i, t0, t1| {
            acc += g[i]
                * if alpha == 0.0 {
                    t1 - t0
                } else {
                    ((-alpha * t0).exp() - (-alpha * t1).exp()) / alpha
                };
        });
        if !killed {
            alive.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        acc
    })?;
    let truncated_paths = alive.into_inner();
    // A survivor at the horizon still owes e^{-alpha H} (R_alpha g)(X_H),
    // at most e^{-alpha H} ‖g‖ / alpha; without discounting the killing
    // gap stands in for alpha.
    let frac = truncated_paths as f64 / n_paths as f64;
    let truncation_bound = if alpha > 0.0 {
        frac * g.amax() * (-alpha * horizon).exp() / alpha
    } else {
        frac * g.amax() / (alpha - model.spectral_bound)
    };
    Ok(EstimatorResult {
        value,
        std_error: se + truncation_bound,
        n_paths,
        seed,
        batches,
        truncated_paths,
        truncation_bound,
    })
}

/// `E_start[e^{-∫_0^t V(X_s) ds} g(X_t); t < ζ]`.
pub fn estimate_feynman_kac(
    model: &GeneratorModel,
    v: &[f64],
    g: &DVector<f64>,
    t: f64,
    start: usize,
    n_paths: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    check_start(model, start)?;
    if v.len() != model.n() || g.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: v.len().min(g.len()),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::PreconditionUnverified("potential must be finite".into()));
    }
    if t < 0.0 {
        return Err(Error::NegativeArgument(t));
    }
    let chain = Chain::new(model)?;
    let (value, se, batches) = batched(n_paths, seed, |rng| {
        let mut weight = 0.0;
        let mut last = start;
        let (killed, _) = chain.walk(start, t, rng, |i, t0, t1| {
            weight += v[i] * (t1 - t0);
            last = i;
        });
        if killed {
            0.0
        } else {
            (-weight).exp() * g[last]
        }
    })?;
    Ok(EstimatorResult {
        value,
        std_error: se,
        n_paths,
        seed,
        batches,
        truncated_paths: 0,
        truncation_bound: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleProbe {
    pub points: Vec<ProbePoint>,
    pub initial: f64,
    /// Every estimate lies below `v(start) + 3 se` and the sequence is
    /// nonincreasing up to three combined standard errors.
    pub holds: bool,
}

/// `t -> E_start[v(X_t)]` on a sorted grid, with `v = 0` at the cemetery.
pub fn supermartingale_probe(
    model: &GeneratorModel,
    v: &DVector<f64>,
    t_grid: &[f64],
    start: usize,
    n_paths: usize,
    seed: u64,
) -> Result<SupermartingaleProbe> {
    check_start(model, start)?;
    if !crate::calculus::is_supermedian(model, v).verdict {
        return Err(Error::PreconditionUnverified("v is not supermedian".into()));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.iter().any(|t| *t < 0.0) {
        return Err(Error::PreconditionUnverified("time grid must be sorted and nonnegative".into()));
    }
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let r = estimate_feynman_kac(model, &vec![0.0; model.n()], v, t, start, n_paths, seed)?;
        points.push(ProbePoint {
            t,
            estimate: r.value,
            std_error: r.std_error,
        });
    }
    let initial = v[start];
    let bounded = points.iter().all(|p| p.estimate <= initial + 3.0 * p.std_error + 1e-12);
    let decreasing = points
        .windows(2)
        .all(|w| w[1].estimate <= w[0].estimate + 3.0 * (w[0].std_error + w[1].std_error) + 1e-12);
    Ok(SupermartingaleProbe {
        points,
        initial,
        holds: bounded && decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn model(rows: usize, data: &[f64]) -> GeneratorModel {
        GeneratorModel::from_matrix(DMatrix::from_row_slice(rows, rows, data)).unwrap()
    }

    #[test]
    fn path_invariants() {
        let m = model(2, &[-2.0, 1.0, 1.0, -2.0]);
        for p in 0..50 {
            let s = sample_path_indexed(&m, 0, 100.0, 7, p).unwrap();
            assert_eq!(s.states.len(), s.jump_times.len() + 1);
            assert!(s.jump_times.windows(2).all(|w| w[0] < w[1]));
            assert!(s.killed);
            assert_eq!(*s.states.last().unwrap(), CEMETERY);
            assert_eq!(s.lifetime, s.jump_times.last().copied());
        }
    }

    #[test]
    fn conservative_and_absorbing() {
        let m = model(2, &[-1.0, 1.0, 1.0, -1.0]);
        let s = sample_path(&m, 1, 10.0, 3).unwrap();
        assert!(!s.killed && s.lifetime.is_none());
        let a = model(1, &[0.0]);
        let s = sample_path(&a, 0, 10.0, 3).unwrap();
        assert_eq!(s.states, vec![0]);
        assert!(s.lifetime.is_none());
    }

    #[test]
    fn deterministic_streams() {
        let m = model(2, &[-2.0, 1.0, 1.0, -2.0]);
        assert_eq!(sample_path(&m, 0, 50.0, 11).unwrap(), sample_path(&m, 0, 50.0, 11).unwrap());
        let g = DVector::from_vec(vec![3.0, 3.0]);
        let a = estimate_resolvent_apply(&m, &g, 0.0, 0, 1000, 5).unwrap();
        let b = estimate_resolvent_apply(&m, &g, 0.0, 0, 1000, 5).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn zero_source_is_exact() {
        let m = model(2, &[-2.0, 1.0, 1.0, -2.0]);
        let r = estimate_resolvent_apply(&m, &DVector::zeros(2), 0.0, 0, 100, 1).unwrap();
        assert_eq!((r.value, r.std_error), (0.0, 0.0));
    }

    #[test]
    fn not_sub_markovian_rejected() {
        let m = model(2, &[-1.0, 2.0, 1.0, -2.0]);
        assert!(matches!(sample_path(&m, 0, 1.0, 0), Err(Error::NotSubMarkovian { .. })));
    }
}
