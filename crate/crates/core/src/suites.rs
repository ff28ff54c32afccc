//! Randomized property suites behind `verify`. Every trial draws from its own
//! seeded stream, so results do not depend on scheduling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{self, ConcaveMap, ConvexMap};
use crate::doob;
use crate::error::{Error, Result};
use crate::feynman_kac::{self, PerturbedOperator};
use crate::nonlinearity::Nonlinearity;
use crate::random;
use crate::solver::{self, SolveOptions, Status};
use crate::spectral::{self, Side};
use crate::state_model::{semigroup_of, GeneratorModel};
use crate::stochastic::{self, path_rng};

/// Deliberate defects for exercising the failure path of the suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Negates the perturbed resolvent before its Perron radius is taken.
    FlipResolventSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSizes {
    pub kato: usize,
    pub radius: usize,
    pub monotonicity: usize,
    pub calculus: usize,
    pub orderings: usize,
    pub doob: usize,
    pub uniqueness: usize,
    pub oracle_runs: usize,
    pub oracle_paths: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self {
            kato: 200,
            radius: 100,
            monotonicity: 100,
            calculus: 100,
            orderings: 5,
            doob: 20,
            uniqueness: 20,
            oracle_runs: 20,
            oracle_paths: 20_000,
        }
    }
}

impl SuiteSizes {
    /// The sizes of the acceptance run.
    pub fn full() -> Self {
        Self {
            kato: 1000,
            radius: 500,
            monotonicity: 500,
            calculus: 500,
            orderings: 20,
            doob: 100,
            uniqueness: 100,
            oracle_runs: 100,
            oracle_paths: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub trials: usize,
    pub passed: usize,
    /// Trials required to pass.
    pub required: usize,
    /// Worst finite value of the suite metric over all trials.
    pub worst: Option<f64>,
    pub threshold: f64,
    /// Up to five failing trials.
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.passed >= self.required
    }
}

/// Outcome of one trial: pass flag, metric, and a note when it fails.
type Trial = (bool, f64, Option<String>);

/// Stream for trial `t` of the named suite; each suite gets its own stream
/// family so suites do not share draws.
pub fn trial_rng(name: &str, seed: u64, t: u64) -> ChaCha8Rng {
    let tag = name.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    path_rng(seed ^ tag, t)
}

fn run_trials<F>(name: &str, seed: u64, trials: usize, threshold: f64, worst_is_max: bool, f: F) -> SuiteResult
where
    F: Fn(&mut ChaCha8Rng) -> Result<Trial> + Sync,
{
    let results: Vec<Trial> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(name, seed, t);
            f(&mut rng).unwrap_or_else(|e| (false, f64::NAN, Some(format!("error: {e}"))))
        })
        .collect();
    let mut worst = if worst_is_max { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut passed = 0;
    let mut failures = Vec::new();
    for (t, (ok, metric, note)) in results.into_iter().enumerate() {
        if ok {
            passed += 1;
        } else if failures.len() < 5 {
            failures.push(format!("trial {t}: {}", note.unwrap_or_default()));
        }
        if metric.is_nan() {
            continue;
        }
        worst = if worst_is_max { worst.max(metric) } else { worst.min(metric) };
    }
    SuiteResult {
        name: name.to_string(),
        trials,
        passed,
        required: trials,
        worst: worst.is_finite().then_some(worst),
        threshold,
        failures,
    }
}

fn small_model(rng: &mut ChaCha8Rng, max_n: usize) -> GeneratorModel {
    let n = rng.random_range(1..=max_n);
    let density = rng.random_range(0.0..0.6);
    random::random_sub_markovian(rng, n, density, 0.1..1.0)
}

fn any_irreducible(rng: &mut ChaCha8Rng, max_n: usize) -> GeneratorModel {
    if rng.random::<bool>() {
        small_model(rng, max_n)
    } else {
        let n = rng.random_range(1..=max_n);
        random::random_non_sub_markovian(rng, n, 0.3)
    }
}

/// A supermedian vector: `R g` for random `g >= 0`, plus a constant.
fn supermedian_vector(rng: &mut ChaCha8Rng, model: &GeneratorModel) -> Result<DVector<f64>> {
    let n = model.n();
    let g = if rng.random_range(0..5) == 0 {
        DVector::zeros(n)
    } else {
        random::random_vector(rng, n, 0.0..2.0)
    };
    let c = if rng.random::<bool>() { rng.random_range(0.0..1.0) } else { 0.0 };
    Ok(model.potential(&g)?.add_scalar(c))
}

pub fn kato_suite(seed: u64, trials: usize) -> SuiteResult {
    run_trials("kato_inequality", seed, trials, calculus::KATO_SLACK, false, |rng| {
        let m = small_model(rng, 20);
        let v = supermedian_vector(rng, &m)?;
        let w = supermedian_vector(rng, &m)?;
        let f = random::random_vector(rng, m.n(), -2.0..2.0);
        let r = calculus::kato_check(&m, &v, &w, &f)?;
        Ok((r.holds, r.min_slack, Some(format!("min slack {:e}", r.min_slack))))
    })
}

pub const RADIUS_TOL: f64 = 1e-9;

pub fn radius_suite(seed: u64, trials: usize, fault: Option<Fault>) -> SuiteResult {
    run_trials("spectral_radius_identity", seed, trials, RADIUS_TOL, true, |rng| {
        let m = any_irreducible(rng, 20);
        let v: Vec<f64> = (0..m.n()).map(|_| rng.random_range(-1.0..2.0)).collect();
        let op = PerturbedOperator::from_values(&m, &v)?;
        let alpha = op.spectral_bound + rng.random_range(0.1..3.0);
        let gap = match fault {
            Some(Fault::FlipResolventSign) => {
                let g = -feynman_kac::perturbed_resolvent(&op, alpha)?;
                let lhs = feynman_kac::perron_radius_by_squaring(&g);
                (lhs * (alpha - op.spectral_bound) - 1.0).abs()
            }
            None => feynman_kac::spectral_radius_identity_check(&op, alpha)?.relative_gap,
        };
        let ok = gap <= RADIUS_TOL;
        Ok((ok, gap, Some(format!("relative gap {gap:e}"))))
    })
}

pub fn monotonicity_suite(seed: u64, trials: usize) -> SuiteResult {
    run_trials("potential_strict_monotonicity", seed, trials, 1e-12, false, |rng| {
        let m = any_irreducible(rng, 20);
        let n = m.n();
        let v1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
        let mut v2 = v1.clone();
        let bumped = rng.random_range(0..n);
        for (i, x) in v2.iter_mut().enumerate() {
            if i == bumped || rng.random::<f64>() < 0.3 {
                *x += rng.random_range(1e-3..1.0);
            }
        }
        let c = feynman_kac::potential_monotonicity_check(&m, &v1, &v2)?;
        Ok((c.holds, c.gap, Some(format!("gap {:e}", c.gap))))
    })
}

fn random_concave(rng: &mut ChaCha8Rng) -> ConcaveMap {
    match rng.random_range(0..6) {
        0 => ConcaveMap::Identity,
        1 => ConcaveMap::Min { c: rng.random_range(0.0..3.0) },
        2 => ConcaveMap::Power { q: rng.random_range(0.05..1.0) },
        3 => ConcaveMap::Log1p,
        4 => ConcaveMap::Affine {
            a: rng.random_range(0.0..2.0),
            b: rng.random_range(0.0..2.0),
        },
        _ => ConcaveMap::Saturation,
    }
}

fn random_convex(rng: &mut ChaCha8Rng) -> ConvexMap {
    match rng.random_range(0..6) {
        0 => ConvexMap::Affine {
            a: rng.random_range(-2.0..2.0),
            b: rng.random_range(-2.0..2.0),
        },
        1 => ConvexMap::Square,
        2 => ConvexMap::Huber { m: rng.random_range(0.1..3.0) },
        3 => ConvexMap::ExpDecay,
        4 => ConvexMap::Reciprocal { n: rng.random_range(1.0..10.0) },
        _ => {
            let k = rng.random_range(2..8);
            let mut slopes: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let knots: Vec<f64> = (0..k).map(|j| j as f64 * 0.7).collect();
            let mut values = vec![rng.random_range(-1.0..1.0)];
            for j in 1..k {
                // Secant between the neighbouring derivatives keeps the data convex.
                let s = 0.5 * (slopes[j - 1] + slopes[j]);
                values.push(values[j - 1] + s * (knots[j] - knots[j - 1]));
            }
            ConvexMap::Knots {
                knots,
                values,
                derivatives: slopes,
            }
        }
    }
}

/// Concave images, the convexity identity, and agreement of the two
/// supermedian tests on supermedian and random vectors.
pub fn calculus_suites(seed: u64, trials: usize) -> Vec<SuiteResult> {
    let concave = run_trials("concave_images", seed, trials, 0.0, true, |rng| {
        let m = small_model(rng, 20);
        let v = supermedian_vector(rng, &m)?;
        let phi = random_concave(rng);
        let c = calculus::concave_image_check(&m, &v, &phi)?;
        Ok((c.verdict && c.agree(), c.generator_sign, Some(format!("{phi:?}: max Lv {:e}", c.generator_sign))))
    });
    let convex = run_trials("convexity_identity", seed, trials, 0.0, true, |rng| {
        let m = small_model(rng, 20);
        let g = random::random_vector(rng, m.n(), 0.0..2.0);
        let phi = random_convex(rng);
        let c = calculus::convexity_identity_defect(&m, &g, &phi)?;
        Ok((c.verdict && c.agree(), c.generator_sign, Some(format!("{phi:?}: max Lv {:e}", c.generator_sign))))
    });
    let agreement = run_trials("supermedian_test_agreement", seed, trials, 0.0, true, |rng| {
        let m = any_irreducible(rng, 20);
        let v = if rng.random::<bool>() && m.spectral_bound < 0.0 {
            supermedian_vector(rng, &m)?
        } else {
            random::random_vector(rng, m.n(), -0.2..2.0)
        };
        let c = calculus::is_supermedian(&m, &v);
        let note = format!("sign {} vs resolvent {}", c.verdict, c.resolvent_verdict);
        Ok((c.agree(), if c.agree() { 0.0 } else { 1.0 }, Some(note)))
    });
    vec![concave, convex, agreement]
}

pub const ORDERING_TOL: f64 = 1e-9;

/// Largest violation of `u_{k,n}` nonincreasing in `n` and `u_k` (and
/// `u_{k,n}` at equal `n`) nondecreasing in `k`.
pub fn ordering_violation(levels: &[solver::LevelRecord]) -> f64 {
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max);
    let mut worst = f64::NEG_INFINITY;
    for w in levels.windows(2) {
        if w[0].k == w[1].k && w[0].n.is_some() {
            worst = worst.max(diff(&w[1].u, &w[0].u));
        }
    }
    for a in levels {
        for b in levels.iter().filter(|b| b.k > a.k && b.n == a.n) {
            worst = worst.max(diff(&a.u, &b.u));
        }
    }
    worst
}

pub fn orderings_suite(seed: u64, trials: usize) -> SuiteResult {
    run_trials("truncation_orderings", seed, trials, ORDERING_TOL, true, |rng| {
        let n = rng.random_range(2..=8);
        let m = if rng.random::<bool>() {
            random::random_sub_markovian(rng, n, 0.4, 0.1..1.0)
        } else {
            random::random_non_sub_markovian(rng, n, 0.4)
        };
        let f = random::random_decreasing_quotient(rng, &m);
        let opts = SolveOptions {
            record_levels: true,
            ..Default::default()
        };
        let r = solver::solve(&m, &f, &opts)?;
        let v = ordering_violation(&r.levels);
        let ok = r.status == Status::Solved && v <= ORDERING_TOL;
        Ok((ok, v, Some(format!("status {:?}, violation {v:e}", r.status))))
    })
}

/// Irreducible model with a positive row sum; its spectral bound may have
/// either sign.
pub fn doob_model(rng: &mut ChaCha8Rng, n: usize) -> GeneratorModel {
    random::random_non_sub_markovian(rng, n, 0.5)
}

pub const ROW_SUM_TOL: f64 = 1e-10;
pub const RESIDUAL_TOL: f64 = 1e-8;

pub fn doob_suite(seed: u64, trials: usize) -> SuiteResult {
    run_trials("doob_round_trip", seed, trials, ROW_SUM_TOL, true, |rng| {
        let n = rng.random_range(2..=8);
        let m = doob_model(rng, n);
        // The conjugation needs a nonpositive bound, as in the pipeline.
        let base = if m.spectral_bound > 0.0 {
            m.shift_to_negative_bound(SolveOptions::default().kappa_margin).shifted
        } else {
            m.clone()
        };
        let d = doob::doob_transform(&base)?;
        let rows = (0..n)
            .map(|i| (d.transformed.l.row(i).sum() - base.spectral_bound).abs())
            .fold(0.0, f64::max);
        let f = random::random_logistic(rng, &m);
        let r = solver::solve(&m, &f, &SolveOptions::default())?;
        let ok = r.shifts.doob && r.status == Status::Solved && rows <= ROW_SUM_TOL && r.residual.is_some_and(|x| x <= RESIDUAL_TOL);
        Ok((ok, rows, Some(format!("row sum gap {rows:e}, residual {:?}, doob {}", r.residual, r.shifts.doob))))
    })
}

pub fn uniqueness_suite(seed: u64, trials: usize) -> Vec<SuiteResult> {
    let agree = run_trials("uniqueness_branches", seed, trials, feynman_kac::BRANCH_TOL, true, |rng| {
        let m = any_irreducible(rng, 8);
        let f = random::random_decreasing_quotient(rng, &m);
        let opts = SolveOptions {
            uniqueness: true,
            ..Default::default()
        };
        let r = solver::solve(&m, &f, &opts)?;
        let Some(v) = r.uniqueness else {
            return Ok((false, f64::NAN, Some(format!("status {:?}", r.status))));
        };
        let ok = v.unique && v.branch_gap <= feynman_kac::BRANCH_TOL && v.zero_mode_check <= feynman_kac::ZERO_MODE_TOL;
        Ok((ok, v.branch_gap, Some(format!("gap {:e}, zero mode {:e}", v.branch_gap, v.zero_mode_check))))
    });
    let degenerate = run_trials("uniqueness_degenerate_rejected", seed, trials.min(20), 0.0, true, |rng| {
        let m = any_irreducible(rng, 8);
        let e = spectral::principal_eigenpair(&m, &vec![0.0; m.n()], Side::Primal)?;
        let f = Nonlinearity::linear(m.n(), e.eigenvalue)?;
        let c = rng.random_range(0.1..2.0);
        let cands = [&e.eigenvector * c, &e.eigenvector * (2.0 * c)];
        let rejected = matches!(
            feynman_kac::uniqueness_check(&m, &f, &cands, &SolveOptions::default()),
            Err(Error::MonotonicityNotStrict { .. })
        );
        Ok((rejected, if rejected { 0.0 } else { 1.0 }, Some("not rejected".into())))
    });
    vec![agree, degenerate]
}

/// `|estimate - exact| / std_error` for a resolvent and a Feynman-Kac
/// estimate on one random model.
pub fn oracle_trial(rng: &mut ChaCha8Rng, paths: usize, seed: u64) -> Result<(f64, f64)> {
    let n = rng.random_range(1..=10);
    let m = random::random_sub_markovian(rng, n, 0.3, 0.5..1.5);
    let start = rng.random_range(0..n);
    let g = random::random_vector(rng, n, 0.0..2.0);
    let alpha = if rng.random::<bool>() { 0.0 } else { rng.random_range(0.1..2.0) };
    let exact = m.resolvent_apply(alpha, &g)?[start];
    let est = stochastic::estimate_resolvent_apply(&m, &g, alpha, start, paths, seed)?;
    let z_res = (est.value - exact).abs() / est.std_error.max(f64::MIN_POSITIVE);

    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..2.0)).collect();
    let t = rng.random_range(0.1..2.0);
    let exact = (feynman_kac_matrix(&m, &v, t) * &g)[start];
    let est = stochastic::estimate_feynman_kac(&m, &v, &g, t, start, paths, seed.wrapping_add(1))?;
    let z_fk = (est.value - exact).abs() / est.std_error.max(f64::MIN_POSITIVE);
    Ok((z_res, z_fk))
}

/// Two suites (resolvent, Feynman-Kac) passing when at least 99% of runs
/// land within three standard errors.
pub fn oracle_suites(seed: u64, runs: usize, paths: usize) -> Vec<SuiteResult> {
    let zs: Vec<Result<(f64, f64)>> = (0..runs as u64)
        .map(|r| {
            let mut rng = path_rng(seed ^ 0x0A4C1E, r);
            oracle_trial(&mut rng, paths, seed.wrapping_mul(31).wrapping_add(2 * r))
        })
        .collect();
    let required = (runs * 99).div_ceil(100);
    let build = |name: &str, pick: fn(&(f64, f64)) -> f64| {
        let mut passed = 0;
        let mut worst: f64 = 0.0;
        let mut failures = Vec::new();
        for (r, z) in zs.iter().enumerate() {
            match z {
                Ok(z) => {
                    let z = pick(z);
                    worst = worst.max(z);
                    if z <= 3.0 {
                        passed += 1;
                    } else if failures.len() < 5 {
                        failures.push(format!("run {r}: {z:.2} standard errors"));
                    }
                }
                Err(e) if failures.len() < 5 => failures.push(format!("run {r}: error: {e}")),
                Err(_) => {}
            }
        }
        SuiteResult {
            name: name.to_string(),
            trials: runs,
            passed,
            required,
            worst: worst.is_finite().then_some(worst),
            threshold: 3.0,
            failures,
        }
    };
    vec![
        build("oracle_resolvent", |z| z.0),
        build("oracle_feynman_kac", |z| z.1),
    ]
}

/// All suites, or the oracle suites alone.
pub fn run_all(seed: u64, sizes: &SuiteSizes, oracle_only: bool, fault: Option<Fault>) -> Vec<SuiteResult> {
    let mut out = Vec::new();
    if !oracle_only {
        out.push(kato_suite(seed, sizes.kato));
        out.push(radius_suite(seed, sizes.radius, fault));
        out.push(monotonicity_suite(seed, sizes.monotonicity));
        out.extend(calculus_suites(seed, sizes.calculus));
        out.push(orderings_suite(seed, sizes.orderings));
        out.push(doob_suite(seed, sizes.doob));
        out.extend(uniqueness_suite(seed, sizes.uniqueness));
    }
    out.extend(oracle_suites(seed, sizes.oracle_runs, sizes.oracle_paths));
    out
}

/// `e^{t(L - diag V)}` by Padé scaling and squaring.
pub fn feynman_kac_matrix(model: &GeneratorModel, v: &[f64], t: f64) -> DMatrix<f64> {
    let lv = crate::linalg::plus_diag(&model.l, &v.iter().map(|x| -x).collect::<Vec<_>>());
    semigroup_of(&lv, false, t)
}
