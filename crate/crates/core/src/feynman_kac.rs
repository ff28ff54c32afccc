//! Potential-perturbed generators `L - diag(V)`: resolvents, the spectral
//! radius identity, strict monotonicity in `V`, zero modes and uniqueness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extended::Potential;
use crate::linalg;
use crate::nonlinearity::{log_grid, Nonlinearity};
use crate::solver::{self, inactive_level, minimal_branch, prepare, Prepared, SolveOptions};
use crate::state_model::GeneratorModel;

#[derive(Debug, Clone)]
pub struct PerturbedOperator {
    pub base: GeneratorModel,
    pub v: Vec<f64>,
    /// `L - diag(V)`.
    pub operator: DMatrix<f64>,
    pub spectral_bound: f64,
}

impl PerturbedOperator {
    pub fn new(base: &GeneratorModel, v: &Potential) -> Result<Self> {
        let v = v.to_finite().ok_or_else(|| {
            Error::PreconditionUnverified("perturbing potential must be finite".into())
        })?;
        Self::from_values(base, &v)
    }

    pub fn from_values(base: &GeneratorModel, v: &[f64]) -> Result<Self> {
        if v.len() != base.n() {
            return Err(Error::DimensionMismatch {
                expected: base.n(),
                found: v.len(),
            });
        }
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let operator = linalg::plus_diag(&base.l, &neg);
        let spectral_bound = linalg::metzler_spectral_bound(&operator)?;
        Ok(Self {
            base: base.clone(),
            v: v.to_vec(),
            operator,
            spectral_bound,
        })
    }
}

/// `(alpha I - L + diag(V))^{-1}`.
pub fn perturbed_resolvent(op: &PerturbedOperator, alpha: f64) -> Result<DMatrix<f64>> {
    crate::state_model::resolvent_of(&op.operator, op.spectral_bound, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusCheck {
    /// Perron radius of the perturbed resolvent.
    pub lhs: f64,
    /// `1 / (alpha - s(L - V))`.
    pub rhs: f64,
    pub gap: f64,
    /// `|lhs (alpha - s(L - V)) - 1|`.
    pub relative_gap: f64,
}

/// Perron radius of a positive matrix by repeated squaring followed by a
/// Collatz-Wielandt bracket; independent of the inverse-iteration routine.
pub fn perron_radius_by_squaring(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let mut b = g / g.max();
    for _ in 0..64 {
        b = &b * &b;
        let m = b.max();
        if !(m > 0.0) {
            break;
        }
        b /= m;
    }
    let x = &b * DVector::from_element(n, 1.0);
    let x = x.map(|v| v.max(f64::MIN_POSITIVE));
    let gx = g * &x;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let r = gx[i] / x[i];
        lo = lo.min(r);
        hi = hi.max(r);
    }
    0.5 * (lo + hi)
}

pub fn spectral_radius_identity_check(op: &PerturbedOperator, alpha: f64) -> Result<RadiusCheck> {
    let g = perturbed_resolvent(op, alpha)?;
    let lhs = perron_radius_by_squaring(&g);
    let rhs = 1.0 / (alpha - op.spectral_bound);
    Ok(RadiusCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        relative_gap: (lhs * (alpha - op.spectral_bound) - 1.0).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub s1: f64,
    pub s2: f64,
    /// `s(L - V1) - s(L - V2)`.
    pub gap: f64,
    pub holds: bool,
}

/// For `V1 <= V2`, `V1 != V2`: `s(L - V1) > s(L - V2)`.
pub fn potential_monotonicity_check(
    model: &GeneratorModel,
    v1: &[f64],
    v2: &[f64],
) -> Result<MonotonicityCheck> {
    if v1.len() != v2.len() || v1.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: v1.len().min(v2.len()),
        });
    }
    if v1.iter().zip(v2).any(|(a, b)| a > b) {
        return Err(Error::PreconditionUnverified("V1 <= V2 fails".into()));
    }
    if v1 == v2 {
        return Err(Error::PreconditionUnverified("V1 and V2 coincide".into()));
    }
    model.require_irreducible()?;
    let s1 = PerturbedOperator::from_values(model, v1)?.spectral_bound;
    let s2 = PerturbedOperator::from_values(model, v2)?.spectral_bound;
    let scale = linalg::scale_of(&model.l) + v2.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(MonotonicityCheck {
        s1,
        s2,
        gap: s1 - s2,
        holds: s1 - s2 > 1e-12 * scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroMode {
    /// `|s(L + diag(f(u) / u))|`.
    pub value: f64,
    /// `(alpha, ‖u - alpha (alpha - L - diag h)^{-1} u‖_∞ / ‖u‖_∞)`.
    pub fixed_point_gaps: Vec<(f64, f64)>,
}

pub fn quotient_potential(f: &Nonlinearity, u: &DVector<f64>) -> Vec<f64> {
    (0..u.len()).map(|i| f.quotient(i, u[i])).collect()
}

pub fn zero_mode_check(model: &GeneratorModel, u: &DVector<f64>, f: &Nonlinearity) -> Result<ZeroMode> {
    if u.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::PreconditionUnverified("u must be strictly positive".into()));
    }
    let h = quotient_potential(f, u);
    let m = linalg::plus_diag(&model.l, &h);
    let s = linalg::metzler_spectral_bound(&m)?;
    let mut gaps = Vec::new();
    for alpha in [1.0, 10.0] {
        let mut a = -m.clone();
        for i in 0..u.len() {
            a[(i, i)] += alpha;
        }
        let gap = match a.lu().solve(u) {
            Some(x) => (u - x * alpha).amax() / u.amax(),
            None => f64::MAX,
        };
        gaps.push((alpha, gap));
    }
    Ok(ZeroMode {
        value: s.abs(),
        fixed_point_gaps: gaps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessVerdict {
    pub unique: bool,
    pub zero_mode_check: f64,
    pub branch_gap: f64,
    /// Comparison potential when two candidates were supplied.
    pub potential_v: Option<Vec<f64>>,
    /// `‖(L - V0) w‖_∞ / ‖w‖_∞`, the defect of `w = -R(V0 w)`.
    pub equation_defect: Option<f64>,
    pub s_l_minus_v0: Option<f64>,
    pub s_l_plus_h1: Option<f64>,
    /// First inequality of the contradiction chain that failed numerically.
    pub broken: Option<String>,
}

pub const BRANCH_TOL: f64 = 1e-8;
pub const ZERO_MODE_TOL: f64 = 1e-7;

/// Requires `y -> f(i, y) / y` strictly decreasing on 64 log-spaced points per
/// state over `[lo, hi]`.
pub fn check_strict_decrease(f: &Nonlinearity, lo: f64, hi: f64) -> Result<()> {
    let ys = log_grid(lo, hi, 64);
    for i in 0..f.n {
        for w in ys.windows(2) {
            let (h0, h1) = (f.quotient(i, w[0]), f.quotient(i, w[1]));
            let diff = h1 - h0;
            if !(diff < -1e-12 * (1.0 + h0.abs())) {
                return Err(Error::MonotonicityNotStrict {
                    state: i,
                    y_lo: w[0],
                    y_hi: w[1],
                    diff,
                });
            }
        }
    }
    Ok(())
}

pub fn uniqueness_check(
    model: &GeneratorModel,
    f: &Nonlinearity,
    candidates: &[DVector<f64>],
    opts: &SolveOptions,
) -> Result<UniquenessVerdict> {
    let lo = candidates.iter().map(|u| u.min()).fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().map(|u| u.max()).fold(0.0, f64::max);
    if candidates.is_empty() || !(lo > 0.0) {
        return Err(Error::PreconditionUnverified(
            "need one or two strictly positive candidates".into(),
        ));
    }
    check_strict_decrease(f, 0.25 * lo, 4.0 * hi)?;
    match candidates {
        [u] => {
            let prep = prepare(model, f, opts)?;
            single_candidate(&prep, u, opts)
        }
        [u1, u2] => two_candidates(model, f, u1, u2),
        _ => Err(Error::PreconditionUnverified(
            "need one or two candidates".into(),
        )),
    }
}

/// As [`uniqueness_check`] but reusing an already prepared problem.
pub fn uniqueness_check_prepared(
    prep: &Prepared,
    candidates: &[DVector<f64>],
    opts: &SolveOptions,
) -> Result<UniquenessVerdict> {
    let lo = candidates.iter().map(|u| u.min()).fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().map(|u| u.max()).fold(0.0, f64::max);
    check_strict_decrease(&prep.f, 0.25 * lo, 4.0 * hi)?;
    match candidates {
        [u] => single_candidate(prep, u, opts),
        [u1, u2] => two_candidates(&prep.model, &prep.f, u1, u2),
        _ => Err(Error::PreconditionUnverified(
            "need one or two candidates".into(),
        )),
    }
}

fn single_candidate(prep: &Prepared, u: &DVector<f64>, opts: &SolveOptions) -> Result<UniquenessVerdict> {
    let v = prep.to_work(u);
    let k = inactive_level(&prep.g, &v);
    let v_min = minimal_branch(prep, k, opts)?.u;
    let u_min = prep.from_work(&v_min);
    let gap = prep.model.space.norm(&(&u_min - u));
    let zm = zero_mode_check(&prep.model, u, &prep.f)?;
    Ok(UniquenessVerdict {
        unique: gap <= BRANCH_TOL && zm.value <= ZERO_MODE_TOL,
        zero_mode_check: zm.value,
        branch_gap: gap,
        potential_v: None,
        equation_defect: None,
        s_l_minus_v0: None,
        s_l_plus_h1: None,
        broken: None,
    })
}

fn two_candidates(
    model: &GeneratorModel,
    f: &Nonlinearity,
    u1: &DVector<f64>,
    u2: &DVector<f64>,
) -> Result<UniquenessVerdict> {
    let w = u1 - u2;
    let gap = model.space.norm(&w);
    let h1 = quotient_potential(f, u1);
    let h2 = quotient_potential(f, u2);
    let zm = zero_mode_check(model, u1, f)?;
    let v: Vec<f64> = (0..w.len())
        .map(|i| {
            if w[i] == 0.0 {
                0.0
            } else {
                -(h1[i] - h2[i]) / w[i] * u2[i]
            }
        })
        .collect();
    let v0: Vec<f64> = (0..w.len()).map(|i| -h1[i] + v[i]).collect();
    let scale = linalg::scale_of(&model.l);
    let defect = if w.amax() > 0.0 {
        let lv0 = linalg::plus_diag(&model.l, &v0.iter().map(|x| -x).collect::<Vec<_>>());
        (lv0 * &w).amax() / (scale * w.amax())
    } else {
        0.0
    };
    let s_lv0 = crate::spectral::perturbed_bound(&model.l, &v0)?;
    let s_lh1 = linalg::metzler_spectral_bound(&linalg::plus_diag(&model.l, &h1))?;
    let tol = 1e-8 * scale;
    let mut broken = None;
    if gap > BRANCH_TOL {
        let chain = [
            ("w = -R(V0 w)", defect <= 1e-8),
            ("0 <= s(L - V0)", s_lv0 >= -tol),
            ("s(L - V0) < s(L + h1)", s_lv0 < s_lh1),
            ("s(L + h1) = 0", s_lh1.abs() <= tol),
        ];
        broken = chain.iter().find(|(_, ok)| !ok).map(|(name, _)| name.to_string());
    }
    // Distinct candidates that pass every link would contradict uniqueness.
    let unique = gap <= BRANCH_TOL || broken.is_some();
    Ok(UniquenessVerdict {
        unique,
        zero_mode_check: zm.value,
        branch_gap: gap,
        potential_v: Some(v),
        equation_defect: Some(defect),
        s_l_minus_v0: Some(s_lv0),
        s_l_plus_h1: Some(s_lh1),
        broken,
    })
}

/// Minimal and maximal branches for one problem, in the original frame.
pub fn extremal_solutions(
    model: &GeneratorModel,
    f: &Nonlinearity,
    opts: &SolveOptions,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let report = solver::solve(model, f, opts)?;
    let u = report.solution().ok_or_else(|| {
        Error::CriterionFailed {
            lambda1_a0: report.criterion.lambda1_a0.to_string(),
            lambda1_ainf: report.criterion.lambda1_ainf.to_string(),
        }
    })?;
    let prep = prepare(model, f, opts)?;
    let k = inactive_level(&prep.g, &prep.to_work(&u));
    let v_min = minimal_branch(&prep, k, opts)?.u;
    Ok((prep.from_work(&v_min), u))
}
