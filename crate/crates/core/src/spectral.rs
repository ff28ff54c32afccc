//! Principal eigenpairs, potential-perturbed eigenvalues and the limit
//! eigenvalues entering the existence criterion.
//!
//! Convention: `lambda1(a) = -s(L + diag(a))`, the principal eigenvalue of
//! `-L - diag(a)`. Larger potentials give smaller eigenvalues.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extended::{ExtendedReal, Potential};
use crate::linalg;
use crate::state_model::GeneratorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Primal,
    Dual,
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    /// `lambda1(a)` for the potential used.
    pub eigenvalue: f64,
    /// Strictly positive, unit weighted p-norm.
    pub eigenvector: DVector<f64>,
    pub side: Side,
    pub p: f64,
    /// `max |(-L - diag(a)) v - lambda v|`.
    pub residual: f64,
}

fn check_potential(model: &GeneratorModel, a: &[f64]) -> Result<()> {
    if a.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: a.len(),
        });
    }
    Ok(())
}

pub fn principal_eigenpair(model: &GeneratorModel, a: &[f64], side: Side) -> Result<EigenPair> {
    principal_eigenpair_from(model, a, side, None)
}

/// As [`principal_eigenpair`] with an explicit positive starting vector.
pub fn principal_eigenpair_from(
    model: &GeneratorModel,
    a: &[f64],
    side: Side,
    start: Option<&DVector<f64>>,
) -> Result<EigenPair> {
    model.require_irreducible()?;
    check_potential(model, a)?;
    let base = match side {
        Side::Primal => model.l.clone(),
        Side::Dual => model.adjoint(),
    };
    let m = linalg::plus_diag(&base, a);
    let r = linalg::perron(&m, start)?;
    let mut v = r.vector;
    let norm = model.space.norm(&v);
    v /= norm;
    let residual = (&m * &v - &v * r.value).amax();
    Ok(EigenPair {
        eigenvalue: -r.value,
        eigenvector: v,
        side,
        p: model.space.p,
        residual,
    })
}

/// `-s(L + diag(a))`.
pub fn lambda1(model: &GeneratorModel, a: &[f64]) -> Result<f64> {
    model.require_irreducible()?;
    check_potential(model, a)?;
    Ok(-linalg::perron(&linalg::plus_diag(&model.l, a), None)?.value)
}

/// Truncation schedule and stopping rules for the limit eigenvalues.
#[derive(Debug, Clone, Copy)]
pub struct LimitOptions {
    pub k0: f64,
    pub k_max: f64,
    pub diff_tol: f64,
    pub sign_margin: f64,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self {
            k0: 1.0,
            k_max: (1u64 << 20) as f64,
            diff_tol: 1e-9,
            sign_margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub k: f64,
    #[serde(with = "crate::extended::wire")]
    pub lambda1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitResult {
    pub value: ExtendedReal,
    pub trace: Vec<TracePoint>,
    /// Truncation level at which the sign was certified, if any.
    pub sign_certified_at: Option<f64>,
    /// Whether the trace was monotone in the expected direction.
    pub monotone: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    /// `a ∧ k`: nonincreasing in `k`.
    Zero,
    /// `a ∨ (-k)`: nondecreasing in `k`.
    Infinity,
}

/// Exact limit of the truncation sequence.
///
/// Entries that truncation never touches (`+inf` for `a ∧ k`, `-inf` for
/// `a ∨ (-k)`) decide the limit: the former drives it to `-inf`, the latter
/// decouples the state so the limit is the bound of the principal submatrix on
/// the remaining states.
fn exact_limit(model: &GeneratorModel, a: &Potential) -> Result<ExtendedReal> {
    if a.values.iter().any(|v| *v == ExtendedReal::PlusInf) {
        return Ok(ExtendedReal::MinusInf);
    }
    let finite: Vec<usize> = (0..a.len()).filter(|&i| a.values[i].is_finite()).collect();
    if finite.is_empty() {
        return Ok(ExtendedReal::PlusInf);
    }
    let d: Vec<f64> = finite.iter().map(|&i| a.values[i].finite().unwrap()).collect();
    if finite.len() == a.len() {
        return Ok(ExtendedReal::Finite(lambda1(model, &d)?));
    }
    let sub = linalg::principal_submatrix(&model.l, &finite);
    let s = linalg::metzler_spectral_bound(&linalg::plus_diag(&sub, &d))?;
    Ok(ExtendedReal::Finite(-s))
}

fn limit(
    model: &GeneratorModel,
    a: &Potential,
    dir: Direction,
    opts: &LimitOptions,
) -> Result<LimitResult> {
    model.require_irreducible()?;
    if a.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: a.len(),
        });
    }
    let exact = exact_limit(model, a)?;
    let mut trace = Vec::new();
    let mut certified = None;
    let mut monotone = true;
    let mut k = opts.k0;
    while k <= opts.k_max {
        let ak = match dir {
            Direction::Zero => a.truncate_above(k),
            Direction::Infinity => a.truncate_below(k),
        };
        let v = lambda1(model, &ak)?;
        if let Some(prev) = trace.last().map(|t: &TracePoint| t.lambda1) {
            let slack = 1e-10 * (1.0 + v.abs());
            monotone &= match dir {
                Direction::Zero => v <= prev + slack,
                Direction::Infinity => v >= prev - slack,
            };
        }
        trace.push(TracePoint { k, lambda1: v });
        let sign_known = match dir {
            Direction::Zero => v < -opts.sign_margin,
            Direction::Infinity => v > opts.sign_margin,
        };
        if sign_known {
            certified = Some(k);
            break;
        }
        let n = trace.len();
        if n >= 2 && (trace[n - 1].lambda1 - trace[n - 2].lambda1).abs() < opts.diff_tol {
            break;
        }
        if let ExtendedReal::Finite(x) = exact {
            if (v - x).abs() < opts.diff_tol {
                break;
            }
        }
        k *= 2.0;
    }
    Ok(LimitResult {
        value: exact,
        trace,
        sign_certified_at: certified,
        monotone,
    })
}

/// `lim_k lambda1(a0 ∧ k)`.
pub fn lambda1_limit_zero(model: &GeneratorModel, a0: &Potential) -> Result<LimitResult> {
    lambda1_limit_zero_with(model, a0, &LimitOptions::default())
}

pub fn lambda1_limit_zero_with(
    model: &GeneratorModel,
    a0: &Potential,
    opts: &LimitOptions,
) -> Result<LimitResult> {
    limit(model, a0, Direction::Zero, opts)
}

/// `lim_k lambda1(a_inf ∨ (-k))`.
pub fn lambda1_limit_infinity(model: &GeneratorModel, ainf: &Potential) -> Result<LimitResult> {
    lambda1_limit_infinity_with(model, ainf, &LimitOptions::default())
}

pub fn lambda1_limit_infinity_with(
    model: &GeneratorModel,
    ainf: &Potential,
    opts: &LimitOptions,
) -> Result<LimitResult> {
    limit(model, ainf, Direction::Infinity, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub lambda1_a0: ExtendedReal,
    pub lambda1_ainf: ExtendedReal,
    pub satisfied: bool,
    pub trace_a0: Vec<TracePoint>,
    pub trace_ainf: Vec<TracePoint>,
}

/// Evaluates `lambda1(a0) < 0 < lambda1(a_inf)`.
pub fn criterion(model: &GeneratorModel, a0: &Potential, ainf: &Potential) -> Result<Criterion> {
    let z = lambda1_limit_zero(model, a0)?;
    let i = lambda1_limit_infinity(model, ainf)?;
    Ok(Criterion {
        satisfied: z.value.is_negative() && i.value.is_positive(),
        lambda1_a0: z.value,
        lambda1_ainf: i.value,
        trace_a0: z.trace,
        trace_ainf: i.trace,
    })
}

/// Spectral bound of `L - diag(v)` for an arbitrary (possibly reducible) model.
pub fn perturbed_bound(l: &DMatrix<f64>, v: &[f64]) -> Result<f64> {
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    linalg::metzler_spectral_bound(&linalg::plus_diag(l, &neg))
}
