//! Finite state space, measure weights and the generator matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSpace {
    pub n: usize,
    pub weights: Vec<f64>,
    /// Norm exponent, `p >= 1`.
    pub p: f64,
}

impl MeasureSpace {
    pub fn new(weights: Vec<f64>, p: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("need at least one state".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMeasure(format!(
                "weight {} at state {i} is not a positive finite number",
                weights[i]
            )));
        }
        if !(p >= 1.0) {
            return Err(Error::InvalidMeasure(format!("p = {p} must be >= 1")));
        }
        Ok(Self {
            n: weights.len(),
            weights,
            p,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![1.0; n.max(1)], 2.0).expect("uniform weights are valid")
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        linalg::weighted_norm(v, &self.weights, self.p)
    }

    pub fn dot(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        linalg::weighted_dot(u, v, &self.weights)
    }
}

/// A validated generator together with its cached structural flags.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub space: MeasureSpace,
    pub l: DMatrix<f64>,
    pub sub_markovian: bool,
    pub irreducible: bool,
    pub spectral_bound: f64,
}

fn check_shape(l: &DMatrix<f64>, space: &MeasureSpace) -> Result<()> {
    if l.nrows() != l.ncols() {
        return Err(Error::DimensionMismatch {
            expected: l.nrows(),
            found: l.ncols(),
        });
    }
    if l.nrows() != space.n {
        return Err(Error::DimensionMismatch {
            expected: space.n,
            found: l.nrows(),
        });
    }
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse("generator has non-finite entries".into()));
    }
    Ok(())
}

pub fn row_sums_nonpositive(l: &DMatrix<f64>) -> Option<(usize, f64)> {
    let tol = 1e-12 * linalg::scale_of(l);
    (0..l.nrows())
        .map(|i| (i, l.row(i).sum()))
        .find(|&(_, s)| s > tol)
}

/// Validates the standing hypotheses and computes flags.
///
/// Rejects reducible generators; see [`validate_generator_degraded`] for the
/// tagged variant.
pub fn validate_generator(l: DMatrix<f64>, space: MeasureSpace) -> Result<GeneratorModel> {
    let model = validate_generator_degraded(l, space)?;
    if !model.irreducible {
        return Err(Error::NotIrreducible);
    }
    Ok(model)
}

/// Like [`validate_generator`] but accepts reducible generators with
/// `irreducible = false`. Operations that need positivity improvement refuse
/// such models.
pub fn validate_generator_degraded(l: DMatrix<f64>, space: MeasureSpace) -> Result<GeneratorModel> {
    check_shape(&l, &space)?;
    let n = l.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && l[(i, j)] < -linalg::ZERO_THRESHOLD {
                return Err(Error::NegativeOffDiagonal(i, j));
            }
        }
    }
    let irreducible = linalg::is_irreducible(&l);
    let spectral_bound = linalg::metzler_spectral_bound(&l)?;
    let sub_markovian = row_sums_nonpositive(&l).is_none();
    Ok(GeneratorModel {
        space,
        l,
        sub_markovian,
        irreducible,
        spectral_bound,
    })
}

impl GeneratorModel {
    /// Model with uniform weights and `p = 2`.
    pub fn from_matrix(l: DMatrix<f64>) -> Result<Self> {
        let n = l.nrows();
        validate_generator(l, MeasureSpace::uniform(n))
    }

    pub fn n(&self) -> usize {
        self.space.n
    }

    pub fn require_irreducible(&self) -> Result<()> {
        if self.irreducible {
            Ok(())
        } else {
            Err(Error::NotIrreducible)
        }
    }

    /// `(alpha I - L)^{-1}`.
    pub fn resolvent(&self, alpha: f64) -> Result<DMatrix<f64>> {
        resolvent_of(&self.l, self.spectral_bound, alpha)
    }

    /// `R g` with `R = R_0`.
    pub fn potential(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        self.resolvent_apply(0.0, g)
    }

    /// `(alpha I - L)^{-1} g` without forming the inverse.
    pub fn resolvent_apply(&self, alpha: f64, g: &DVector<f64>) -> Result<DVector<f64>> {
        if alpha <= self.spectral_bound {
            return Err(Error::AlphaNotAboveSpectralBound {
                alpha,
                bound: self.spectral_bound,
            });
        }
        let a = alpha_minus(&self.l, alpha);
        linalg::solve(a, g).ok_or(Error::AlphaNotAboveSpectralBound {
            alpha,
            bound: self.spectral_bound,
        })
    }

    /// `e^{tL}`. Panics on negative `t`.
    pub fn semigroup(&self, t: f64) -> DMatrix<f64> {
        assert!(t >= 0.0, "semigroup time must be nonnegative");
        semigroup_of(&self.l, self.sub_markovian, t)
    }

    /// Adjoint with respect to the weighted pairing.
    pub fn adjoint(&self) -> DMatrix<f64> {
        let w = &self.space.weights;
        DMatrix::from_fn(self.n(), self.n(), |i, j| w[j] * self.l[(j, i)] / w[i])
    }

    /// Model for `L + diag(d)` over the same space, flags recomputed.
    pub fn plus_diag(&self, d: &[f64]) -> Result<GeneratorModel> {
        let l = linalg::plus_diag(&self.l, d);
        validate_generator_degraded(l, self.space.clone())
    }

    pub fn shift_to_negative_bound(&self, margin: f64) -> ShiftedProblem {
        assert!(margin > 0.0, "margin must be positive");
        let kappa = (self.spectral_bound + margin).max(0.0);
        let shifted_l = linalg::plus_diag(&self.l, &vec![-kappa; self.n()]);
        let shifted = GeneratorModel {
            space: self.space.clone(),
            sub_markovian: row_sums_nonpositive(&shifted_l).is_none(),
            irreducible: self.irreducible,
            spectral_bound: self.spectral_bound - kappa,
            l: shifted_l.clone(),
        };
        ShiftedProblem {
            base: self.clone(),
            kappa,
            shifted_l,
            shifted,
        }
    }
}

/// `L - kappa I` together with the original model.
#[derive(Debug, Clone)]
pub struct ShiftedProblem {
    pub base: GeneratorModel,
    pub kappa: f64,
    pub shifted_l: DMatrix<f64>,
    /// The shifted generator as a model, spectral bound `s(L) - kappa`.
    pub shifted: GeneratorModel,
}

fn alpha_minus(l: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let mut a = -l.clone();
    for i in 0..l.nrows() {
        a[(i, i)] += alpha;
    }
    a
}

pub(crate) fn resolvent_of(l: &DMatrix<f64>, bound: f64, alpha: f64) -> Result<DMatrix<f64>> {
    if alpha <= bound {
        return Err(Error::AlphaNotAboveSpectralBound { alpha, bound });
    }
    alpha_minus(l, alpha)
        .try_inverse()
        .ok_or(Error::AlphaNotAboveSpectralBound { alpha, bound })
}

/// `e^{tL}` for any square `L`. Sub-Markovian input goes through
/// uniformization so the result is entrywise nonnegative by construction.
pub fn semigroup_of(l: &DMatrix<f64>, sub_markovian: bool, t: f64) -> DMatrix<f64> {
    let n = l.nrows();
    if t == 0.0 {
        return DMatrix::identity(n, n);
    }
    if !sub_markovian {
        return (l * t).exp();
    }
    let rate = (0..n).map(|i| -l[(i, i)]).fold(0.0, f64::max);
    if rate == 0.0 {
        // Sub-Markovian with zero diagonal forces L = 0.
        return DMatrix::identity(n, n);
    }
    let p = DMatrix::identity(n, n) + l / rate;
    let total = t * rate;
    let squarings = total.log2().ceil().max(0.0) as i32;
    let tau = total / 2f64.powi(squarings);

    // e^{-tau} sum_k tau^k P^k / k!, every term nonnegative.
    let mut term = DMatrix::identity(n, n);
    let mut acc = term.clone();
    let mut k = 1.0;
    loop {
        term = (&term * &p) * (tau / k);
        acc += &term;
        if term.amax() < 1e-18 || k > 60.0 {
            break;
        }
        k += 1.0;
    }
    let mut e = acc * (-tau).exp();
    for _ in 0..squarings {
        e = &e * &e;
    }
    e
}
