//! Finite-dimensional supermedian calculus: supermedian tests, concave
//! images, the Kato inequality, the convexity identity, maxima of
//! subsolutions and comparison.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::solver::Truncated;
use crate::state_model::{row_sums_nonpositive, GeneratorModel};

/// Sample points for the resolvent form `alpha R_alpha v <= v`.
pub const RESOLVENT_ALPHAS: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermedianCertificate {
    pub vector: Vec<f64>,
    /// `max_i (Lv)_i`.
    pub generator_sign: f64,
    /// `(alpha, max_i (alpha R_alpha v - v)_i)` for every sampled `alpha`
    /// above the spectral bound.
    pub resolvent_gaps: Vec<(f64, f64)>,
    pub tolerance: f64,
    /// Generator-sign verdict: `v >= -tolerance` and `Lv <= tolerance`.
    pub verdict: bool,
    /// Verdict of the sampled resolvent test alone.
    pub resolvent_verdict: bool,
}

impl SupermedianCertificate {
    pub fn agree(&self) -> bool {
        self.verdict == self.resolvent_verdict
    }
}

/// Slack `1e-10 (1 + ‖v‖_∞)`, scaled by the generator when it is larger
/// than one so that stiff models keep a relative tolerance.
pub fn supermedian_tolerance(model: &GeneratorModel, v: &DVector<f64>) -> f64 {
    1e-10 * (1.0 + v.amax()) * linalg::scale_of(&model.l).max(1.0)
}

pub fn is_supermedian(model: &GeneratorModel, v: &DVector<f64>) -> SupermedianCertificate {
    let tol = supermedian_tolerance(model, v);
    let finite = v.iter().all(|x| x.is_finite());
    let nonneg = finite && v.iter().all(|x| *x >= -tol);
    let lv = &model.l * v;
    let generator_sign = if finite { lv.max() } else { f64::INFINITY };

    // alpha R_alpha v - v = R_alpha L v, so `Lv <= tol` gives gaps below
    // `tol ‖R_alpha 1‖_∞`; rounding in the solve adds a few ulps of `v`.
    let ones = DVector::from_element(model.n(), 1.0);
    let mut alphas: Vec<f64> = RESOLVENT_ALPHAS.to_vec();
    // One sample far beyond the generator scale, where alpha (alpha R_alpha v - v) ≈ Lv.
    alphas.push(1e4 * linalg::scale_of(&model.l).max(1.0));
    let mut gaps = Vec::new();
    let mut resolvent_ok = nonneg;
    for alpha in alphas {
        if !finite || alpha <= model.spectral_bound {
            continue;
        }
        let (Ok(rv), Ok(r1)) = (model.resolvent_apply(alpha, v), model.resolvent_apply(alpha, &ones))
        else {
            continue;
        };
        let gap = (rv * alpha - v).max();
        let allowed = tol * r1.amax() + 1e-13 * (1.0 + v.amax());
        resolvent_ok &= gap <= allowed;
        gaps.push((alpha, gap));
    }
    SupermedianCertificate {
        vector: v.iter().copied().collect(),
        generator_sign,
        resolvent_gaps: gaps,
        tolerance: tol,
        verdict: nonneg && generator_sign <= tol,
        resolvent_verdict: resolvent_ok,
    }
}

fn require_sub_markovian(model: &GeneratorModel) -> Result<()> {
    match row_sums_nonpositive(&model.l) {
        Some((row, sum)) => Err(Error::NotSubMarkovian { row, sum }),
        None => Ok(()),
    }
}

fn require_negative_bound(model: &GeneratorModel) -> Result<()> {
    if model.spectral_bound < 0.0 {
        Ok(())
    } else {
        Err(Error::SpectralBoundNotNegative(model.spectral_bound))
    }
}

fn require_supermedian(model: &GeneratorModel, v: &DVector<f64>, name: &str) -> Result<()> {
    if is_supermedian(model, v).verdict {
        Ok(())
    } else {
        Err(Error::PreconditionUnverified(format!("{name} is not supermedian")))
    }
}

/// Concave nondecreasing maps of `[0, ∞)` with `phi(0) >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConcaveMap {
    Identity,
    /// `min(y, c)`.
    Min { c: f64 },
    /// `y^q`, `0 < q <= 1`.
    Power { q: f64 },
    /// `ln(1 + y)`.
    Log1p,
    /// `a y + b` with `a, b >= 0`.
    Affine { a: f64, b: f64 },
    /// `1 - e^{-y}`.
    Saturation,
}

impl ConcaveMap {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ConcaveMap::Min { c } => c >= 0.0,
            ConcaveMap::Power { q } => q > 0.0 && q <= 1.0,
            ConcaveMap::Affine { a, b } => a >= 0.0 && b >= 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::PreconditionUnverified(format!("{self:?} is not an admissible concave map")))
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        match *self {
            ConcaveMap::Identity => y,
            ConcaveMap::Min { c } => y.min(c),
            ConcaveMap::Power { q } => y.powf(q),
            ConcaveMap::Log1p => y.ln_1p(),
            ConcaveMap::Affine { a, b } => a * y + b,
            ConcaveMap::Saturation => -(-y).exp_m1(),
        }
    }
}

/// Supermedian test of `phi ∘ v` for supermedian `v`; a `false` verdict on
/// valid input would contradict the calculus.
pub fn concave_image_check(
    model: &GeneratorModel,
    v: &DVector<f64>,
    phi: &ConcaveMap,
) -> Result<SupermedianCertificate> {
    require_sub_markovian(model)?;
    phi.validate()?;
    require_supermedian(model, v, "v")?;
    Ok(is_supermedian(model, &v.map(|y| phi.apply(y))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KatoResult {
    pub holds: bool,
    /// `R(1_{u>v} f) - (u - v)⁺`.
    pub slack: Vec<f64>,
    pub min_slack: f64,
    /// States with `u_i = v_i` exactly.
    pub ties: Vec<usize>,
    /// Minimum slack with the tied states moved into the indicator set.
    pub tie_variant_min_slack: Option<f64>,
}

pub const KATO_SLACK: f64 = -1e-12;

/// `(u - v)⁺ <= R(1_{u > v} f)` with `u = Rf - w`.
///
/// At finite dimension ties `u_i = v_i` carry positive mass. When one occurs
/// the inequality is checked for both placements of the tied states and both
/// must hold.
pub fn kato_check(
    model: &GeneratorModel,
    v: &DVector<f64>,
    w: &DVector<f64>,
    f: &DVector<f64>,
) -> Result<KatoResult> {
    require_sub_markovian(model)?;
    require_negative_bound(model)?;
    require_supermedian(model, v, "v")?;
    require_supermedian(model, w, "w")?;
    let u = model.potential(f)? - w;
    let left = (&u - v).map(|x| x.max(0.0));
    let slack_for = |ind: &dyn Fn(usize) -> bool| -> Result<DVector<f64>> {
        let masked = DVector::from_fn(f.len(), |i, _| if ind(i) { f[i] } else { 0.0 });
        Ok(model.potential(&masked)? - &left)
    };
    let slack = slack_for(&|i| u[i] > v[i])?;
    let ties: Vec<usize> = (0..u.len()).filter(|&i| u[i] == v[i]).collect();
    let tie_variant_min_slack = if ties.is_empty() {
        None
    } else {
        Some(slack_for(&|i| u[i] >= v[i])?.min())
    };
    let min_slack = slack.min();
    let holds = min_slack >= KATO_SLACK && tie_variant_min_slack.is_none_or(|s| s >= KATO_SLACK);
    Ok(KatoResult {
        holds,
        slack: slack.iter().copied().collect(),
        min_slack,
        ties,
        tie_variant_min_slack,
    })
}

/// Convex maps of `[0, ∞)`, evaluated with a value and a (sub)derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexMap {
    /// `a y + b`.
    Affine { a: f64, b: f64 },
    /// `y^2`.
    Square,
    /// `y^2` up to `m`, continued linearly with matching slope.
    Huber { m: f64 },
    /// `e^{-y}`.
    ExpDecay,
    /// `1 / (n (1 + y))`.
    Reciprocal { n: f64 },
    /// Value and derivative on knots; evaluated as the upper envelope of
    /// the tangent lines.
    Knots {
        knots: Vec<f64>,
        values: Vec<f64>,
        derivatives: Vec<f64>,
    },
}

impl ConvexMap {
    /// Knot data must be sorted with `d_j <= secant_j <= d_{j+1}`.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::PreconditionUnverified(msg.to_string()));
        match self {
            ConvexMap::Huber { m } if !(*m > 0.0) => bad("huber threshold must be positive"),
            ConvexMap::Reciprocal { n } if !(*n > 0.0) => bad("reciprocal scale must be positive"),
            ConvexMap::Knots {
                knots,
                values,
                derivatives,
            } => {
                if knots.is_empty() || knots.len() != values.len() || knots.len() != derivatives.len() {
                    return bad("knot arrays must be nonempty and of equal length");
                }
                for j in 1..knots.len() {
                    let h = knots[j] - knots[j - 1];
                    if !(h > 0.0) {
                        return bad("knots must be strictly increasing");
                    }
                    let secant = (values[j] - values[j - 1]) / h;
                    let slack = 1e-12 * (1.0 + secant.abs());
                    if derivatives[j - 1] > secant + slack || secant > derivatives[j] + slack {
                        return bad("secant slopes are not monotone");
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        match self {
            ConvexMap::Affine { a, b } => a * y + b,
            ConvexMap::Square => y * y,
            ConvexMap::Huber { m } => {
                if y <= *m {
                    y * y
                } else {
                    2.0 * m * y - m * m
                }
            }
            ConvexMap::ExpDecay => (-y).exp(),
            ConvexMap::Reciprocal { n } => 1.0 / (n * (1.0 + y)),
            ConvexMap::Knots { .. } => self.tangent(y).0,
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        match self {
            ConvexMap::Affine { a, .. } => *a,
            ConvexMap::Square => 2.0 * y,
            ConvexMap::Huber { m } => 2.0 * y.min(*m),
            ConvexMap::ExpDecay => -(-y).exp(),
            ConvexMap::Reciprocal { n } => -1.0 / (n * (1.0 + y) * (1.0 + y)),
            ConvexMap::Knots { .. } => self.tangent(y).1,
        }
    }

    fn tangent(&self, y: f64) -> (f64, f64) {
        let ConvexMap::Knots {
            knots,
            values,
            derivatives,
        } = self
        else {
            unreachable!()
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        for j in 0..knots.len() {
            let t = values[j] + derivatives[j] * (y - knots[j]);
            if t > best.0 {
                best = (t, derivatives[j]);
            }
        }
        best
    }
}

/// `v = phi(0) 1 + R(phi'(u) g) - phi(u)` with `u = Rg`, certified
/// supermedian.
pub fn convexity_identity_defect(
    model: &GeneratorModel,
    g: &DVector<f64>,
    phi: &ConvexMap,
) -> Result<SupermedianCertificate> {
    require_sub_markovian(model)?;
    require_negative_bound(model)?;
    phi.validate()?;
    if g.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::PreconditionUnverified("g must be nonnegative".into()));
    }
    let u = model.potential(g)?;
    let weighted = DVector::from_fn(g.len(), |i, _| phi.derivative(u[i]) * g[i]);
    let v = model.potential(&weighted)? - u.map(|y| phi.value(y)) + DVector::from_element(g.len(), phi.value(0.0));
    Ok(is_supermedian(model, &v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSide {
    Sub,
    Super,
    /// Both sides hold: `w` solves the equation up to tolerance.
    Solution,
    Neither,
}

impl RecordSide {
    pub fn is_sub(self) -> bool {
        matches!(self, RecordSide::Sub | RecordSide::Solution)
    }

    pub fn is_super(self) -> bool {
        matches!(self, RecordSide::Super | RecordSide::Solution)
    }
}

/// `w` against `u = gamma + R g(u)`, with defect `gamma + R g(w) - w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubSupSolutionRecord {
    pub w: Vec<f64>,
    pub gamma: Vec<f64>,
    pub k: f64,
    pub n: Option<f64>,
    pub defect: Vec<f64>,
    pub side: RecordSide,
}

impl SubSupSolutionRecord {
    pub fn new(
        model: &GeneratorModel,
        w: &DVector<f64>,
        gamma: &DVector<f64>,
        g: &Truncated,
    ) -> Result<Self> {
        require_negative_bound(model)?;
        if w.len() != model.n() || gamma.len() != model.n() {
            return Err(Error::DimensionMismatch {
                expected: model.n(),
                found: w.len().min(gamma.len()),
            });
        }
        let gw = DVector::from_fn(w.len(), |i, _| g.value(i, w[i]));
        let defect = gamma + model.potential(&gw)? - w;
        let sub = is_supermedian(model, &defect).verdict;
        let sup = is_supermedian(model, &(-&defect)).verdict;
        let side = match (sub, sup) {
            (true, true) => RecordSide::Solution,
            (true, false) => RecordSide::Sub,
            (false, true) => RecordSide::Super,
            (false, false) => RecordSide::Neither,
        };
        Ok(Self {
            w: w.iter().copied().collect(),
            gamma: gamma.iter().copied().collect(),
            k: g.k,
            n: g.n,
            defect: defect.iter().copied().collect(),
            side,
        })
    }
}

/// Whether `w1 ∨ w2` is again a subsolution.
pub fn max_subsolution_check(
    model: &GeneratorModel,
    g: &Truncated,
    rec1: &SubSupSolutionRecord,
    rec2: &SubSupSolutionRecord,
) -> Result<SubSupSolutionRecord> {
    require_sub_markovian(model)?;
    if rec1.gamma != rec2.gamma || rec1.k != g.k || rec2.k != g.k || rec1.n != g.n || rec2.n != g.n {
        return Err(Error::PreconditionUnverified(
            "records must share gamma and the truncated nonlinearity".into(),
        ));
    }
    if !rec1.side.is_sub() || !rec2.side.is_sub() {
        return Err(Error::PreconditionUnverified("both records must be subsolutions".into()));
    }
    if rec1.w.iter().chain(&rec2.w).any(|x| *x < 0.0) {
        return Err(Error::PreconditionUnverified("subsolutions must be nonnegative".into()));
    }
    let w = DVector::from_fn(rec1.w.len(), |i, _| rec1.w[i].max(rec2.w[i]));
    SubSupSolutionRecord::new(model, &w, &DVector::from_vec(rec1.gamma.clone()), g)
}

/// Problem data `(gamma, g)` and the maximal solution below `psi`.
pub struct OuterProblem<'a> {
    pub gamma: &'a DVector<f64>,
    pub g: Truncated<'a>,
    pub psi: &'a DVector<f64>,
    pub u_max: &'a DVector<f64>,
}

/// Subsolution data `(gamma_low, g_low, u_low)`.
pub struct InnerProblem<'a> {
    pub gamma: &'a DVector<f64>,
    pub g: Truncated<'a>,
    pub u: &'a DVector<f64>,
}

pub const COMPARISON_TOL: f64 = 1e-10;

/// Verifies the comparison hypotheses and returns `u_low <= u_max`.
pub fn comparison_check(model: &GeneratorModel, outer: &OuterProblem, inner: &InnerProblem) -> Result<bool> {
    require_sub_markovian(model)?;
    require_negative_bound(model)?;
    let fail = |msg: &str| Err(Error::PreconditionUnverified(msg.to_string()));
    if !is_supermedian(model, &(outer.gamma - inner.gamma)).verdict {
        return fail("gamma - gamma_low is not supermedian");
    }
    let u = inner.u;
    let scale = 1e-12 * (1.0 + u.amax());
    if (0..u.len()).any(|i| inner.g.value(i, u[i]) > outer.g.value(i, u[i]) + scale) {
        return fail("g_low(u_low) <= g(u_low) fails");
    }
    if (0..u.len()).any(|i| u[i] > outer.psi[i] + scale) {
        return fail("u_low <= psi fails");
    }
    if !SubSupSolutionRecord::new(model, u, inner.gamma, &inner.g)?.side.is_sub() {
        return fail("u_low is not a subsolution of its problem");
    }
    Ok((0..u.len()).all(|i| u[i] <= outer.u_max[i] + COMPARISON_TOL * (1.0 + outer.u_max.amax())))
}
