//! Strictly positive solutions of `-Lu = f(x, u)` by truncation and monotone
//! iteration.
//!
//! The problem is first moved to a working frame: shift by `kappa` so the
//! spectral bound is negative, conjugate by the principal eigenvector when the
//! shifted generator is not sub-Markovian, then shift by `C_delta + eps` so the
//! nonlinearity is positive on `(0, delta]`. In that frame the truncated
//! problems `u = 1/n + R f_{k,n}(u)` are bracketed by `h_n(phi)` from below and
//! `1 + R(k)` from above, and solved by descending monotone iteration.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::doob::{doob_transform, transform_nonlinearity};
use crate::error::{Error, Result};
use crate::linalg;
use crate::nonlinearity::{
    lower_slope, validate_hypotheses, GridSpec, HypothesisCertificate, Nonlinearity, Verdict,
    EPSILON,
};
use crate::spectral::{self, criterion, Criterion, Side};
use crate::state_model::{row_sums_nonpositive, GeneratorModel};

/// `f_{k,n}(i, y) = min{f⁺ ∧ k, k y} - f⁻ ∧ n`; `n = None` drops the lower cut.
#[derive(Debug, Clone, Copy)]
pub struct Truncated<'a> {
    pub f: &'a Nonlinearity,
    pub k: f64,
    pub n: Option<f64>,
}

pub fn truncate(f: &Nonlinearity, k: f64, n: Option<f64>) -> Truncated<'_> {
    Truncated { f, k, n }
}

impl Truncated<'_> {
    #[inline]
    pub fn value(&self, i: usize, y: f64) -> f64 {
        let v = self.f.value(i, y);
        let top = v.max(0.0).min(self.k).min(self.k * y);
        let neg = (-v).max(0.0);
        let bottom = match self.n {
            Some(n) => neg.min(n),
            None => neg,
        };
        top - bottom
    }

    fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| self.value(i, u[i]))
    }
}

/// `h_n(phi)_i = 1 / (n (1 + phi_i))`.
pub fn subsolution_seed(phi1: &DVector<f64>, n: f64) -> DVector<f64> {
    phi1.map(|p| 1.0 / (n * (1.0 + p)))
}

/// `1 + R(k 1)`.
pub fn supersolution_seed(model: &GeneratorModel, k: f64) -> Result<DVector<f64>> {
    if !(model.spectral_bound < 0.0) {
        return Err(Error::SpectralBoundNotNegative(model.spectral_bound));
    }
    let n = model.n();
    let r = model.potential(&DVector::from_element(n, k))?;
    Ok(r.add_scalar(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationParams {
    pub k: f64,
    /// `None` for the untruncated lower part with no `1/n` source.
    pub n: Option<f64>,
    /// Lower bound for the monotonization constant.
    pub mu: f64,
}

impl TruncationParams {
    pub fn gamma(&self) -> f64 {
        self.n.map_or(0.0, |n| 1.0 / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub sub: Vec<f64>,
    pub sup: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub u: DVector<f64>,
    pub iterations: usize,
}

/// Residual slack for the differential sub/supersolution tests.
fn defect_tol(a: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    1e-10 * linalg::scale_of(a) * (1.0 + w.amax())
}

/// `-A w - g(w) + A gamma`, nonnegative for supersolutions and nonpositive for
/// subsolutions of `u = gamma + R g(u)` when `A` is sub-Markovian.
fn defect(a: &DMatrix<f64>, g: &Truncated, gamma: f64, w: &DVector<f64>) -> DVector<f64> {
    let shifted = w.add_scalar(-gamma);
    -(a * shifted) - g.apply(w)
}

pub fn is_supersolution(a: &DMatrix<f64>, g: &Truncated, gamma: f64, w: &DVector<f64>) -> bool {
    let tol = defect_tol(a, w);
    defect(a, g, gamma, w).iter().all(|d| *d >= -tol) && w.iter().all(|x| *x >= 0.0)
}

pub fn is_subsolution(a: &DMatrix<f64>, g: &Truncated, gamma: f64, w: &DVector<f64>) -> bool {
    let tol = defect_tol(a, w);
    defect(a, g, gamma, w).iter().all(|d| *d <= tol) && w.iter().all(|x| *x >= 0.0)
}

struct Iteration<'a> {
    a: &'a DMatrix<f64>,
    g: Truncated<'a>,
    gamma: f64,
    lower: &'a DVector<f64>,
    upper: &'a DVector<f64>,
    descending: bool,
    tol: f64,
    max_iter: usize,
    mu_floor: f64,
}

/// `1.5` times the steepest sampled descent of `g` on `[lo, hi]`, so that
/// `y -> g(y) + mu y` is nondecreasing there.
fn estimate_mu(g: &Truncated, i: usize, lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return 0.0;
    }
    let mut pts: Vec<f64> = (0..=32).map(|j| lo + (hi - lo) * j as f64 / 32.0).collect();
    let llo = lo.max(hi * 1e-8);
    if llo < hi {
        pts.extend(crate::nonlinearity::log_grid(llo, hi, 16));
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let vals: Vec<f64> = pts.iter().map(|&y| g.value(i, y)).collect();
    let mut steepest: f64 = 0.0;
    for j in 1..pts.len() {
        let s = (vals[j] - vals[j - 1]) / (pts[j] - pts[j - 1]);
        steepest = steepest.min(s);
    }
    1.5 * (-steepest)
}

fn factor(a: &DMatrix<f64>, mu: &DVector<f64>) -> LU<f64, Dyn, Dyn> {
    let mut m = -a.clone();
    for i in 0..a.nrows() {
        m[(i, i)] += mu[i];
    }
    m.lu()
}

impl Iteration<'_> {
    fn mu_for(&self, u: &DVector<f64>, boost: f64) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| {
            let (lo, hi) = if self.descending {
                (self.lower[i], u[i])
            } else {
                (u[i], self.upper[i])
            };
            (boost * estimate_mu(&self.g, i, lo, hi)).max(self.mu_floor)
        })
    }

    fn defect_vec(&self, u: &DVector<f64>, source: &DVector<f64>) -> (DVector<f64>, f64) {
        let gu = self.g.apply(u);
        let d = -(self.a * u) - source - &gu;
        let tol = self.tol * (linalg::scale_of(self.a) * (1.0 + u.amax()) + gu.amax());
        (d, tol)
    }

    fn defect_of(&self, u: &DVector<f64>, source: &DVector<f64>) -> (f64, f64) {
        let (d, tol) = self.defect_vec(u, source);
        (d.amax(), tol)
    }

    /// Newton steps on `-A u - g(u) + A gamma = 0` with difference slopes of
    /// `g`. Accepted only if the defect reaches tolerance after a move that
    /// is negligible next to `u`, so it cannot jump to another branch.
    fn polish(&self, start: &DVector<f64>, source: &DVector<f64>) -> Option<DVector<f64>> {
        let n = start.len();
        let mut u = start.clone();
        for _ in 0..8 {
            let gu = self.g.apply(&u);
            let d = -(self.a * &u) - source - &gu;
            let mut jac = -self.a.clone();
            for i in 0..n {
                let h = 1e-7 * (1.0 + u[i].abs());
                let lo = (u[i] - h).max(0.0);
                let hi = u[i] + h;
                jac[(i, i)] -= (self.g.value(i, hi) - self.g.value(i, lo)) / (hi - lo);
            }
            let step = jac.lu().solve(&d)?;
            u -= step;
            if !u.iter().all(|x| x.is_finite()) {
                return None;
            }
            let (dmax, dtol) = self.defect_of(&u, source);
            if dmax <= dtol {
                let moved = (&u - start).amax();
                let inside = (0..n).all(|i| {
                    let slack = 1e-9 * (1.0 + start.amax());
                    u[i] >= self.lower[i] - slack && u[i] <= self.upper[i] + slack
                });
                return (moved <= 1e-6 * (1.0 + start.amax()) && inside).then(|| self.refine(u, source));
            }
        }
        None
    }

    /// A few more Newton steps past tolerance, kept while the defect keeps
    /// dropping. Large solutions otherwise stop with absolute errors near
    /// the tolerance times their size.
    fn refine(&self, mut u: DVector<f64>, source: &DVector<f64>) -> DVector<f64> {
        let n = u.len();
        let (mut best, _) = self.defect_of(&u, source);
        for _ in 0..3 {
            let gu = self.g.apply(&u);
            let d = -(self.a * &u) - source - &gu;
            let mut jac = -self.a.clone();
            for i in 0..n {
                let h = 1e-7 * (1.0 + u[i].abs());
                let lo = (u[i] - h).max(0.0);
                let hi = u[i] + h;
                jac[(i, i)] -= (self.g.value(i, hi) - self.g.value(i, lo)) / (hi - lo);
            }
            let Some(step) = jac.lu().solve(&d) else { break };
            let cand = &u - step;
            if !cand.iter().all(|x| x.is_finite() && *x > 0.0) {
                break;
            }
            let (dmax, _) = self.defect_of(&cand, source);
            if !(dmax < 0.5 * best) {
                break;
            }
            best = dmax;
            u = cand;
        }
        u
    }

    /// `(mu - A) u_{j+1} = g(u_j) + mu u_j - A gamma`, monotone in `j`.
    ///
    /// Written in increment form `(mu - A)(u_{j+1} - u_j) = -d(u_j)` with the
    /// defect `d = -A(u - gamma) - g(u)`, so rounding scales with the defect
    /// rather than with `u`. A step that leaves the super- (descending) or
    /// subsolution cone means `mu` was too small there and is rejected.
    fn run(&self, start: &DVector<f64>) -> Result<InnerResult> {
        let n = start.len();
        let source = -(self.a * DVector::from_element(n, self.gamma));
        let mut u = start.clone();
        let mut boost = 1.0;
        let mut mu = self.mu_for(&u, boost);
        let mut lu = factor(self.a, &mu);
        let mut repairs = 0usize;
        let mut streak = 0usize;
        let mut next_polish = 0usize;
        let sign = if self.descending { 1.0 } else { -1.0 };
        let (mut d, mut dtol) = self.defect_vec(&u, &source);

        for it in 1..=self.max_iter {
            let dmax = d.amax();
            if dmax <= dtol {
                return Ok(InnerResult { u: self.refine(u, &source), iterations: it - 1 });
            }
            // The linear phase can be slow when mu is large; finish locally.
            if dmax <= 1e4 * dtol && it >= next_polish {
                next_polish = it + 64;
                if let Some(p) = self.polish(&u, &source) {
                    return Ok(InnerResult { u: p, iterations: it });
                }
            }
            let step = lu.solve(&(-&d)).ok_or(Error::NoConvergence(it))?;
            let cand = DVector::from_fn(n, |i, _| {
                let x = u[i] + step[i];
                if self.descending { x.max(self.lower[i]) } else { x.min(self.upper[i]) }
            });
            let (cd, ctol) = self.defect_vec(&cand, &source);
            let finite = cand.iter().chain(cd.iter()).all(|x| x.is_finite());
            let left_cone = cd.iter().any(|x| sign * x < -ctol);
            if !finite || left_cone {
                repairs += 1;
                streak = 0;
                if repairs > 200 {
                    return Err(Error::NoConvergence(it));
                }
                boost *= 2.0;
                let floor = 1e-3 * linalg::scale_of(self.a) * boost;
                mu = self.mu_for(&u, boost).map(|m| m.max(floor));
                lu = factor(self.a, &mu);
                continue;
            }
            u = cand;
            d = cd;
            dtol = ctol;
            streak += 1;
            // Relax a boost that has not been needed for a while, and track
            // the shrinking interval the slope estimate is taken over.
            if streak % 16 == 0 {
                if boost > 1.0 && streak % 64 == 0 {
                    boost /= 2.0;
                }
                let floor = if boost > 1.0 { 1e-3 * linalg::scale_of(self.a) * boost } else { 0.0 };
                let next_mu = self.mu_for(&u, boost).map(|m| m.max(floor));
                if (&next_mu - &mu).amax() > 1e-3 * mu.amax() {
                    mu = next_mu;
                    lu = factor(self.a, &mu);
                }
            }
        }
        Err(Error::NoConvergence(self.max_iter))
    }
}

/// Maximal solution of `u = 1/n + R f_{k,n}(u)` inside the bracket, by
/// descending monotone iteration from `bracket.1`.
///
/// `model` must be sub-Markovian with negative spectral bound; `bracket.0`
/// must be a subsolution and `bracket.1` a supersolution.
pub fn solve_truncated(
    model: &GeneratorModel,
    f: &Nonlinearity,
    params: TruncationParams,
    bracket: (&DVector<f64>, &DVector<f64>),
    tol: f64,
    max_iter: usize,
) -> Result<InnerResult> {
    if let Some((row, sum)) = row_sums_nonpositive(&model.l) {
        return Err(Error::NotSubMarkovian { row, sum });
    }
    if !(model.spectral_bound < 0.0) {
        return Err(Error::SpectralBoundNotNegative(model.spectral_bound));
    }
    let (under, over) = bracket;
    let g = truncate(f, params.k, params.n);
    let gamma = params.gamma();
    if under.len() != model.n() || over.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: under.len().min(over.len()),
        });
    }
    if under.iter().zip(over.iter()).any(|(a, b)| a > b) {
        return Err(Error::BracketInvalid("lower bound exceeds upper bound".into()));
    }
    if !is_subsolution(&model.l, &g, gamma, under) {
        return Err(Error::BracketInvalid("lower bound is not a subsolution".into()));
    }
    if !is_supersolution(&model.l, &g, gamma, over) {
        return Err(Error::BracketInvalid("upper bound is not a supersolution".into()));
    }
    Iteration {
        a: &model.l,
        g,
        gamma,
        lower: under,
        upper: over,
        descending: true,
        tol,
        max_iter,
        mu_floor: params.mu,
    }
    .run(over)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Positivity window `(0, delta]` for the lower-slope shift.
    pub delta: f64,
    /// Margin for the spectral shift.
    pub kappa_margin: f64,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub residual_tol: f64,
    pub max_doublings: usize,
    pub inner_max_iter: usize,
    /// Norm beyond which the `k` branch is declared divergent.
    pub ceiling: f64,
    /// Stop when the criterion fails instead of attempting the construction.
    pub enforce_criterion: bool,
    /// Turn reported failures into errors.
    pub strict: bool,
    pub uniqueness: bool,
    /// Keep every `u_{k,n}` in the report.
    pub record_levels: bool,
    pub grid: GridSpec,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            delta: 1.0,
            kappa_margin: 1.0,
            inner_tol: 1e-12,
            outer_tol: 1e-9,
            residual_tol: 1e-8,
            max_doublings: 30,
            inner_max_iter: 200_000,
            ceiling: 1e8,
            enforce_criterion: true,
            strict: false,
            uniqueness: false,
            record_levels: false,
            grid: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Solved,
    CriterionFailed,
    DivergingBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: f64,
    /// `None` marks the final descent with no `1/n` source.
    pub n: Option<f64>,
    pub inner_iterations: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub k: f64,
    pub n: Option<f64>,
    /// In the original frame.
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shifts {
    pub kappa: f64,
    pub c_delta: f64,
    pub doob: bool,
}

/// Normalized iterate and the sign test against `lambda1(a_inf ∨ (-l))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceDiagnostics {
    pub k: f64,
    pub norms: Vec<(f64, f64)>,
    pub w: Vec<f64>,
    pub l: f64,
    pub lambda1_ainf_l: f64,
    /// `lambda1(a_inf^l) <w, phi'>`.
    pub pairing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub status: Status,
    pub criterion: Criterion,
    pub hypotheses: HypothesisCertificate,
    pub u: Option<Vec<f64>>,
    pub residual: Option<f64>,
    pub bracket: Option<Bracket>,
    pub trace: Vec<TraceEntry>,
    pub levels: Vec<LevelRecord>,
    pub uniqueness: Option<crate::feynman_kac::UniquenessVerdict>,
    pub shifts: Shifts,
    pub divergence: Option<DivergenceDiagnostics>,
    pub warnings: Vec<String>,
}

/// The problem moved to the working frame.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: GeneratorModel,
    pub f: Nonlinearity,
    pub hypotheses: HypothesisCertificate,
    pub criterion: Criterion,
    pub kappa: f64,
    pub c_delta: f64,
    /// Conjugating eigenvector when the Doob step was needed.
    pub phi: Option<DVector<f64>>,
    /// Sub-Markovian, irreducible, negative spectral bound.
    pub work: GeneratorModel,
    pub g: Nonlinearity,
    /// Principal eigenvector of the working generator.
    pub phi_work: DVector<f64>,
}

impl Prepared {
    pub fn from_work(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.phi {
            Some(phi) => v.component_mul(phi),
            None => v.clone(),
        }
    }

    pub fn to_work(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.phi {
            Some(phi) => u.component_div(phi),
            None => u.clone(),
        }
    }

    pub fn shifts(&self) -> Shifts {
        Shifts {
            kappa: self.kappa,
            c_delta: self.c_delta,
            doob: self.phi.is_some(),
        }
    }
}

pub fn prepare(model: &GeneratorModel, f: &Nonlinearity, opts: &SolveOptions) -> Result<Prepared> {
    model.require_irreducible()?;
    if f.n != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: f.n,
        });
    }
    let mut grid = opts.grid.clone();
    if !grid.deltas.contains(&opts.delta) {
        grid.deltas.push(opts.delta);
    }
    let hypotheses = validate_hypotheses(f, &grid);
    if let Verdict::Fail {
        condition,
        state,
        y,
        amount,
    } = &hypotheses.verdict
    {
        if condition == "growth" {
            return Err(Error::PreconditionUnverified(format!(
                "growth bound fails at state {state}: f(y)/y = {amount:e} at y = {y:e}"
            )));
        }
    }
    let (a0, ainf) = f.slopes();
    let crit = criterion(model, &a0, &ainf)?;

    let shifted = model.shift_to_negative_bound(opts.kappa_margin);
    let kappa = shifted.kappa;
    let f_kappa = if kappa > 0.0 { f.shifted(kappa) } else { f.clone() };
    // Any growth in the original rows goes through the conjugation, even when
    // the spectral shift alone would already leave sub-Markovian rows.
    let (mut a, mut g, phi) = if model.sub_markovian && shifted.shifted.sub_markovian {
        (shifted.shifted_l.clone(), f_kappa, None)
    } else {
        let d = doob_transform(&shifted.shifted)?;
        let g = transform_nonlinearity(&f_kappa, &d.phi1)?;
        (d.transformed.l, g, Some(d.phi1.eigenvector))
    };

    let ls = lower_slope(&g, opts.delta);
    let c = ls.c_delta.ok_or(Error::MissingLowerSlopeBound(opts.delta))?;
    let c_delta = if ls.min_ratio.is_positive() { 0.0 } else { c + EPSILON };
    if c_delta > 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] -= c_delta;
        }
        g = g.shifted(c_delta);
    }
    let work = GeneratorModel {
        space: model.space.clone(),
        sub_markovian: row_sums_nonpositive(&a).is_none(),
        irreducible: true,
        spectral_bound: model.spectral_bound - kappa - c_delta,
        l: a,
    };
    if !work.sub_markovian {
        let (row, sum) = row_sums_nonpositive(&work.l).unwrap();
        return Err(Error::NotSubMarkovian { row, sum });
    }
    let phi_work = spectral::principal_eigenpair(&work, &vec![0.0; work.n()], Side::Primal)?
        .eigenvector;
    Ok(Prepared {
        model: model.clone(),
        f: f.clone(),
        hypotheses,
        criterion: crit,
        kappa,
        c_delta,
        phi,
        work,
        g,
        phi_work,
    })
}

/// `‖u + R_κ f_κ⁻(u) - R_κ f_κ⁺(u)‖_p` with `f_κ = f + κ y` and
/// `κ = max(0, s(L) + margin)`, which is the defining identity whenever
/// `s(L) < -margin`.
pub fn definition_residual(
    model: &GeneratorModel,
    f: &Nonlinearity,
    u: &DVector<f64>,
    margin: f64,
) -> Result<f64> {
    let kappa = (model.spectral_bound + margin).max(0.0);
    let n = model.n();
    let fk = |i: usize| f.value(i, u[i].max(0.0)) + kappa * u[i];
    let plus = DVector::from_fn(n, |i, _| fk(i).max(0.0));
    let minus = DVector::from_fn(n, |i, _| (-fk(i)).max(0.0));
    let mut m = -model.l.clone();
    for i in 0..n {
        m[(i, i)] += kappa;
    }
    let lu = m.lu();
    let rp = lu.solve(&plus).ok_or(Error::SpectralBoundNotNegative(model.spectral_bound))?;
    let rm = lu.solve(&minus).ok_or(Error::SpectralBoundNotNegative(model.spectral_bound))?;
    Ok(model.space.norm(&(u + rm - rp)))
}

struct MaxBranch {
    v: DVector<f64>,
    k: f64,
    trace: Vec<TraceEntry>,
    levels: Vec<(f64, Option<f64>, DVector<f64>)>,
    bracket: (DVector<f64>, DVector<f64>),
    divergence: Option<DivergenceDiagnostics>,
    diverged: Option<(f64, f64)>,
    warnings: Vec<String>,
}

fn divergence_diagnostics(
    prep: &Prepared,
    v: &DVector<f64>,
    k: f64,
    norms: &[(f64, f64)],
) -> Result<DivergenceDiagnostics> {
    let norm = prep.work.space.norm(v);
    let w = v / norm;
    let l = prep
        .criterion
        .trace_ainf
        .last()
        .map_or(1.0, |t| t.k);
    let (_, ainf) = prep.g.slopes();
    let pot = ainf.truncate_below(l);
    let dual = spectral::principal_eigenpair(&prep.work, &pot, Side::Dual)?;
    let pairing = dual.eigenvalue * prep.work.space.dot(&w, &dual.eigenvector);
    Ok(DivergenceDiagnostics {
        k,
        norms: norms.to_vec(),
        w: w.iter().copied().collect(),
        l,
        lambda1_ainf_l: dual.eigenvalue,
        pairing,
    })
}

fn maximal_branch(prep: &Prepared, opts: &SolveOptions) -> Result<MaxBranch> {
    let work = &prep.work;
    let a = &work.l;
    let norm = |v: &DVector<f64>| work.space.norm(v);
    let n0 = (1.0 / opts.delta).ceil().max(1.0);
    let zero = DVector::zeros(work.n());
    let mut out = MaxBranch {
        v: zero.clone(),
        k: 1.0,
        trace: Vec::new(),
        levels: Vec::new(),
        bracket: (zero.clone(), zero.clone()),
        divergence: None,
        diverged: None,
        warnings: Vec::new(),
    };
    let mut norms: Vec<(f64, f64)> = Vec::new();
    let mut prev_uk: Option<DVector<f64>> = None;
    let mut k = 1.0;

    for _ in 0..=opts.max_doublings {
        let sup = supersolution_seed(work, k)?;
        let mut start = sup.clone();
        let mut prev_ukn: Option<DVector<f64>> = None;
        let mut n = n0;
        let mut n_used = n0;
        let mut converged_n = false;
        for j in 0..=opts.max_doublings {
            n_used = n;
            let sub = subsolution_seed(&prep.phi_work, n);
            let g = truncate(&prep.g, k, Some(n));
            if j == 0 && !is_supersolution(a, &g, 1.0 / n, &sup) {
                return Err(Error::BracketInvalid(format!(
                    "1 + R(k) is not a supersolution at k = {k}"
                )));
            }
            if !is_subsolution(a, &g, 1.0 / n, &sub) {
                return Err(Error::BracketInvalid(format!(
                    "h_n(phi) is not a subsolution at k = {k}, n = {n}"
                )));
            }
            let res = Iteration {
                a,
                g,
                gamma: 1.0 / n,
                lower: &sub,
                upper: &start,
                descending: true,
                tol: opts.inner_tol,
                max_iter: opts.inner_max_iter,
                mu_floor: 0.0,
            }
            .run(&start)?;
            out.trace.push(TraceEntry {
                k,
                n: Some(n),
                inner_iterations: res.iterations,
                norm: norm(&res.u),
            });
            if opts.record_levels {
                out.levels.push((k, Some(n), res.u.clone()));
            }
            let change = prev_ukn.as_ref().map(|p| norm(&(&res.u - p)));
            prev_ukn = Some(res.u.clone());
            start = res.u;
            if change.is_some_and(|c| c < opts.outer_tol) {
                converged_n = true;
                break;
            }
            n *= 2.0;
        }
        if !converged_n {
            out.warnings.push(format!(
                "n-limit at k = {k} stopped after {} doublings",
                opts.max_doublings
            ));
        }

        // Limit n -> infinity: descend with gamma = 0 from the last u_{k,n},
        // which is a supersolution of that problem.
        let g = truncate(&prep.g, k, None);
        let res = Iteration {
            a,
            g,
            gamma: 0.0,
            lower: &zero,
            upper: &start,
            descending: true,
            tol: opts.inner_tol,
            max_iter: opts.inner_max_iter,
            mu_floor: 0.0,
        }
        .run(&start)?;
        let uk = res.u;
        let nk = norm(&uk);
        out.trace.push(TraceEntry {
            k,
            n: None,
            inner_iterations: res.iterations,
            norm: nk,
        });
        if opts.record_levels {
            out.levels.push((k, None, uk.clone()));
        }
        norms.push((k, nk));
        out.bracket = (subsolution_seed(&prep.phi_work, n_used), sup);
        out.k = k;

        if nk > opts.ceiling {
            out.divergence = Some(divergence_diagnostics(prep, &uk, k, &norms)?);
            out.diverged = Some((k, nk));
            out.v = uk;
            return Ok(out);
        }
        let m = norms.len();
        if out.divergence.is_none() && m >= 4 && norms[m - 1].1 >= 10.0 * norms[m - 4].1 {
            out.divergence = Some(divergence_diagnostics(prep, &uk, k, &norms)?);
            out.warnings
                .push(format!("norm of u_k grew tenfold over three doublings up to k = {k}"));
        }
        // A small change alone is not enough: below the level where the cap
        // stops binding, consecutive u_k can both sit at the trivial solution.
        let done = truncation_inactive(&prep.g, k, &uk)
            && prev_uk
                .as_ref()
                .is_some_and(|p| norm(&(&uk - p)) < opts.outer_tol);
        out.v = uk.clone();
        if done {
            return Ok(out);
        }
        prev_uk = Some(uk);
        k *= 2.0;
    }
    out.warnings.push(format!(
        "k-limit stopped after {} doublings",
        opts.max_doublings
    ));
    Ok(out)
}

/// Smallest `l = 2^j` with `lambda1(a0 ∧ l) < 0` in the working frame, and
/// the corresponding positive eigenvector.
fn negative_mode(prep: &Prepared) -> Result<(f64, DVector<f64>)> {
    let (a0, _) = prep.g.slopes();
    let mut l = 1.0;
    for _ in 0..64 {
        let pot = a0.truncate_above(l);
        let e = spectral::principal_eigenpair(&prep.work, &pot, Side::Primal)?;
        if e.eigenvalue < 0.0 {
            return Ok((l, e.eigenvector));
        }
        l *= 2.0;
    }
    Err(Error::PreconditionUnverified(
        "no truncation of a0 with negative principal eigenvalue".into(),
    ))
}

/// Minimal positive solution at truncation level `k` (working frame), by
/// ascending monotone iteration from a small multiple of the principal
/// eigenvector of `-L - a0 ∧ l`.
pub fn minimal_branch(prep: &Prepared, k: f64, opts: &SolveOptions) -> Result<InnerResult> {
    let (l, psi) = negative_mode(prep)?;
    let k = k.max(2.0 * l);
    let a = &prep.work.l;
    let sup = supersolution_seed(&prep.work, k)?;
    let g = truncate(&prep.g, k, None);
    let mut eps = 0.5 * (0..psi.len()).map(|i| sup[i] / psi[i]).fold(f64::INFINITY, f64::min);
    let mut seed = None;
    for _ in 0..400 {
        let w = &psi * eps;
        let d = defect(a, &g, 0.0, &w);
        if d.iter().all(|x| *x <= 0.0) {
            seed = Some(w);
            break;
        }
        eps *= 0.5;
    }
    let seed = seed.ok_or_else(|| {
        Error::PreconditionUnverified("no subsolution of the form eps * psi found".into())
    })?;
    Iteration {
        a,
        g,
        gamma: 0.0,
        lower: &seed,
        upper: &sup,
        descending: false,
        tol: opts.inner_tol,
        max_iter: opts.inner_max_iter,
        mu_floor: 0.0,
    }
    .run(&seed)
}

/// Whether `min{f⁺ ∧ k, k y}` equals `f⁺` at the strictly positive `v`.
fn truncation_inactive(g: &Nonlinearity, k: f64, v: &DVector<f64>) -> bool {
    (0..v.len()).all(|i| {
        let p = g.positive_part(i, v[i]);
        v[i] > 0.0 && p <= k && p <= k * v[i]
    })
}

/// Smallest `k = 2^j` at which the upper truncation is inactive at `v`.
pub fn inactive_level(g: &Nonlinearity, v: &DVector<f64>) -> f64 {
    let need = (0..v.len())
        .map(|i| {
            let p = g.positive_part(i, v[i]);
            p.max(p / v[i])
        })
        .fold(1.0, f64::max);
    2f64.powi(need.log2().ceil().max(0.0) as i32 + 1)
}

pub fn solve(model: &GeneratorModel, f: &Nonlinearity, opts: &SolveOptions) -> Result<SolutionReport> {
    let prep = prepare(model, f, opts)?;
    let mut report = SolutionReport {
        status: Status::Solved,
        criterion: prep.criterion.clone(),
        hypotheses: prep.hypotheses.clone(),
        u: None,
        residual: None,
        bracket: None,
        trace: Vec::new(),
        levels: Vec::new(),
        uniqueness: None,
        shifts: prep.shifts(),
        divergence: None,
        warnings: Vec::new(),
    };
    if !prep.criterion.satisfied && opts.enforce_criterion {
        if opts.strict {
            return Err(Error::CriterionFailed {
                lambda1_a0: prep.criterion.lambda1_a0.to_string(),
                lambda1_ainf: prep.criterion.lambda1_ainf.to_string(),
            });
        }
        report.status = Status::CriterionFailed;
        return Ok(report);
    }

    let mb = maximal_branch(&prep, opts)?;
    report.trace = mb.trace;
    report.warnings = mb.warnings;
    report.divergence = mb.divergence;
    report.levels = mb
        .levels
        .iter()
        .map(|(k, n, v)| LevelRecord {
            k: *k,
            n: *n,
            u: prep.from_work(v).iter().copied().collect(),
        })
        .collect();
    report.bracket = Some(Bracket {
        sub: prep.from_work(&mb.bracket.0).iter().copied().collect(),
        sup: prep.from_work(&mb.bracket.1).iter().copied().collect(),
    });
    if let Some((k, norm)) = mb.diverged {
        if opts.strict {
            return Err(Error::DivergingBranch { k, norm });
        }
        report.status = Status::DivergingBranch;
        return Ok(report);
    }

    let u = prep.from_work(&mb.v);
    let residual = definition_residual(model, f, &u, opts.kappa_margin)?;
    if residual > opts.residual_tol {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance: opts.residual_tol,
        });
    }
    if u.min() <= 0.0 {
        return Err(Error::PreconditionUnverified(format!(
            "computed solution is not strictly positive (min {:e})",
            u.min()
        )));
    }
    if !prep.criterion.satisfied {
        report
            .warnings
            .push("criterion not satisfied; solution produced with gating disabled".into());
    }
    report.residual = Some(residual);
    if opts.uniqueness {
        report.uniqueness = Some(crate::feynman_kac::uniqueness_check_prepared(
            &prep,
            &[u.clone()],
            opts,
        )?);
    }
    report.u = Some(u.iter().copied().collect());
    Ok(report)
}

impl SolutionReport {
    pub fn solution(&self) -> Option<DVector<f64>> {
        self.u.as_ref().map(|u| DVector::from_vec(u.clone()))
    }
}

/// Compares the solutions for `f1 <= f2`; expected `u1 <= u2` entrywise.
pub fn solution_map_monotonicity_check(
    model: &GeneratorModel,
    f1: &Nonlinearity,
    f2: &Nonlinearity,
    opts: &SolveOptions,
) -> Result<bool> {
    let grid = opts.grid.samples();
    for i in 0..f1.n {
        if let Some(&y) = grid.iter().find(|&&y| f1.value(i, y) > f2.value(i, y) + 1e-12) {
            return Err(Error::PreconditionUnverified(format!(
                "f1 > f2 at state {i}, y = {y:e}"
            )));
        }
    }
    let r1 = solve(model, f1, opts)?;
    let r2 = solve(model, f2, opts)?;
    let (u1, u2) = match (r1.solution(), r2.solution()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::PreconditionUnverified(
                "both nonlinearities must satisfy the criterion".into(),
            ))
        }
    };
    Ok(u1.iter().zip(u2.iter()).all(|(a, b)| *a <= *b + 1e-8))
}

/// Criterion only, without attempting a solve.
pub fn criterion_for(model: &GeneratorModel, f: &Nonlinearity) -> Result<Criterion> {
    let (a0, ainf) = f.slopes();
    criterion(model, &a0, &ainf)
}
