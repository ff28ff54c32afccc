//! Per-state scalar nonlinearities `f(i, y)`, their generalized slopes and the
//! growth / lower-slope hypothesis checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extended::{ExtendedReal, Potential};

/// Piecewise-linear table. The first and last segments extend linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl Table {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let t = Self { knots, values };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 || self.knots.len() != self.values.len() {
            return Err(Error::InvalidNonlinearity(
                "table needs at least two knots and one value per knot".into(),
            ));
        }
        if self.knots[0] < 0.0 {
            return Err(Error::InvalidNonlinearity("table knots must be >= 0".into()));
        }
        if self.knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidNonlinearity(
                "table knots must be strictly increasing".into(),
            ));
        }
        if self.knots.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidNonlinearity("table entries must be finite".into()));
        }
        Ok(())
    }

    fn segment(&self, s: usize) -> (f64, f64) {
        let (x0, x1) = (self.knots[s], self.knots[s + 1]);
        let (y0, y1) = (self.values[s], self.values[s + 1]);
        let slope = (y1 - y0) / (x1 - x0);
        (slope, y0 - slope * x0)
    }

    pub fn eval(&self, y: f64) -> f64 {
        let m = self.knots.len();
        let s = match self.knots.partition_point(|&k| k <= y) {
            0 => 0,
            i if i >= m => m - 2,
            i => i - 1,
        };
        let (slope, icept) = self.segment(s);
        slope * y + icept
    }

    /// Value at zero of the extended first segment.
    fn at_zero(&self) -> f64 {
        self.segment(0).1
    }

    fn first_slope(&self) -> f64 {
        self.segment(0).0
    }

    fn last_slope(&self) -> f64 {
        self.segment(self.knots.len() - 2).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kind {
    /// `b y^q - c y`, with `b = 1` unless given.
    PowerMinusLinear {
        q: f64,
        c: f64,
        #[serde(default = "one")]
        b: f64,
    },
    /// `mu_i y - beta_i y^2`.
    Logistic { mu: Vec<f64>, beta: Vec<f64> },
    /// `a_i y / (1 + y)`.
    Saturating { a: Vec<f64> },
    Tabulated { tables: Vec<Table> },
    /// `inner(i, y) + shift * y`.
    Shifted { inner: Box<Kind>, shift: f64 },
    /// `inner(i, phi_i y) / phi_i`.
    Conjugated { inner: Box<Kind>, phi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub n: usize,
    #[serde(flatten)]
    pub kind: Kind,
}

fn one() -> f64 {
    1.0
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::InvalidNonlinearity(format!(
            "{name} has {} entries, expected {n}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidNonlinearity(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn validate_kind(kind: &Kind, n: usize) -> Result<()> {
    match kind {
        Kind::PowerMinusLinear { q, c, b } => {
            if !(q.is_finite() && *q > 0.0 && c.is_finite() && b.is_finite()) {
                return Err(Error::InvalidNonlinearity(format!(
                    "power_minus_linear needs finite q > 0, b and c (q = {q}, b = {b}, c = {c})"
                )));
            }
            Ok(())
        }
        Kind::Logistic { mu, beta } => {
            check_len("mu", mu, n)?;
            check_len("beta", beta, n)
        }
        Kind::Saturating { a } => check_len("a", a, n),
        Kind::Tabulated { tables } => {
            if tables.len() != n {
                return Err(Error::InvalidNonlinearity(format!(
                    "{} tables for {n} states",
                    tables.len()
                )));
            }
            tables.iter().try_for_each(Table::validate)
        }
        Kind::Shifted { inner, shift } => {
            if !shift.is_finite() {
                return Err(Error::InvalidNonlinearity("shift must be finite".into()));
            }
            validate_kind(inner, n)
        }
        Kind::Conjugated { inner, phi } => {
            check_len("phi", phi, n)?;
            if phi.iter().any(|p| *p <= 0.0) {
                return Err(Error::InvalidNonlinearity("phi must be strictly positive".into()));
            }
            validate_kind(inner, n)
        }
    }
}

fn eval_kind(kind: &Kind, i: usize, y: f64) -> f64 {
    match kind {
        Kind::PowerMinusLinear { q, c, b } => b * y.powf(*q) - c * y,
        Kind::Logistic { mu, beta } => mu[i] * y - beta[i] * y * y,
        Kind::Saturating { a } => a[i] * y / (1.0 + y),
        Kind::Tabulated { tables } => tables[i].eval(y),
        Kind::Shifted { inner, shift } => eval_kind(inner, i, y) + shift * y,
        Kind::Conjugated { inner, phi } => eval_kind(inner, i, phi[i] * y) / phi[i],
    }
}

fn slopes_kind(kind: &Kind, i: usize) -> (ExtendedReal, ExtendedReal) {
    use ExtendedReal::*;
    match kind {
        Kind::PowerMinusLinear { q, c, b } => {
            let blow_up = if *b > 0.0 {
                PlusInf
            } else if *b < 0.0 {
                MinusInf
            } else {
                Finite(-c)
            };
            if *q < 1.0 {
                (blow_up, Finite(-c))
            } else if *q > 1.0 {
                (Finite(-c), blow_up)
            } else {
                (Finite(b - c), Finite(b - c))
            }
        }
        Kind::Logistic { mu, beta } => {
            let ainf = if beta[i] > 0.0 {
                MinusInf
            } else if beta[i] < 0.0 {
                PlusInf
            } else {
                Finite(mu[i])
            };
            (Finite(mu[i]), ainf)
        }
        Kind::Saturating { a } => (Finite(a[i]), Finite(0.0)),
        Kind::Tabulated { tables } => {
            let t = &tables[i];
            let f0 = t.at_zero();
            let a0 = if f0 > 0.0 {
                PlusInf
            } else if f0 < 0.0 {
                MinusInf
            } else {
                Finite(t.first_slope())
            };
            (a0, Finite(t.last_slope()))
        }
        Kind::Shifted { inner, shift } => {
            let (a0, ai) = slopes_kind(inner, i);
            (a0.add(*shift), ai.add(*shift))
        }
        Kind::Conjugated { inner, .. } => slopes_kind(inner, i),
    }
}

/// Kinks of a piecewise-linear kind, where sampled extrema can hide.
fn breakpoints_kind(kind: &Kind, i: usize) -> Vec<f64> {
    match kind {
        Kind::Tabulated { tables } => tables[i].knots.clone(),
        Kind::Shifted { inner, .. } => breakpoints_kind(inner, i),
        Kind::Conjugated { inner, phi } => breakpoints_kind(inner, i).into_iter().map(|k| k / phi[i]).collect(),
        _ => Vec::new(),
    }
}

/// `inf_{0 < y <= delta} f(i, y) / y`, exact per kind.
fn ratio_inf_kind(kind: &Kind, i: usize, delta: f64) -> f64 {
    match kind {
        Kind::PowerMinusLinear { q, c, b } => {
            // b y^{q-1} - c is monotone in y; inspect both ends of (0, delta].
            let at_delta = b * delta.powf(q - 1.0) - c;
            let at_zero = if *q < 1.0 {
                if *b < 0.0 {
                    f64::NEG_INFINITY
                } else if *b > 0.0 {
                    f64::INFINITY
                } else {
                    -c
                }
            } else if *q > 1.0 {
                -c
            } else {
                b - c
            };
            at_delta.min(at_zero)
        }
        Kind::Logistic { mu, beta } => mu[i] - (beta[i] * delta).max(0.0),
        Kind::Saturating { a } => {
            if a[i] >= 0.0 {
                a[i] / (1.0 + delta)
            } else {
                a[i]
            }
        }
        Kind::Tabulated { tables } => {
            let t = &tables[i];
            let f0 = t.at_zero();
            if f0 < 0.0 {
                return f64::NEG_INFINITY;
            }
            let mut best = t.eval(delta) / delta;
            if f0 == 0.0 {
                best = best.min(t.first_slope());
            }
            for &k in t.knots.iter().filter(|&&k| k > 0.0 && k < delta) {
                best = best.min(t.eval(k) / k);
            }
            best
        }
        Kind::Shifted { inner, shift } => ratio_inf_kind(inner, i, delta) + shift,
        Kind::Conjugated { inner, phi } => ratio_inf_kind(inner, i, phi[i] * delta),
    }
}

impl Nonlinearity {
    pub fn new(n: usize, kind: Kind) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidNonlinearity("need at least one state".into()));
        }
        validate_kind(&kind, n)?;
        Ok(Self { n, kind })
    }

    pub fn power_minus_linear(n: usize, q: f64, c: f64) -> Result<Self> {
        Self::new(n, Kind::PowerMinusLinear { q, c, b: 1.0 })
    }

    /// `b y^q - c y`.
    pub fn scaled_power(n: usize, b: f64, q: f64, c: f64) -> Result<Self> {
        Self::new(n, Kind::PowerMinusLinear { q, c, b })
    }

    pub fn logistic(mu: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        Self::new(mu.len(), Kind::Logistic { mu, beta })
    }

    pub fn saturating(a: Vec<f64>) -> Result<Self> {
        Self::new(a.len(), Kind::Saturating { a })
    }

    pub fn tabulated(tables: Vec<Table>) -> Result<Self> {
        Self::new(tables.len(), Kind::Tabulated { tables })
    }

    /// `f(i, y) = c y` on every state.
    pub fn linear(n: usize, c: f64) -> Result<Self> {
        let t = Table::new(vec![0.0, 1.0], vec![0.0, c])?;
        Self::tabulated(vec![t; n])
    }

    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            n: self.n,
            kind: Kind::Shifted {
                inner: Box::new(self.kind.clone()),
                shift,
            },
        }
    }

    /// `f(i, phi_i y) / phi_i`.
    pub fn conjugated(&self, phi: &[f64]) -> Result<Self> {
        Self::new(
            self.n,
            Kind::Conjugated {
                inner: Box::new(self.kind.clone()),
                phi: phi.to_vec(),
            },
        )
    }

    /// Checked evaluation.
    pub fn evaluate(&self, i: usize, y: f64) -> Result<f64> {
        if i >= self.n {
            return Err(Error::StateOutOfRange { index: i, n: self.n });
        }
        if !(y >= 0.0) {
            return Err(Error::NegativeArgument(y));
        }
        Ok(self.value(i, y))
    }

    /// Unchecked evaluation for hot loops; `y >= 0` and `i < n` assumed.
    #[inline]
    pub fn value(&self, i: usize, y: f64) -> f64 {
        eval_kind(&self.kind, i, y)
    }

    pub fn positive_part(&self, i: usize, y: f64) -> f64 {
        self.value(i, y).max(0.0)
    }

    pub fn negative_part(&self, i: usize, y: f64) -> f64 {
        (-self.value(i, y)).max(0.0)
    }

    /// Generalized slopes `(a0, a_inf)`.
    pub fn slopes(&self) -> (Potential, Potential) {
        let (a0, ai): (Vec<_>, Vec<_>) = (0..self.n).map(|i| slopes_kind(&self.kind, i)).unzip();
        (Potential::new(a0), Potential::new(ai))
    }

    /// `inf_{0 < y <= delta} f(i, y) / y`.
    pub fn ratio_inf(&self, i: usize, delta: f64) -> f64 {
        ratio_inf_kind(&self.kind, i, delta)
    }

    /// `h(i, y) = f(i, y) / y` for `y > 0`.
    pub fn quotient(&self, i: usize, y: f64) -> f64 {
        self.value(i, y) / y
    }
}

/// Sampling description used by [`validate_hypotheses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub y_min: f64,
    pub y_max: f64,
    pub points: usize,
    pub deltas: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            y_min: 1e-8,
            y_max: 1e8,
            points: 400,
            deltas: vec![1.0],
        }
    }
}

impl GridSpec {
    pub fn samples(&self) -> Vec<f64> {
        log_grid(self.y_min, self.y_max, self.points)
    }
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|j| (a + (b - a) * j as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Floor for fitted `h` and the strictness margin in [`shift_delta`].
pub const EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerSlope {
    pub delta: f64,
    /// `C_delta >= 0` with `f(i, y) >= -C_delta y` on `[0, delta]`; absent
    /// when no finite constant exists.
    pub c_delta: Option<f64>,
    /// `min_i inf_{(0, delta]} f / y`.
    pub min_ratio: ExtendedReal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail {
        condition: String,
        state: usize,
        y: f64,
        amount: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCertificate {
    /// Growth bound `f(i, y) <= h_i + lambda y`.
    pub lambda: Option<f64>,
    pub h: Option<Vec<f64>>,
    pub lower_slope: Vec<LowerSlope>,
    pub checked_grid: String,
    pub verdict: Verdict,
}

impl HypothesisCertificate {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn c_delta(&self, delta: f64) -> Option<&LowerSlope> {
        self.lower_slope.iter().find(|l| l.delta == delta)
    }
}

fn golden_max(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    // Works in log-space; the caller passes logs of y.
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..100 {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
        if (b - a).abs() < 1e-12 {
            break;
        }
    }
    gc.max(gd)
}

/// Checks the growth bound and the lower-slope bound on a sampling grid.
///
/// `lambda` is the smallest value read off the slope data: the supremum of
/// `f / y` when finite (then `h` is the floor `EPSILON`), otherwise
/// `max(0, max a_inf)` with `h` fitted to the sampled excess.
pub fn validate_hypotheses(f: &Nonlinearity, grid: &GridSpec) -> HypothesisCertificate {
    let base = grid.samples();
    // Per-state samples: the grid plus any kinks inside it.
    let samples: Vec<Vec<f64>> = (0..f.n)
        .map(|i| {
            let mut ys = base.clone();
            ys.extend(
                breakpoints_kind(&f.kind, i)
                    .into_iter()
                    .filter(|k| *k >= grid.y_min && *k <= grid.y_max),
            );
            ys.sort_by(f64::total_cmp);
            ys.dedup();
            ys
        })
        .collect();
    let ys = &base;
    let (a0, ainf) = f.slopes();
    let desc = format!(
        "{} log-spaced points on [{:e}, {:e}], deltas {:?}",
        grid.points, grid.y_min, grid.y_max, grid.deltas
    );

    let mut verdict = Verdict::Pass;

    // Supremum of f / y from slopes and samples.
    let mut sup_ratio = f64::NEG_INFINITY;
    let mut sup_finite = true;
    for i in 0..f.n {
        for s in [a0.values[i], ainf.values[i]] {
            match s {
                ExtendedReal::PlusInf => sup_finite = false,
                ExtendedReal::Finite(x) => sup_ratio = sup_ratio.max(x),
                ExtendedReal::MinusInf => {}
            }
        }
        for &y in &samples[i] {
            sup_ratio = sup_ratio.max(f.quotient(i, y));
        }
    }

    let growth_blocked = ainf.values.iter().position(|v| *v == ExtendedReal::PlusInf);
    let (lambda, h) = if let Some(i) = growth_blocked {
        let y = grid.y_max;
        verdict = Verdict::Fail {
            condition: "growth".into(),
            state: i,
            y,
            amount: f.quotient(i, y),
        };
        (None, None)
    } else {
        let lambda = if sup_finite {
            sup_ratio.max(0.0)
        } else {
            ainf.values
                .iter()
                .filter_map(|v| v.finite())
                .fold(0.0, f64::max)
        };
        let h: Vec<f64> = (0..f.n)
            .map(|i| {
                let excess = |y: f64| f.value(i, y) - lambda * y;
                let ys = &samples[i];
                let (mut jbest, mut best) = (0, f64::NEG_INFINITY);
                for (j, &y) in ys.iter().enumerate() {
                    let e = excess(y);
                    if e > best {
                        best = e;
                        jbest = j;
                    }
                }
                if best > 0.0 && ys.len() > 2 {
                    let lo = ys[jbest.saturating_sub(1)].ln();
                    let hi = ys[(jbest + 1).min(ys.len() - 1)].ln();
                    best = best.max(golden_max(|t| excess(t.exp()), lo, hi));
                }
                best.max(EPSILON)
            })
            .collect();
        (Some(lambda), Some(h))
    };

    let mut lower = Vec::new();
    for &delta in &grid.deltas {
        let mut min_ratio = f64::INFINITY;
        let mut worst_state = 0;
        for i in 0..f.n {
            let r = f.ratio_inf(i, delta);
            if r < min_ratio {
                min_ratio = r;
                worst_state = i;
            }
        }
        let c_delta = if min_ratio.is_finite() {
            Some((-min_ratio).max(0.0))
        } else {
            None
        };
        if c_delta.is_none() && verdict == Verdict::Pass {
            let y = ys.iter().copied().find(|&y| y <= delta).unwrap_or(grid.y_min);
            verdict = Verdict::Fail {
                condition: "lower_slope".into(),
                state: worst_state,
                y,
                amount: f.quotient(worst_state, y),
            };
        }
        lower.push(LowerSlope {
            delta,
            c_delta,
            min_ratio: min_ratio.into(),
        });
    }

    HypothesisCertificate {
        lambda,
        h,
        lower_slope: lower,
        checked_grid: desc,
        verdict,
    }
}

/// Shifts `f` by a multiple of `y` so that it is strictly positive on
/// `(0, delta]`. Returns the shifted nonlinearity and the shift, which the
/// generator must absorb as well.
pub fn shift_delta(
    f: &Nonlinearity,
    delta: f64,
    cert: &HypothesisCertificate,
) -> Result<(Nonlinearity, f64)> {
    let ls = cert
        .c_delta(delta)
        .ok_or(Error::MissingLowerSlopeBound(delta))?;
    let c = ls.c_delta.ok_or(Error::MissingLowerSlopeBound(delta))?;
    let shift = if ls.min_ratio.is_positive() { 0.0 } else { c + EPSILON };
    Ok((f.shifted(shift), shift))
}

/// Lower-slope data for a single `delta`, without the growth check.
pub fn lower_slope(f: &Nonlinearity, delta: f64) -> LowerSlope {
    let min_ratio = (0..f.n).map(|i| f.ratio_inf(i, delta)).fold(f64::INFINITY, f64::min);
    LowerSlope {
        delta,
        c_delta: min_ratio.is_finite().then(|| (-min_ratio).max(0.0)),
        min_ratio: min_ratio.into(),
    }
}
