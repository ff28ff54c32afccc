//! Dense helpers shared across modules: weighted norms, strongly connected
//! components and the Perron root of Metzler matrices.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};

/// Entries with magnitude below this are treated as structural zeros.
pub const ZERO_THRESHOLD: f64 = 1e-14;

const PERRON_MAX_ITER: usize = 100_000;
const PERRON_STALL: usize = 200;

/// `(Σ |v_i|^p w_i)^{1/p}`.
pub fn weighted_norm(v: &DVector<f64>, weights: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return v.amax();
    }
    let s: f64 = v
        .iter()
        .zip(weights)
        .map(|(x, w)| x.abs().powf(p) * w)
        .sum();
    s.powf(1.0 / p)
}

/// `Σ u_i v_i w_i`.
pub fn weighted_dot(u: &DVector<f64>, v: &DVector<f64>, weights: &[f64]) -> f64 {
    u.iter().zip(v.iter()).zip(weights).map(|((a, b), w)| a * b * w).sum()
}

pub fn scale_of(m: &DMatrix<f64>) -> f64 {
    1.0 + (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max)
}

fn positive_digraph(m: &DMatrix<f64>) -> DiGraph<(), ()> {
    let n = m.nrows();
    let mut g = DiGraph::with_capacity(n, n * 2);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] > ZERO_THRESHOLD {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    g
}

/// Strongly connected components of the graph `i -> j` iff `m_ij > 0`.
pub fn strongly_connected_components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    tarjan_scc(&positive_digraph(m))
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|ix| ix.index()).collect();
            v.sort_unstable();
            v
        })
        .collect()
}

pub fn is_irreducible(m: &DMatrix<f64>) -> bool {
    m.nrows() <= 1 || strongly_connected_components(m).len() == 1
}

pub fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

#[derive(Debug, Clone)]
pub struct PerronResult {
    pub value: f64,
    /// Strictly positive, normalized to unit max entry.
    pub vector: DVector<f64>,
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
}

/// Perron root and vector of an irreducible Metzler matrix.
///
/// Shifted inverse iteration on `alpha I - M` where `alpha` sits just above the
/// current Collatz-Wielandt upper bound, so the shift tracks the root and the
/// iterate stays positive. Terminates when the min/max quotient bracket is
/// narrower than `1e-12 (1 + max |M_ii|)`.
pub fn perron(m: &DMatrix<f64>, start: Option<&DVector<f64>>) -> Result<PerronResult> {
    let n = m.nrows();
    let scale = scale_of(m);
    let tol = 1e-12 * scale;
    let mut x = match start {
        Some(s) => s.map(|v| v.abs().max(f64::MIN_POSITIVE)),
        None => DVector::from_element(n, 1.0),
    };
    x /= x.max();

    let mut best_gap = f64::INFINITY;
    let mut best: Option<PerronResult> = None;
    let mut since_best = 0usize;

    for it in 0..PERRON_MAX_ITER {
        let y = m * &x;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NoConvergence(it));
        }
        let gap = hi - lo;
        if gap < best_gap {
            best_gap = gap;
            since_best = 0;
            best = Some(PerronResult {
                value: 0.5 * (lo + hi),
                vector: x.clone(),
                lower: lo,
                upper: hi,
                iterations: it,
            });
        } else {
            since_best += 1;
        }
        if gap <= tol {
            return Ok(best.expect("best set when gap improves"));
        }
        if since_best > PERRON_STALL {
            // Rounding floor reached; accept only a tight bracket.
            return match best {
                Some(b) if b.upper - b.lower <= 1e-7 * scale => Ok(b),
                _ => Err(Error::NoConvergence(it)),
            };
        }

        let mut eta = gap.max(1e-13 * scale);
        let z = loop {
            let mut a = -m.clone();
            for i in 0..n {
                a[(i, i)] += hi + eta;
            }
            match a.lu().solve(&x) {
                Some(z) if z.iter().all(|v| v.is_finite()) => break z,
                _ => eta *= 10.0,
            }
            if eta > 1e6 * scale {
                return Err(Error::NoConvergence(it));
            }
        };
        let zmax = z.max();
        if zmax <= 0.0 {
            return Err(Error::NoConvergence(it));
        }
        x = z.map(|v| (v / zmax).max(f64::MIN_POSITIVE));
    }
    Err(Error::NoConvergence(PERRON_MAX_ITER))
}

/// Spectral bound of a Metzler matrix, irreducible or not.
///
/// For reducible input the bound is the maximum over the diagonal blocks of
/// its strongly connected components.
pub fn metzler_spectral_bound(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Err(Error::InvalidMeasure("empty matrix".into()));
    }
    let comps = strongly_connected_components(m);
    if comps.len() == 1 {
        return Ok(perron(m, None)?.value);
    }
    let mut s = f64::NEG_INFINITY;
    for c in comps {
        let v = if c.len() == 1 {
            m[(c[0], c[0])]
        } else {
            perron(&principal_submatrix(m, &c), None)?.value
        };
        s = s.max(v);
    }
    Ok(s)
}

/// `m + diag(d)`.
pub fn plus_diag(m: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, v) in d.iter().enumerate() {
        out[(i, i)] += v;
    }
    out
}

pub fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.lu().solve(b)
}
