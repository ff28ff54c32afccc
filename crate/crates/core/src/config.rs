//! Problem documents: a TOML file bundling the generator, the measure, the
//! nonlinearity and solver options.
//!
//! ```toml
//! seed = 7
//! p = 2.0
//! weights = "uniform"          # or a path to one weight per line
//!
//! [generator]
//! file = "chain.coo"           # "n nnz" then "i j value", 1-based
//! # or inline: n = 2, entries = [[1, 1, -1.0], [1, 2, 1.0], ...]
//!
//! [nonlinearity]
//! kind = "logistic"
//! mu = [3.0, 3.0]
//! beta = [1.0, 1.0]
//!
//! [solver]                     # any SolveOptions field
//! outer_tol = 1e-9
//!
//! [modes]
//! strict = false
//! uniqueness = true
//! ```
//!
//! Relative paths resolve against the directory holding the document.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::{Kind, Nonlinearity};
use crate::solver::SolveOptions;
use crate::state_model::{validate_generator, GeneratorModel, MeasureSpace};
use crate::suites::SuiteSizes;

pub const DEFAULT_SEED: u64 = 20261016;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSource {
    pub file: Option<PathBuf>,
    pub n: Option<usize>,
    /// `[i, j, value]` triples, 1-based.
    pub entries: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSource {
    Inline(Vec<f64>),
    /// `"uniform"` or a file path.
    Named(String),
}

impl Default for WeightsSource {
    fn default() -> Self {
        WeightsSource::Named("uniform".into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Modes {
    pub strict: bool,
    pub uniqueness: bool,
    pub oracle: bool,
    /// Restrict `verify` to the Monte Carlo agreement suites.
    pub oracle_only: bool,
}

/// Inputs for the `oracle` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    pub alpha: f64,
    pub t: f64,
    pub start: usize,
    pub paths: usize,
    /// Source for the resolvent estimate; ones when absent.
    pub source: Option<Vec<f64>>,
    /// Potential for the Feynman-Kac estimate; zero when absent.
    pub potential: Option<Vec<f64>>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            t: 1.0,
            start: 0,
            paths: 100_000,
            source: None,
            potential: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub generator: Option<GeneratorSource>,
    #[serde(default)]
    pub weights: WeightsSource,
    #[serde(default = "two")]
    pub p: f64,
    pub nonlinearity: Option<Kind>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub modes: Modes,
    #[serde(default)]
    pub suites: SuiteSizes,
    #[serde(default)]
    pub oracle: OracleOptions,
    /// Directory relative paths resolve against; not part of the document.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn two() -> f64 {
    2.0
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            generator: None,
            weights: WeightsSource::default(),
            p: 2.0,
            nonlinearity: None,
            solver: SolveOptions::default(),
            seed: DEFAULT_SEED,
            modes: Modes::default(),
            suites: SuiteSizes::default(),
            oracle: OracleOptions::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl ProblemConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ProblemConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.check_tolerances()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, dir)
    }

    fn check_tolerances(&self) -> Result<()> {
        let s = &self.solver;
        let named = [
            ("solver.inner_tol", s.inner_tol),
            ("solver.outer_tol", s.outer_tol),
            ("solver.residual_tol", s.residual_tol),
            ("solver.ceiling", s.ceiling),
            ("solver.delta", s.delta),
            ("solver.kappa_margin", s.kappa_margin),
            ("oracle.alpha", self.oracle.alpha),
            ("oracle.t", self.oracle.t),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parse(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Raw generator matrix, before any structural validation.
    pub fn generator_matrix(&self) -> Result<DMatrix<f64>> {
        let src = self
            .generator
            .as_ref()
            .ok_or_else(|| Error::Parse("missing [generator] section".into()))?;
        match (&src.file, &src.entries) {
            (Some(file), None) => {
                let path = self.resolve(file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                parse_coordinate(&text)
            }
            (None, Some(entries)) => {
                let n = src
                    .n
                    .ok_or_else(|| Error::Parse("inline generator needs n".into()))?;
                assemble(n, entries.iter().copied())
            }
            _ => Err(Error::Parse(
                "generator needs exactly one of `file` or `entries`".into(),
            )),
        }
    }

    pub fn measure(&self, n: usize) -> Result<MeasureSpace> {
        let weights = match &self.weights {
            WeightsSource::Inline(w) => w.clone(),
            WeightsSource::Named(s) if s == "uniform" => vec![1.0; n],
            WeightsSource::Named(file) => {
                let path = self.resolve(Path::new(file));
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                parse_weights(&text)?
            }
        };
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        MeasureSpace::new(weights, self.p)
    }

    /// Validated irreducible generator model.
    pub fn model(&self) -> Result<GeneratorModel> {
        let l = self.generator_matrix()?;
        let space = self.measure(l.nrows())?;
        validate_generator(l, space)
    }

    pub fn nonlinearity(&self, n: usize) -> Result<Nonlinearity> {
        let kind = self
            .nonlinearity
            .clone()
            .ok_or_else(|| Error::Parse("missing [nonlinearity] section".into()))?;
        Nonlinearity::new(n, kind)
    }

    /// Solver options with the mode flags folded in.
    pub fn solve_options(&self) -> SolveOptions {
        let mut opts = self.solver.clone();
        opts.strict |= self.modes.strict;
        opts.uniqueness |= self.modes.uniqueness;
        opts
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(no, line)| {
        let body = line.split('#').next().unwrap_or("").trim();
        (!body.is_empty()).then_some((no + 1, body))
    })
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Parse(format!("line {line}: missing {what}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad {what}")))
}

fn assemble(n: usize, entries: impl Iterator<Item = (usize, usize, f64)>) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Parse("generator needs at least one state".into()));
    }
    let mut l = DMatrix::zeros(n, n);
    for (i, j, v) in entries {
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::Parse(format!("entry ({i}, {j}) outside 1..={n}")));
        }
        if !v.is_finite() {
            return Err(Error::Parse(format!("entry ({i}, {j}) is not finite")));
        }
        l[(i - 1, j - 1)] += v;
    }
    Ok(l)
}

/// Coordinate format: a header `n nnz`, then `nnz` lines `i j value` with
/// 1-based indices. Repeated coordinates add up; `#` starts a comment.
pub fn parse_coordinate(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = data_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty generator file".into()))?;
    let mut tok = header.split_whitespace();
    let n: usize = parse_num(tok.next(), hline, "state count")?;
    let nnz: usize = parse_num(tok.next(), hline, "entry count")?;
    let mut entries = Vec::with_capacity(nnz);
    for (no, body) in lines {
        let mut tok = body.split_whitespace();
        let i = parse_num(tok.next(), no, "row index")?;
        let j = parse_num(tok.next(), no, "column index")?;
        let v = parse_num(tok.next(), no, "value")?;
        if tok.next().is_some() {
            return Err(Error::Parse(format!("line {no}: trailing tokens")));
        }
        entries.push((i, j, v));
    }
    if entries.len() != nnz {
        return Err(Error::Parse(format!(
            "header promises {nnz} entries, found {}",
            entries.len()
        )));
    }
    assemble(n, entries.into_iter())
}

pub fn format_coordinate(l: &DMatrix<f64>) -> String {
    let nz: Vec<_> = (0..l.nrows())
        .flat_map(|i| (0..l.ncols()).map(move |j| (i, j)))
        .filter(|&(i, j)| l[(i, j)] != 0.0)
        .collect();
    let mut out = format!("{} {}\n", l.nrows(), nz.len());
    for (i, j) in nz {
        out.push_str(&format!("{} {} {:?}\n", i + 1, j + 1, l[(i, j)]));
    }
    out
}

/// One weight per line.
pub fn parse_weights(text: &str) -> Result<Vec<f64>> {
    data_lines(text)
        .map(|(no, body)| parse_num(Some(body), no, "weight"))
        .collect()
}

/// `state,value` rows with a header, the format `solve` writes.
pub fn vector_csv(u: &[f64]) -> String {
    let mut out = String::from("state,u\n");
    for (i, x) in u.iter().enumerate() {
        out.push_str(&format!("{},{x:?}\n", i + 1));
    }
    out
}
