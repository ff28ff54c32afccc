//! Python bindings. Matrices are lists of rows, nonlinearities and solver
//! options are JSON documents in the same schema as the TOML config, and
//! reports come back as JSON strings.
//!
//! The `*_impl` functions carry the logic so it can be tested without an
//! interpreter.

use std::path::Path;

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use semilin_cli::{run, Command, Overrides};
use semilinear::config::ProblemConfig;
use semilinear::nonlinearity::{Kind, Nonlinearity};
use semilinear::solver::{criterion_for, solve, SolveOptions};
use semilinear::spectral::{principal_eigenpair, Side};
use semilinear::state_model::{validate_generator, GeneratorModel, MeasureSpace};
use semilinear::{Error, ExtendedReal};

pub type Rows = Vec<Vec<f64>>;

pub fn matrix(rows: &Rows) -> Result<DMatrix<f64>, Error> {
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn model_impl(rows: &Rows, weights: Option<Vec<f64>>, p: f64) -> Result<GeneratorModel, Error> {
    let l = matrix(rows)?;
    let space = MeasureSpace::new(weights.unwrap_or_else(|| vec![1.0; l.nrows()]), p)?;
    validate_generator(l, space)
}

pub fn nonlinearity_impl(n: usize, spec: &str) -> Result<Nonlinearity, Error> {
    let kind: Kind = serde_json::from_str(spec).map_err(|e| Error::Parse(e.to_string()))?;
    Nonlinearity::new(n, kind)
}

fn options_impl(json: Option<&str>) -> Result<SolveOptions, Error> {
    match json {
        None => Ok(SolveOptions::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string())),
    }
}

fn to_f64(x: ExtendedReal) -> f64 {
    match x {
        ExtendedReal::Finite(v) => v,
        ExtendedReal::PlusInf => f64::INFINITY,
        ExtendedReal::MinusInf => f64::NEG_INFINITY,
    }
}

pub fn criterion_impl(rows: &Rows, spec: &str) -> Result<(f64, f64, bool), Error> {
    let m = model_impl(rows, None, 2.0)?;
    let f = nonlinearity_impl(m.n(), spec)?;
    let c = criterion_for(&m, &f)?;
    Ok((to_f64(c.lambda1_a0), to_f64(c.lambda1_ainf), c.satisfied))
}

pub fn solve_impl(rows: &Rows, spec: &str, options: Option<&str>) -> Result<String, Error> {
    let m = model_impl(rows, None, 2.0)?;
    let f = nonlinearity_impl(m.n(), spec)?;
    let report = solve(&m, &f, &options_impl(options)?)?;
    Ok(serde_json::to_string(&report).expect("serializable report"))
}

pub fn run_impl(command: &str, config: &str, seed: Option<u64>, strict: bool) -> Result<(i32, String), Error> {
    let command = match command {
        "validate" => Command::Validate,
        "criterion" => Command::Criterion,
        "solve" => Command::Solve,
        "verify" => Command::Verify,
        "oracle" => Command::Oracle,
        other => return Err(Error::Parse(format!("unknown command {other:?}"))),
    };
    let ov = Overrides {
        seed,
        strict,
        ..Default::default()
    };
    let report = run(command, ProblemConfig::load(Path::new(config)), &ov);
    Ok((report.exit_code, report.to_json()))
}

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Spectral bound `s(L)` of an irreducible generator.
#[pyfunction]
fn spectral_bound(l: Rows) -> PyResult<f64> {
    Ok(model_impl(&l, None, 2.0).map_err(py_err)?.spectral_bound)
}

/// `(lambda1(-L - diag a), eigenvector)` with a strictly positive vector.
#[pyfunction]
#[pyo3(name = "principal_eigenpair", signature = (l, potential=None))]
fn principal_eigenpair_py(l: Rows, potential: Option<Vec<f64>>) -> PyResult<(f64, Vec<f64>)> {
    let m = model_impl(&l, None, 2.0).map_err(py_err)?;
    let a = potential.unwrap_or_else(|| vec![0.0; m.n()]);
    let e = principal_eigenpair(&m, &a, Side::Primal).map_err(py_err)?;
    Ok((e.eigenvalue, e.eigenvector.iter().copied().collect()))
}

/// `(lambda1(a0), lambda1(a_inf), satisfied)`; infinities map to `float('inf')`.
#[pyfunction]
fn criterion(l: Rows, nonlinearity: &str) -> PyResult<(f64, f64, bool)> {
    criterion_impl(&l, nonlinearity).map_err(py_err)
}

/// Full solve; returns the solution report as JSON.
#[pyfunction]
#[pyo3(signature = (l, nonlinearity, options=None))]
fn solve_report(l: Rows, nonlinearity: &str, options: Option<&str>) -> PyResult<String> {
    solve_impl(&l, nonlinearity, options).map_err(py_err)
}

/// Runs a CLI command on a config file; returns `(exit_code, report_json)`.
#[pyfunction]
#[pyo3(signature = (command, config, seed=None, strict=false))]
fn run_command(command: &str, config: &str, seed: Option<u64>, strict: bool) -> PyResult<(i32, String)> {
    run_impl(command, config, seed, strict).map_err(py_err)
}

#[pymodule]
fn semilinear_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(spectral_bound, m)?)?;
    m.add_function(wrap_pyfunction!(principal_eigenpair_py, m)?)?;
    m.add_function(wrap_pyfunction!(criterion, m)?)?;
    m.add_function(wrap_pyfunction!(solve_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
