//! Commands behind the `semilin` binary. Each command returns a [`RunReport`]
//! whose `exit_code` follows a fixed contract:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | parse or input error |
//! | 2 | hypothesis failure |
//! | 3 | criterion failure |
//! | 4 | convergence failure |
//! | 5 | verification failure |

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use semilinear::config::ProblemConfig;
use semilinear::nonlinearity::{validate_hypotheses, HypothesisCertificate};
use semilinear::solver::{criterion_for, solve, SolutionReport, Status};
use semilinear::spectral::Criterion;
use semilinear::state_model::{validate_generator_degraded, GeneratorModel};
use semilinear::stochastic::{self, EstimatorResult};
use semilinear::suites::{self, Fault, SuiteResult};
use semilinear::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_CRITERION: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

/// Thread count override for the parallel suites.
pub const THREADS_ENV: &str = "SEMILIN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Validate,
    Criterion,
    Solve,
    Verify,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: rayon::current_num_threads(),
        }
    }
}

/// Kept apart so reports can be compared with timing masked out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSummary {
    pub n: usize,
    pub sub_markovian: bool,
    pub irreducible: bool,
    pub spectral_bound: f64,
}

impl From<&GeneratorModel> for GeneratorSummary {
    fn from(m: &GeneratorModel) -> Self {
        Self {
            n: m.n(),
            sub_markovian: m.sub_markovian,
            irreducible: m.irreducible,
            spectral_bound: m.spectral_bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Variant name, e.g. `NegativeOffDiagonal`.
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        let dbg = format!("{e:?}");
        let kind = dbg
            .split(|c: char| !c.is_alphanumeric())
            .next()
            .unwrap_or_default()
            .to_string();
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

/// Monte Carlo estimate against the matrix value it should reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub quantity: String,
    pub exact: f64,
    pub estimate: EstimatorResult,
    /// `|estimate - exact| / std_error`.
    pub z: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Command,
    pub exit_code: i32,
    pub seed: u64,
    pub environment: Environment,
    pub timing: Timing,
    pub generator: Option<GeneratorSummary>,
    pub hypotheses: Option<HypothesisCertificate>,
    pub criterion: Option<Criterion>,
    pub solution: Option<SolutionReport>,
    pub suites: Vec<SuiteResult>,
    pub oracle: Vec<OracleComparison>,
    /// Names of failing suites or checks.
    pub failing: Vec<String>,
    pub error: Option<ErrorReport>,
}

impl RunReport {
    fn new(command: Command, seed: u64) -> Self {
        Self {
            command,
            exit_code: EXIT_OK,
            seed,
            environment: Environment::current(),
            timing: Timing::default(),
            generator: None,
            hypotheses: None,
            criterion: None,
            solution: None,
            suites: Vec::new(),
            oracle: Vec::new(),
            failing: Vec::new(),
            error: None,
        }
    }

    fn fail(&mut self, e: &Error) {
        self.exit_code = exit_code_for(e);
        self.error = Some(e.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The same report with timing zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            timing: Timing::default(),
            ..self.clone()
        }
    }

    /// Solution vector as CSV, when the run produced one.
    pub fn solution_csv(&self) -> Option<String> {
        let u = self.solution.as_ref()?.u.as_ref()?;
        Some(semilinear::config::vector_csv(u))
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Parse(_)
        | Error::Io(_)
        | Error::NegativeOffDiagonal(..)
        | Error::DimensionMismatch { .. }
        | Error::InvalidMeasure(_)
        | Error::InvalidNonlinearity(_)
        | Error::StateOutOfRange { .. }
        | Error::NegativeArgument(_) => EXIT_PARSE,
        Error::NotIrreducible
        | Error::NotSubMarkovian { .. }
        | Error::PreconditionUnverified(_)
        | Error::MonotonicityNotStrict { .. }
        | Error::MissingLowerSlopeBound(_)
        | Error::BracketInvalid(_) => EXIT_HYPOTHESIS,
        Error::CriterionFailed { .. } => EXIT_CRITERION,
        Error::NoConvergence(_)
        | Error::DivergingBranch { .. }
        | Error::IllConditioned(_)
        | Error::ResidualTooLarge { .. }
        | Error::AlphaNotAboveSpectralBound { .. }
        | Error::SpectralBoundNotNegative(_)
        | Error::PositiveSpectralBound(_) => EXIT_CONVERGENCE,
    }
}

/// Options layered over the config document by the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strict: bool,
    pub oracle_only: bool,
    pub fault: Option<Fault>,
}

/// Runs `command`; failures are recorded in the report, never panicked.
pub fn run(command: Command, config: Result<ProblemConfig, Error>, ov: &Overrides) -> RunReport {
    let started = Instant::now();
    let seed = ov
        .seed
        .or_else(|| config.as_ref().ok().map(|c| c.seed))
        .unwrap_or(semilinear::config::DEFAULT_SEED);
    let mut report = RunReport::new(command, seed);
    match config {
        Err(e) => report.fail(&e),
        Ok(mut cfg) => {
            cfg.seed = seed;
            cfg.modes.strict |= ov.strict;
            cfg.modes.oracle_only |= ov.oracle_only;
            match command {
                Command::Validate => validate(&cfg, &mut report),
                Command::Criterion => criterion(&cfg, &mut report),
                Command::Solve => solve_cmd(&cfg, &mut report),
                Command::Verify => verify(&cfg, ov.fault, &mut report),
                Command::Oracle => oracle(&cfg, &mut report),
            }
        }
    }
    report.timing.wall_seconds = started.elapsed().as_secs_f64();
    report
}

fn load_model(cfg: &ProblemConfig, report: &mut RunReport) -> Option<GeneratorModel> {
    let model = cfg
        .generator_matrix()
        .and_then(|l| Ok((cfg.measure(l.nrows())?, l)))
        .and_then(|(space, l)| validate_generator_degraded(l, space));
    match model {
        Ok(m) => {
            report.generator = Some((&m).into());
            if !m.irreducible {
                report.fail(&Error::NotIrreducible);
                return None;
            }
            Some(m)
        }
        Err(e) => {
            report.fail(&e);
            None
        }
    }
}

fn validate(cfg: &ProblemConfig, report: &mut RunReport) {
    let Some(model) = load_model(cfg, report) else { return };
    let f = match cfg.nonlinearity(model.n()) {
        Ok(f) => f,
        Err(e) => return report.fail(&e),
    };
    let cert = validate_hypotheses(&f, &cfg.solver.grid);
    if !cert.passed() {
        report.exit_code = EXIT_HYPOTHESIS;
        report.failing.push("hypotheses".into());
    }
    report.hypotheses = Some(cert);
}

fn criterion(cfg: &ProblemConfig, report: &mut RunReport) {
    let Some(model) = load_model(cfg, report) else { return };
    let f = match cfg.nonlinearity(model.n()) {
        Ok(f) => f,
        Err(e) => return report.fail(&e),
    };
    match criterion_for(&model, &f) {
        Ok(c) => {
            if !c.satisfied {
                report.exit_code = EXIT_CRITERION;
                report.failing.push("criterion".into());
            }
            report.criterion = Some(c);
        }
        Err(e) => report.fail(&e),
    }
}

fn solve_cmd(cfg: &ProblemConfig, report: &mut RunReport) {
    let Some(model) = load_model(cfg, report) else { return };
    let f = match cfg.nonlinearity(model.n()) {
        Ok(f) => f,
        Err(e) => return report.fail(&e),
    };
    let opts = cfg.solve_options();
    let sol = match solve(&model, &f, &opts) {
        Ok(s) => s,
        Err(e) => return report.fail(&e),
    };
    report.hypotheses = Some(sol.hypotheses.clone());
    report.criterion = Some(sol.criterion.clone());
    match sol.status {
        Status::Solved => {}
        Status::CriterionFailed => {
            report.exit_code = EXIT_CRITERION;
            report.failing.push("criterion".into());
        }
        Status::DivergingBranch => {
            report.exit_code = EXIT_CONVERGENCE;
            report.failing.push("diverging_branch".into());
        }
    }
    if cfg.modes.oracle {
        if let Some(u) = sol.solution() {
            solution_oracle(cfg, &model, &f, &u, report);
        }
    }
    report.solution = Some(sol);
}

/// Monte Carlo check of `u = R f(u)` at the configured start state, possible
/// when the original generator is sub-Markovian with negative bound.
fn solution_oracle(
    cfg: &ProblemConfig,
    model: &GeneratorModel,
    f: &semilinear::Nonlinearity,
    u: &DVector<f64>,
    report: &mut RunReport,
) {
    if !(model.sub_markovian && model.spectral_bound < 0.0) {
        return;
    }
    let fu = DVector::from_fn(u.len(), |i, _| f.value(i, u[i]));
    let start = cfg.oracle.start;
    match stochastic::estimate_resolvent_apply(model, &fu, 0.0, start, cfg.oracle.paths, cfg.seed) {
        Ok(est) => push_comparison(report, "solution_fixed_point", u[start], est),
        Err(e) => report.fail(&e),
    }
}

fn push_comparison(report: &mut RunReport, quantity: &str, exact: f64, estimate: EstimatorResult) {
    let z = (estimate.value - exact).abs() / estimate.std_error.max(f64::MIN_POSITIVE);
    let agrees = z <= 3.0;
    if !agrees {
        report.failing.push(quantity.to_string());
        if report.exit_code == EXIT_OK {
            report.exit_code = EXIT_VERIFY;
        }
    }
    report.oracle.push(OracleComparison {
        quantity: quantity.to_string(),
        exact,
        estimate,
        z: if z.is_finite() { z } else { f64::MAX },
        agrees,
    });
}

fn verify(cfg: &ProblemConfig, fault: Option<Fault>, report: &mut RunReport) {
    report.suites = suites::run_all(cfg.seed, &cfg.suites, cfg.modes.oracle_only, fault);
    // A bundled problem, if any, must also solve cleanly.
    if cfg.generator.is_some() && cfg.nonlinearity.is_some() && !cfg.modes.oracle_only {
        let mut inner = RunReport::new(Command::Solve, cfg.seed);
        solve_cmd(cfg, &mut inner);
        let ok = inner.exit_code == EXIT_OK;
        report.suites.push(SuiteResult {
            name: "config_solution".into(),
            trials: 1,
            passed: ok as usize,
            required: 1,
            worst: inner.solution.as_ref().and_then(|s| s.residual),
            threshold: cfg.solver.residual_tol,
            failures: inner.error.iter().map(|e| e.message.clone()).collect(),
        });
        report.generator = inner.generator;
        report.solution = inner.solution;
    }
    report.failing = report
        .suites
        .iter()
        .filter(|s| !s.ok())
        .map(|s| s.name.clone())
        .collect();
    if !report.failing.is_empty() {
        report.exit_code = EXIT_VERIFY;
    }
}

fn oracle(cfg: &ProblemConfig, report: &mut RunReport) {
    let Some(model) = load_model(cfg, report) else { return };
    let n = model.n();
    let o = &cfg.oracle;
    let source = DVector::from_vec(o.source.clone().unwrap_or_else(|| vec![1.0; n]));
    let potential = o.potential.clone().unwrap_or_else(|| vec![0.0; n]);
    if source.len() != n || potential.len() != n {
        return report.fail(&Error::DimensionMismatch {
            expected: n,
            found: source.len().min(potential.len()),
        });
    }
    let result = (|| -> semilinear::Result<()> {
        let exact = model.resolvent_apply(o.alpha, &source)?[o.start];
        let est = stochastic::estimate_resolvent_apply(&model, &source, o.alpha, o.start, o.paths, cfg.seed)?;
        push_comparison(report, "resolvent", exact, est);
        let pt = suites::feynman_kac_matrix(&model, &potential, o.t);
        let exact = (pt * &source)[o.start];
        let est = stochastic::estimate_feynman_kac(
            &model,
            &potential,
            &source,
            o.t,
            o.start,
            o.paths,
            cfg.seed.wrapping_add(1),
        )?;
        push_comparison(report, "feynman_kac", exact, est);
        Ok(())
    })();
    if let Err(e) = result {
        report.fail(&e);
    }
}

/// Short plain-text rendering of a report.
pub fn summary(r: &RunReport) -> String {
    let mut out = Vec::new();
    if let Some(g) = &r.generator {
        out.push(format!(
            "generator: n = {}, sub-Markovian = {}, irreducible = {}, s(L) = {:.6e}",
            g.n, g.sub_markovian, g.irreducible, g.spectral_bound
        ));
    }
    if let Some(h) = &r.hypotheses {
        out.push(format!("hypotheses: {:?}", h.verdict));
    }
    if let Some(c) = &r.criterion {
        out.push(format!(
            "criterion: lambda1(a0) = {}, lambda1(a_inf) = {}, satisfied = {}",
            c.lambda1_a0, c.lambda1_ainf, c.satisfied
        ));
    }
    if let Some(s) = &r.solution {
        out.push(format!("status: {:?}", s.status));
        if let Some(res) = s.residual {
            out.push(format!("residual: {res:.3e}"));
        }
        if let Some(u) = &s.u {
            let shown: Vec<String> = u.iter().take(8).map(|x| format!("{x:.10}")).collect();
            let more = if u.len() > 8 { ", ..." } else { "" };
            out.push(format!("u = [{}{more}]", shown.join(", ")));
        }
        for w in &s.warnings {
            out.push(format!("warning: {w}"));
        }
    }
    for s in &r.suites {
        out.push(format!(
            "{} {}: {}/{} (need {}), worst {}",
            if s.ok() { "PASS" } else { "FAIL" },
            s.name,
            s.passed,
            s.trials,
            s.required,
            s.worst.map_or("n/a".to_string(), |w| format!("{w:.3e}")),
        ));
        for f in &s.failures {
            out.push(format!("    {f}"));
        }
    }
    for o in &r.oracle {
        out.push(format!(
            "{} {}: exact {:.8}, estimate {:.8} +/- {:.2e} ({:.2} SE, {} paths)",
            if o.agrees { "PASS" } else { "FAIL" },
            o.quantity,
            o.exact,
            o.estimate.value,
            o.estimate.std_error,
            o.z,
            o.estimate.n_paths
        ));
    }
    if let Some(e) = &r.error {
        out.push(format!("error ({}): {}", e.kind, e.message));
    }
    if !r.failing.is_empty() {
        out.push(format!("failing: {}", r.failing.join(", ")));
    }
    out.push(format!("exit code {}", r.exit_code));
    out.join("\n")
}
