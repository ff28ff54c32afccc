use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use semilin_cli::{run, summary, Command, Overrides, RunReport, THREADS_ENV};
use semilinear::config::ProblemConfig;
use semilinear::suites::Fault;
use semilinear::Error;

#[derive(Parser)]
#[command(name = "semilin", version, about = "Positive solutions of -Lu = f(x, u) on finite state spaces")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the generator and the growth / lower-slope hypotheses.
    Validate(Common),
    /// Evaluate the spectral existence criterion.
    Criterion(Common),
    /// Run the full pipeline and write u.
    Solve(Common),
    /// Run the randomized property suites.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Run only the Monte Carlo agreement suites.
        #[arg(long)]
        oracle_only: bool,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Compare Monte Carlo estimates with matrix values.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Problem document (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report.json and, after solve, u.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Treat a failed criterion or divergence as an error.
    #[arg(long)]
    strict: bool,
    /// Print the JSON report instead of a summary.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    FlipResolventSign,
}

fn load(path: &Option<PathBuf>, required: bool) -> Result<ProblemConfig, Error> {
    match path {
        Some(p) => ProblemConfig::load(p),
        None if required => Err(Error::Parse("--config is required for this command".into())),
        None => Ok(ProblemConfig::default()),
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn emit(report: &RunReport, common: &Common) -> std::io::Result<()> {
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), report.to_json() + "\n")?;
        if let Some(csv) = report.solution_csv() {
            std::fs::write(dir.join("u.csv"), csv)?;
        }
    }
    let text = if common.json { report.to_json() } else { summary(report) };
    // A closed pipe (`semilin ... | head`) is not an error worth reporting.
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let (command, common, overrides) = match cli.command {
        Cmd::Validate(c) => (Command::Validate, c, Overrides::default()),
        Cmd::Criterion(c) => (Command::Criterion, c, Overrides::default()),
        Cmd::Solve(c) => (Command::Solve, c, Overrides::default()),
        Cmd::Oracle(c) => (Command::Oracle, c, Overrides::default()),
        Cmd::Verify {
            common,
            oracle_only,
            inject_fault,
        } => {
            let fault = inject_fault.map(|f| match f {
                FaultArg::FlipResolventSign => Fault::FlipResolventSign,
            });
            let ov = Overrides {
                oracle_only,
                fault,
                ..Default::default()
            };
            (Command::Verify, common, ov)
        }
    };
    let overrides = Overrides {
        seed: common.seed,
        strict: common.strict,
        ..overrides
    };
    let config = load(&common.config, command != Command::Verify);
    let report = run(command, config, &overrides);
    if let Err(e) = emit(&report, &common) {
        eprintln!("semilin: cannot write output: {e}");
        return ExitCode::from(semilin_cli::EXIT_PARSE as u8);
    }
    ExitCode::from(report.exit_code as u8)
}
