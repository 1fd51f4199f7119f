//! `thermoflow`: partition sums, specification, expansivity, decompositions and
//! equilibrium-state numerics for flows described by one config file.
//!
//! Exit codes: 0 success, 1 configuration error, 2 backend error, 3 computation
//! error. Failures print `{"code", "message"}` on stderr.

mod backend;
mod commands;
mod failure;
mod output;
mod report;
mod settings;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;
use thermoflow::decomposition::{SingularityAvoidance, TrivialSplitter};
use thermoflow::BackendSpec;

use backend::Backend;
use commands::{ConstructArgs, DecomposeArgs, ExpansivityArgs, GibbsArgs, PressureArgs, SpecArgs};
use failure::{Failure, Outcome};
use settings::{Common, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "thermoflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Partition sums `log λ(t)` over a t-grid and the fitted pressure.
    Pressure {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: PressureArgs,
    },
    /// Glue random segments and verify the shadowing certificate.
    Spec {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: SpecArgs,
    },
    /// Non-expansive fraction and obstruction pressure on sampled points of Λ.
    Expansivity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: ExpansivityArgs,
    },
    /// Prefix/core/suffix splits of sampled segments.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: DecomposeArgs,
    },
    /// Limit-candidate measure as weighted atoms.
    Construct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: ConstructArgs,
    },
    /// Lower and upper Gibbs ratios of a constructed measure.
    Gibbs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: GibbsArgs,
    },
    /// Aggregate a results directory into report.csv and summary.json.
    Report { dir: PathBuf },
}

macro_rules! on_backend {
    ($b:expr, $c:ident => $body:expr) => {
        match $b {
            Backend::Symbolic($c) => $body,
            Backend::Ode($c) => $body,
        }
    };
}

fn fail(f: Failure) -> ! {
    eprintln!("{}", f.to_json());
    std::process::exit(f.exit_code())
}

fn init_threads() -> Outcome {
    let Ok(raw) = std::env::var("THERMOFLOW_THREADS") else {
        return Ok(());
    };
    let n = raw
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Failure::Config(format!(
                "THERMOFLOW_THREADS = {raw:?} is not a positive integer"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(e.to_string()))
}

fn setup(c: &Common) -> Result<(Backend, RunConfig), Failure> {
    let spec = BackendSpec::load(&c.config)?;
    let run = RunConfig::resolve(c, &spec.canonical, spec.seed, spec.is_symbolic())?;
    for w in run.warnings() {
        eprintln!("{}", json!({ "warning": w }));
    }
    std::fs::create_dir_all(&run.out_dir)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", run.out_dir.display())))?;
    Ok((backend::load(&spec, &run)?, run))
}

fn run(command: Command) -> Outcome {
    init_threads()?;
    match command {
        Command::Report { dir } => report::run(&dir),
        Command::Pressure { common, args } => {
            let (b, run) = setup(&common)?;
            on_backend!(b, c => commands::pressure(&c, &run, &args))
        }
        Command::Spec { common, args } => {
            let (b, run) = setup(&common)?;
            on_backend!(b, c => commands::spec(&c, &run, &args))
        }
        Command::Expansivity { common, args } => match setup(&common)? {
            (Backend::Symbolic(c), run) => commands::expansivity_exact(&c, &run, &args),
            (Backend::Ode(c), run) => commands::expansivity_proxy(&c, &run, &args),
        },
        Command::Decompose { common, args } => match setup(&common)? {
            (Backend::Symbolic(c), run) => {
                commands::decompose(&c, &run, &args, &TrivialSplitter, "trivial")
            }
            (Backend::Ode(c), run) => {
                let splitter = SingularityAvoidance {
                    r0: args.r0,
                    ..SingularityAvoidance::default()
                };
                commands::decompose(&c, &run, &args, &splitter, "singularity-avoidance")
            }
        },
        Command::Construct { common, args } => {
            let (b, run) = setup(&common)?;
            on_backend!(b, c => commands::construct(&c, &run, &args))
        }
        Command::Gibbs { common, args } => {
            let (b, run) = setup(&common)?;
            on_backend!(b, c => commands::gibbs(&c, &run, &args))
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => fail(Failure::Config(e.to_string().trim().to_string())),
    };
    if let Err(f) = run(cli.command) {
        fail(f);
    }
}
