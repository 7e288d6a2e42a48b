use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gbulab_cli::{dispatch, parse_config, CliError, Options, Summary, Verb};

#[derive(Parser)]
#[command(name = "gbulab", version, about = "Gradient blow-up laboratory for the degenerate viscous Hamilton-Jacobi equation")]
struct Cli {
    #[command(subcommand)]
    verb: VerbArg,

    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: config `out`, else $GBULAB_OUT/<verb>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Seed for randomized property suites (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum VerbArg {
    /// Integrate one problem and store its trajectory.
    Simulate,
    /// Compare final fields over a decreasing list of eps.
    ContinueEps,
    /// Threshold/grid sweep and gradient blow-up verdict.
    DetectGbu,
    /// Construct and check the boundary barriers.
    CertifyBarrier,
    /// Bisect the initial amplitude between completion and blow-up.
    BisectCriterion,
    /// Run the compliance suite (or check a stored trajectory).
    Check,
    /// Principal Dirichlet eigenpair of the grid.
    Eig,
}

impl From<VerbArg> for Verb {
    fn from(v: VerbArg) -> Self {
        match v {
            VerbArg::Simulate => Verb::Simulate,
            VerbArg::ContinueEps => Verb::ContinueEps,
            VerbArg::DetectGbu => Verb::DetectGbu,
            VerbArg::CertifyBarrier => Verb::CertifyBarrier,
            VerbArg::BisectCriterion => Verb::BisectCriterion,
            VerbArg::Check => Verb::Check,
            VerbArg::Eig => Verb::Eig,
        }
    }
}

fn fail_early(verb: Verb, e: CliError) -> ExitCode {
    let summary = Summary {
        verb: verb.name().into(),
        kind: String::new(),
        status: e.status().into(),
        exit_code: e.exit_code(),
        message: e.to_string(),
        artifacts: Vec::new(),
    };
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    eprintln!("gbulab: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verb = Verb::from(cli.verb);
    let Some(path) = cli.config else {
        return fail_early(verb, CliError::Config("--config <path> is required".into()));
    };
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => return fail_early(verb, CliError::Config(format!("cannot read {}: {e}", path.display()))),
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => return fail_early(verb, e.into()),
    };
    let out = cli
        .out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| {
            let root = std::env::var_os("GBULAB_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("gbulab-out"));
            root.join(verb.name())
        });
    let opts = Options {
        out,
        jobs: cli.jobs,
        seed: cli.seed,
    };
    let summary = dispatch(verb, &cfg, &opts);
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    if summary.exit_code != 0 {
        eprintln!("gbulab: {}", summary.message);
    }
    ExitCode::from(summary.exit_code as u8)
}
