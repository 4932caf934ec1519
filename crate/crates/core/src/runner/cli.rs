use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::config::{ProbeCheck, ProbeSpace};
use super::{execute, validate_manifest, RunContext};

#[derive(Debug, Parser)]
#[command(name = "hkflow", version, about = "HK/SHK distances, minimizing movements and EVI diagnostics")]
pub struct Cli {
    /// JSON config of the verb; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for reports and manifest.json.
    #[arg(long, global = true, default_value = "hkflow-out")]
    pub out: PathBuf,
    /// Seed of randomized suites; overrides any seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Multiplies every assertion slack.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub tol_scale: f64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Verb {
    /// HK or SHK distance between two measures.
    Distance,
    /// Minimizing-movement run with density-bound checks.
    MmRun,
    /// Integrated EVI residuals and error budget of an `mm-run` result.
    EviCheck {
        /// Run file written by `mm-run`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// JSON list of `{id, density}` observers.
        #[arg(long)]
        observers: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// L¹ gap between MM runs and the limit PDE across time steps.
    PdeCompare,
    /// Angle, Cauchy–Schwarz and concavity probes on model spaces.
    GeometryProbe {
        #[arg(long, value_enum)]
        space: Option<ProbeSpace>,
        #[arg(long, value_enum)]
        check: Option<ProbeCheck>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Convexity-transfer estimates and the `Q_p` monotonicity certificate.
    AppendixCheck {
        /// Exponents, comma separated.
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Sup-distance between MM interpolants at successive time steps.
    ConvergenceStudy,
    /// Re-checks the report hashes of `--out` against its manifest.
    Validate,
}

impl Verb {
    pub fn name(&self) -> &'static str {
        match self {
            Verb::Distance => "distance",
            Verb::MmRun => "mm-run",
            Verb::EviCheck { .. } => "evi-check",
            Verb::PdeCompare => "pde-compare",
            Verb::GeometryProbe { .. } => "geometry-probe",
            Verb::AppendixCheck { .. } => "appendix-check",
            Verb::ConvergenceStudy => "convergence-study",
            Verb::Validate => "validate",
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("HKFLOW_LOG", "error");
    let _ = env_logger::Builder::from_env(env).try_init();
}

/// Parses arguments and runs the verb; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    if let Verb::Validate = cli.verb {
        return match validate_manifest(&cli.out) {
            Ok(check) => {
                println!("{}", serde_json::to_string_pretty(&check).expect("check serializes"));
                i32::from(!check.ok())
            }
            Err(e) => {
                eprintln!("hkflow validate: {e}");
                super::exit_code(&e)
            }
        };
    }
    let ctx = RunContext { config: cli.config, out: cli.out, seed: cli.seed, tol_scale: cli.tol_scale };
    execute(&ctx, &cli.verb)
}
