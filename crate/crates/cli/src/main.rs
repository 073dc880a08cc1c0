mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "hypocap", version, about = "Capacity and boundary regularity for Kolmogorov-type operators")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OperatorArgs {
    /// Operator JSON: {"p": [...], "A0": [[...]], "B": [[[...]]]}.
    #[arg(long)]
    pub operator: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PointArgs {
    /// Domain JSON tree.
    #[arg(long)]
    pub domain: PathBuf,
    /// Boundary point as "x1,...,xN,t".
    #[arg(long)]
    pub z0: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate an operator and write certificate.json.
    Validate {
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
    /// Series of shell potentials, G_r probe and verdict.
    Wiener {
        #[command(flatten)]
        op: OperatorArgs,
        #[command(flatten)]
        at: PointArgs,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 2)]
        kmin: usize,
        #[arg(long, default_value_t = 16)]
        kmax: usize,
        #[arg(long, default_value_t = 12)]
        resolution: usize,
        /// Decreasing radii, comma separated.
        #[arg(long, default_value = "1,0.5,0.25,0.125")]
        r_ladder: String,
    },
    /// Check a given cone, or search for one, inside the complement.
    Cone {
        #[command(flatten)]
        op: OperatorArgs,
        #[command(flatten)]
        at: PointArgs,
        /// Cone JSON: {"base": {...}, "R": r, "vertex": [...]}; searched for if absent.
        #[arg(long)]
        cone: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        samples: usize,
    },
    /// Sweeps of the structural inequalities; writes estimates.csv.
    Estimates {
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
    /// Density validation and optional hitting estimate; writes mc.csv.
    Mc {
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 40)]
        bins: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Target domain for a hitting estimate.
        #[arg(long, requires = "z0")]
        domain: Option<PathBuf>,
        #[arg(long)]
        z0: Option<String>,
        #[arg(long, default_value_t = 0.25)]
        h: f64,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
    },
    /// Equilibrium LP for a compact; writes capacity.json.
    Capacity {
        #[command(flatten)]
        op: OperatorArgs,
        /// Compact JSON: {"flat": ...}, {"solid_box": ...}, {"shell": ...} or {"g_r": ...}.
        #[arg(long)]
        compact: PathBuf,
        /// Domain for shell and G_r compacts.
        #[arg(long)]
        domain: Option<PathBuf>,
        #[arg(long)]
        z0: Option<String>,
        /// Write the final LP in text form here.
        #[arg(long)]
        lp_dump: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Runtime(format!("{}: {e}", cli.out.display())))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Validate { op, lambda } => commands::validate(&op, lambda, out),
        Command::Wiener { op, at, lambda, kmin, kmax, resolution, r_ladder } => {
            commands::wiener(&op, &at, lambda, kmin, kmax, resolution, &r_ladder, out)
        }
        Command::Cone { op, at, cone, samples } => commands::cone(&op, &at, cone.as_deref(), samples, out),
        Command::Estimates { op, samples, lambda } => commands::estimates(&op, samples, lambda, cli.seed, out),
        Command::Mc { op, t, bins, samples, domain, z0, h, steps, paths } => {
            let hit = domain.zip(z0).map(|(domain, z0)| commands::HitArgs { domain, z0, h, steps, paths });
            commands::mc(&op, t, bins, samples, hit, cli.seed, out)
        }
        Command::Capacity { op, compact, domain, z0, lp_dump } => {
            commands::capacity(&op, &compact, domain.as_deref(), z0.as_deref(), lp_dump.as_deref(), out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
