//! `cdkn`: transport, curvature-dimension checks and Poincaré certificates on
//! finite metric measure spaces.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cdkn::entropy::Dim;

#[derive(Debug, Parser)]
#[command(name = "cdkn", version, about = "Curvature-dimension checks on finite metric measure spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Space file (`cdkn-space/1`).
    #[arg(long, global = true)]
    pub space: Option<PathBuf>,
    /// Chain resolution.
    #[arg(long, global = true, default_value_t = 8)]
    pub k: usize,
    /// Relative chain tolerance; 1.5/k when omitted.
    #[arg(long, global = true)]
    pub eps_geo: Option<f64>,
    /// Curvature bound K; taken from the space metadata, else 0.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub kappa: Option<f64>,
    /// Dimension N (a number or `inf`); taken from the space metadata, else 1.
    #[arg(long, global = true)]
    pub dim: Option<Dim>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 20)]
    pub samples: usize,
    /// Enumeration cap for chains and plans.
    #[arg(long, global = true)]
    pub cap: Option<usize>,
    /// Tolerance; each command has its own default.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Render an SVG plot of the report.
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
}

/// Measures are `uniform`, `dirac:<point>` or comma-separated weights.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Pair {
    #[arg(long)]
    pub mu: Option<String>,
    #[arg(long)]
    pub nu: Option<String>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Check the metric axioms and summarize the space.
    Validate,
    /// Write a bundled example space file to `--out` or standard output.
    Generate {
        /// segment, grid2d, circle, tripod, theta or weighted_tree.
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 65)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        arm_length: f64,
        #[arg(long, default_value_t = 0.5)]
        arm_separation: f64,
        #[arg(long, default_value_t = 16)]
        subdivisions: usize,
    },
    /// Quadratic Wasserstein distance and an optimal coupling.
    W2 {
        #[command(flatten)]
        pair: Pair,
    },
    /// Displacement interpolation along an optimal dynamical plan.
    Interpolate {
        #[command(flatten)]
        pair: Pair,
    },
    /// Entropy of a measure: Rényi for finite N, Shannon for N = inf.
    Entropy {
        #[arg(long)]
        mu: Option<String>,
        /// Evaluate `∫ρ^p` instead.
        #[arg(long)]
        power: Option<f64>,
    },
    /// Distortion coefficient at time t and distance d.
    Beta {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        dist: f64,
        /// Diameter for the lower bound; defaults to `dist`.
        #[arg(long)]
        diameter: Option<f64>,
    },
    /// CD(K, N) on seeded random pairs.
    CdCheck,
    /// Convexity of the critical entropy along every enumerated plan.
    ConvexityCheck {
        #[command(flatten)]
        pair: Pair,
    },
    /// Density bound along an optimal plan.
    DensityCheck {
        #[command(flatten)]
        pair: Pair,
    },
    /// EVI residuals of a supplied flow.
    EviCheck {
        /// JSON file `{"samples": [{"t": .., "weights": [..]}, ..]}`; a
        /// constant flow at `--mu` when omitted.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        mu: Option<String>,
        #[arg(long)]
        nu: Option<String>,
    },
    /// Certify the local Poincaré inequality on one ball.
    PoincareCertify {
        #[arg(long, default_value_t = 0)]
        center: usize,
        #[arg(long)]
        radius: f64,
        /// `distance:<p>`, `lipschitz:<seed>` or `ramp:<p>:<start>:<width>`.
        #[arg(long, default_value = "distance:0")]
        function: String,
        /// The strong form (λ = 1) instead of the weak one (λ = 2).
        #[arg(long)]
        strong: bool,
        /// Slope radius for the upper gradient; one chain hop when omitted.
        #[arg(long)]
        neighbor_radius: Option<f64>,
    },
    /// Weak certificates over seeded balls and the standard function suite.
    PoincareSweep {
        #[arg(long, default_value_t = 10)]
        balls: usize,
        #[arg(long)]
        neighbor_radius: Option<f64>,
    },
    /// Distinct-geodesic counts from a base point.
    Uniqueness {
        #[arg(long, default_value_t = 0)]
        base: usize,
    },
    /// Search for branching that breaks Rényi convexity.
    BranchSearch {
        /// Every base point in turn when omitted.
        #[arg(long)]
        base: Option<usize>,
    },
    /// Doubling constant over a radius sweep.
    Doubling {
        /// Comma-separated radii; a sweep from 3 grid pitches when omitted.
        #[arg(long)]
        radii: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { output::EXIT_USAGE } else { 0 });
        }
    };
    if let Some(n) = std::env::var("CDKN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    ExitCode::from(commands::run(&cli))
}
