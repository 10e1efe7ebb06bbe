use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "cfcal",
    version,
    about = "Car-following calibration and probabilistic simulation",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Calibrate the hierarchical dynamic IDM on trajectory data.
    Calibrate(CalibrateArgs),
    /// Probabilistic single-follower simulation against a leader channel.
    Simulate(SimulateArgs),
    /// Multi-vehicle ring-road simulation.
    Ringroad(RingroadArgs),
    /// Platoon simulation: each vehicle follows the simulated vehicle ahead.
    Platoon(PlatoonArgs),
    /// Horizon scoring (RMSE / CRPS) of simulations against recorded data.
    Evaluate(EvaluateArgs),
    /// Generate synthetic trajectories with known ground truth.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Master RNG seed. Falls back to $CFCAL_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// TOML or JSON configuration file with hyperparameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelSourceArgs {
    /// Posterior draws CSV produced by `calibrate`.
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    /// How to turn posterior draws into per-vehicle models:
    /// "population" samples a new driver from each drawn hierarchy,
    /// "driver" reuses a fitted driver's parameters.
    #[arg(long, default_value = "population")]
    pub draw_mode: String,
    /// Explicit IDM parameters "v0,s0,T,alpha,beta" (conflicts with --posterior).
    #[arg(long)]
    pub theta: Option<String>,
    /// Explicit AR lag coefficients "rho1,rho2,..." (with --theta).
    #[arg(long)]
    pub rho: Option<String>,
    /// White-noise scale for explicit parameters.
    #[arg(long, default_value_t = 0.016)]
    pub sigma_eta: f64,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Trajectory CSV (columns t, driver_id, x_follower, v_follower,
    /// x_leader, v_leader, [a_follower], lead_length).
    #[arg(long)]
    pub data: PathBuf,
    /// AR order p.
    #[arg(long, default_value_t = 5)]
    pub order: usize,
    /// Observation channel: accel | speed | position | joint.
    #[arg(long, default_value = "joint")]
    pub likelihood: String,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 3000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0.8)]
    pub target_accept: f64,
    /// Use the dynamic-trajectory (no-U-turn) sampler.
    #[arg(long)]
    pub nuts: bool,
    #[arg(long, default_value_t = 0.5)]
    pub init_jitter: f64,
    /// Drop trajectories shorter than this many seconds.
    #[arg(long, default_value_t = 0.0)]
    pub min_duration: f64,
    /// Downsample the input to this rate first (must divide the source rate).
    #[arg(long)]
    pub target_hz: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Trajectory CSV supplying the leader channel and follower initial state.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Driver id within --data (first driver when omitted).
    #[arg(long)]
    pub driver: Option<String>,
    /// Synthetic leader profile "constant:V" or "sawtooth:LO:HI:PERIOD"
    /// (alternative to --data).
    #[arg(long)]
    pub leader: Option<String>,
    /// Horizon in seconds for a synthetic leader.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Sample rate in Hz for a synthetic leader.
    #[arg(long, default_value_t = 5.0)]
    pub hz: f64,
    #[arg(long, default_value_t = 1000)]
    pub rollouts: usize,
    /// Also write every rollout (rollouts.csv), not only the quantile bands.
    #[arg(long)]
    pub save_rollouts: bool,
    /// Emit SVG plots.
    #[arg(long)]
    pub plot: bool,
    #[command(flatten)]
    pub source: ModelSourceArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct RingroadArgs {
    #[arg(long, default_value_t = 128.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 32)]
    pub vehicles: usize,
    #[arg(long, default_value_t = 11.6)]
    pub v_init: f64,
    #[arg(long, default_value_t = 15000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dt: f64,
    #[arg(long, default_value_t = 5.0)]
    pub vehicle_length: f64,
    /// Start every vehicle at the deterministic equilibrium speed for the
    /// uniform gap instead of --v-init.
    #[arg(long)]
    pub equilibrium_init: bool,
    /// Shift the time-space output into a frame moving at this speed (m/s).
    #[arg(long, default_value_t = 0.0)]
    pub frame_speed: f64,
    #[arg(long)]
    pub plot: bool,
    #[command(flatten)]
    pub source: ModelSourceArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct PlatoonArgs {
    /// Trajectory CSV supplying the platoon leader channel (first driver).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic leader profile "constant:V" or "sawtooth:LO:HI:PERIOD".
    #[arg(long)]
    pub leader: Option<String>,
    #[arg(long, default_value_t = 400.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 5.0)]
    pub hz: f64,
    /// Number of successive followers.
    #[arg(long, default_value_t = 4)]
    pub followers: usize,
    #[arg(long, default_value_t = 1000)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 5.0)]
    pub vehicle_length: f64,
    #[arg(long)]
    pub plot: bool,
    #[command(flatten)]
    pub source: ModelSourceArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated horizons in seconds.
    #[arg(long, default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub horizons: String,
    /// Fraction start stride, seconds.
    #[arg(long, default_value_t = 1.0)]
    pub stride: f64,
    #[arg(long, default_value_t = 1000)]
    pub rollouts: usize,
    #[command(flatten)]
    pub source: ModelSourceArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub drivers: usize,
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 5.0)]
    pub hz: f64,
    /// Leader profile "constant:V" or "sawtooth:LO:HI:PERIOD".
    #[arg(long, default_value = "sawtooth:4:20:40")]
    pub leader: String,
    /// Population IDM parameters "v0,s0,T,alpha,beta" (Table-style defaults
    /// when omitted).
    #[arg(long)]
    pub theta: Option<String>,
    /// Population AR coefficients "rho1,...".
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long, default_value_t = 0.016)]
    pub sigma_eta: f64,
    /// Inter-driver spread of ln theta.
    #[arg(long, default_value_t = 0.05)]
    pub theta_spread: f64,
    #[arg(long, default_value_t = 0.002)]
    pub sigma_v: f64,
    #[arg(long, default_value_t = 0.002)]
    pub sigma_x: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Resolve the effective seed: explicit flag, then $CFCAL_SEED, then 0.
pub fn resolve_seed(explicit: Option<u64>) -> u64 {
    explicit
        .or_else(|| std::env::var("CFCAL_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}
