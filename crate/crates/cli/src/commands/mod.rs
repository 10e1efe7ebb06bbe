mod calibrate;
mod evaluate;
mod platoon;
mod ringroad;
mod simulate;
mod synth;

use crate::args::{Cli, Command};
use anyhow::{Context, Result};
use cfcal_core::trajectory::{load_trajectories, CsvSchema, Trajectory};
use std::path::Path;

pub fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Calibrate(a) => calibrate::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Ringroad(a) => ringroad::run(a),
        Command::Platoon(a) => platoon::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Synth(a) => synth::run(a),
    }
}

pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub fn load_data(path: &Path) -> Result<Vec<Trajectory>> {
    let trajs = load_trajectories(path, &CsvSchema::default())
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(trajs)
}
