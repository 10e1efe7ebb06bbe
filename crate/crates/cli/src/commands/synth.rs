use crate::args::{resolve_seed, SynthArgs};
use crate::models::{parse_floats, parse_leader_profile};
use crate::{UsageError, EXIT_OK};
use anyhow::{bail, Result};
use cfcal_core::ar::ArCoefficients;
use cfcal_core::idm::IdmParams;
use cfcal_core::likelihood::DriverModel;
use cfcal_core::synth::{generate, table1_population_truth, GroundTruth};
use cfcal_core::trajectory::write_trajectories_csv;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::time::Instant;

pub fn run(args: SynthArgs) -> Result<u8> {
    let t0 = Instant::now();
    let seed = resolve_seed(args.common.seed);
    let leader = parse_leader_profile(&args.leader)?;

    let (idm_default, ar_default) = table1_population_truth();
    let idm_pop = match &args.theta {
        Some(text) => {
            let th = parse_floats(text, "theta")?;
            if th.len() != 5 {
                bail!(UsageError("--theta needs exactly 5 values".into()));
            }
            IdmParams::from_array([th[0], th[1], th[2], th[3], th[4]])?
        }
        None => idm_default,
    };
    let rho_pop = match &args.rho {
        Some(text) => parse_floats(text, "rho")?,
        None => ar_default.rho.clone(),
    };
    let ar_pop = ArCoefficients::new(rho_pop, args.sigma_eta)?;

    // scatter driver-level parameters around the population values
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let log_pop: Vec<f64> = idm_pop.as_array().iter().map(|v| v.ln()).collect();
    let mut drivers = Vec::with_capacity(args.drivers);
    for _ in 0..args.drivers {
        let theta: Vec<f64> = log_pop
            .iter()
            .map(|m| (m + args.theta_spread * normal.sample(&mut rng)).exp())
            .collect();
        let rho: Vec<f64> =
            ar_pop.rho.iter().map(|r| r + 0.01 * normal.sample(&mut rng)).collect();
        let ar = ArCoefficients::new(rho, ar_pop.sigma_eta)?;
        let ar = if cfcal_core::ar::is_stationary(&ar) { ar } else { ar_pop.clone() };
        drivers.push(DriverModel::new(
            IdmParams::from_array([theta[0], theta[1], theta[2], theta[3], theta[4]])?,
            ar,
        ));
    }
    let gt = GroundTruth {
        drivers,
        sigma_v: args.sigma_v,
        sigma_x: args.sigma_x,
        leader,
        seed,
    };
    let dt = 1.0 / args.hz;
    let pairs = generate(&gt, args.duration, dt)?;

    super::ensure_out_dir(&args.common.out)?;
    let mut manifest = crate::manifest::RunManifest::new(
        "synth",
        seed,
        serde_json::json!({
            "drivers": args.drivers,
            "duration": args.duration,
            "hz": args.hz,
            "leader": args.leader,
            "theta": idm_pop.as_array(),
            "rho": ar_pop.rho,
            "sigma_eta": args.sigma_eta,
            "theta_spread": args.theta_spread,
            "sigma_v": args.sigma_v,
            "sigma_x": args.sigma_x,
        }),
    );

    let observed: Vec<_> = pairs.iter().map(|(_, o)| o.clone()).collect();
    let latent: Vec<_> = pairs.into_iter().map(|(l, _)| l).collect();
    let path = manifest.record_output(&args.common.out, "data.csv");
    write_trajectories_csv(std::io::BufWriter::new(std::fs::File::create(path)?), &observed)?;
    let path = manifest.record_output(&args.common.out, "latent.csv");
    write_trajectories_csv(std::io::BufWriter::new(std::fs::File::create(path)?), &latent)?;
    std::fs::write(
        manifest.record_output(&args.common.out, "truth.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "drivers": gt.drivers,
            "sigma_v": gt.sigma_v,
            "sigma_x": gt.sigma_x,
            "seed": gt.seed,
        }))?,
    )?;
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&args.common.out)?;
    println!(
        "generated {} drivers x {:.0} s at {} Hz in {:.2} s",
        args.drivers, args.duration, args.hz, manifest.wall_time_s
    );
    Ok(EXIT_OK)
}
