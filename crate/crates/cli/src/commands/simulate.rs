use crate::args::{resolve_seed, SimulateArgs};
use crate::models::{parse_leader_profile, ResolvedSource};
use crate::posterior_io::{write_bands_csv, write_timespace_csv};
use crate::{UsageError, EXIT_OK};
use anyhow::{bail, Context, Result};
use cfcal_core::sim::{ensemble_envelope, equilibrium_init, simulate_follower_models, FollowerInit, SimVar};
use cfcal_core::synth::{leader_profile, LeaderChannel};
use std::time::Instant;

pub fn run(args: SimulateArgs) -> Result<u8> {
    let t0 = Instant::now();
    let seed = resolve_seed(args.common.seed);
    let config = crate::config::load_config(args.common.config.as_deref())?;
    let source = ResolvedSource::resolve(&args.source, config.hyper.sigma_rho)?;

    // leader channel, follower init, and the recorded truth when available
    let (leader, init, truth_v): (LeaderChannel, FollowerInit, Option<Vec<f64>>) =
        match (&args.data, &args.leader) {
            (Some(_), Some(_)) => bail!(UsageError("--data conflicts with --leader".into())),
            (None, None) => bail!(UsageError("need --data or --leader".into())),
            (Some(path), None) => {
                let trajs = super::load_data(path)?;
                let traj = match &args.driver {
                    Some(id) => trajs
                        .iter()
                        .find(|t| &t.driver_id == id)
                        .with_context(|| format!("driver '{id}' not found in {}", path.display()))?,
                    None => &trajs[0],
                };
                let leader = LeaderChannel::from_trajectory(traj);
                let init = FollowerInit { x0: traj.x_f[0], v0: traj.v_f[0] };
                (leader, init, Some(traj.v_f.clone()))
            }
            (None, Some(profile)) => {
                let kind = parse_leader_profile(profile)?;
                let dt = 1.0 / args.hz;
                let n = (args.duration * args.hz).round() as usize + 1;
                let leader = leader_profile(&kind, n, dt, 0.0, 5.0, None)?;
                let models = source.sample_models(1, seed)?;
                let init = equilibrium_init(&leader, &models[0].idm)?;
                (leader, init, None)
            }
        };

    let models = source.sample_models(args.rollouts, seed)?;
    let ensemble = simulate_follower_models(&leader, init, &models, None, seed)?;
    let bands = ensemble_envelope(&ensemble, &[0.025, 0.5, 0.975])?;
    let mean_x = ensemble.mean_series(SimVar::Position);
    let mean_v = ensemble.mean_series(SimVar::Speed);
    let mean_a = ensemble.mean_series(SimVar::Accel);

    super::ensure_out_dir(&args.common.out)?;
    let mut manifest = crate::manifest::RunManifest::new(
        "simulate",
        seed,
        serde_json::json!({
            "data": args.data,
            "driver": args.driver,
            "leader": args.leader,
            "duration": args.duration,
            "hz": args.hz,
            "rollouts": args.rollouts,
            "draw_mode": args.source.draw_mode,
            "posterior": args.source.posterior,
            "theta": args.source.theta,
            "rho": args.source.rho,
            "sigma_eta": args.source.sigma_eta,
        }),
    );

    write_bands_csv(
        &manifest.record_output(&args.common.out, "ensemble_bands.csv"),
        ensemble.dt,
        &bands,
        (&mean_x, &mean_v, &mean_a),
    )?;
    if args.save_rollouts {
        write_timespace_csv(
            &manifest.record_output(&args.common.out, "rollouts.csv"),
            ensemble.dt,
            &ensemble.xs,
            &ensemble.vs,
            0.0,
            None,
        )?;
    }
    if args.plot {
        let svg = crate::plot::envelope_svg(
            ensemble.dt,
            &mean_v,
            &bands.v[0],
            &bands.v[2],
            &bands.v[1],
            truth_v.as_deref(),
            "Follower speed envelope",
            "speed [m/s]",
        );
        std::fs::write(manifest.record_output(&args.common.out, "speed_envelope.svg"), svg)?;
    }
    manifest.diagnostics = Some(serde_json::json!({
        "collisions": ensemble.collisions.len(),
        "speed_floor_events": ensemble.speed_floor_events,
    }));
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&args.common.out)?;
    println!(
        "simulated {} rollouts over {} steps in {:.1} s ({} collisions)",
        ensemble.n_rollouts(),
        ensemble.horizon(),
        manifest.wall_time_s,
        ensemble.collisions.len()
    );
    Ok(EXIT_OK)
}
