use crate::args::{resolve_seed, RingroadArgs};
use crate::models::ResolvedSource;
use crate::posterior_io::write_timespace_csv;
use crate::EXIT_OK;
use anyhow::Result;
use cfcal_core::sim::{simulate_ring, RingConfig};
use std::time::Instant;

pub fn run(args: RingroadArgs) -> Result<u8> {
    let t0 = Instant::now();
    let seed = resolve_seed(args.common.seed);
    let config = crate::config::load_config(args.common.config.as_deref())?;
    let source = ResolvedSource::resolve(&args.source, config.hyper.sigma_rho)?;

    let mut ring_cfg = RingConfig {
        radius: args.radius,
        n_vehicles: args.vehicles,
        v_init: args.v_init,
        steps: args.steps,
        dt: args.dt,
        vehicle_length: args.vehicle_length,
    };
    let models = source.sample_models(ring_cfg.n_vehicles, seed)?;
    if args.equilibrium_init {
        ring_cfg.v_init =
            cfcal_core::idm::equilibrium_speed(ring_cfg.uniform_gap(), &models[0].idm)?;
    }
    let rollout = simulate_ring(&ring_cfg, &models, seed)?;

    super::ensure_out_dir(&args.common.out)?;
    let mut manifest = crate::manifest::RunManifest::new(
        "ringroad",
        seed,
        serde_json::json!({
            "ring": &ring_cfg,
            "equilibrium_init": args.equilibrium_init,
            "frame_speed": args.frame_speed,
            "draw_mode": args.source.draw_mode,
            "posterior": args.source.posterior,
            "theta": args.source.theta,
            "rho": args.source.rho,
            "sigma_eta": args.source.sigma_eta,
        }),
    );
    write_timespace_csv(
        &manifest.record_output(&args.common.out, "ring_timespace.csv"),
        ring_cfg.dt,
        &rollout.xs,
        &rollout.vs,
        args.frame_speed,
        Some(ring_cfg.circumference()),
    )?;
    if args.plot {
        let svg = crate::plot::time_space_svg(
            ring_cfg.dt,
            &rollout.xs,
            &rollout.vs,
            Some(ring_cfg.circumference()),
            "Ring-road time-space diagram",
        );
        std::fs::write(manifest.record_output(&args.common.out, "ring_timespace.svg"), svg)?;
    }
    let last = ring_cfg.steps - 1;
    manifest.diagnostics = Some(serde_json::json!({
        "collisions": rollout.collisions.len(),
        "speed_floor_events": rollout.speed_floor_events,
        "final_spatial_speed_std": rollout.spatial_speed_std(last),
    }));
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&args.common.out)?;
    println!(
        "ring road: {} vehicles x {} steps in {:.1} s; final spatial speed std {:.3} m/s",
        ring_cfg.n_vehicles,
        ring_cfg.steps,
        manifest.wall_time_s,
        rollout.spatial_speed_std(last)
    );
    Ok(EXIT_OK)
}
