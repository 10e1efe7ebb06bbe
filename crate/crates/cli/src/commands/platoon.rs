use crate::args::{resolve_seed, PlatoonArgs};
use crate::models::{parse_leader_profile, ResolvedSource};
use crate::posterior_io::write_bands_csv;
use crate::{UsageError, EXIT_OK};
use anyhow::{bail, Result};
use cfcal_core::idm::equilibrium_gap;
use cfcal_core::sim::{ensemble_envelope, simulate_platoon, speed_variance_ratios, FollowerInit, SimVar};
use cfcal_core::synth::{leader_profile, LeaderChannel};
use std::io::Write;
use std::time::Instant;

pub fn run(args: PlatoonArgs) -> Result<u8> {
    let t0 = Instant::now();
    let seed = resolve_seed(args.common.seed);
    let config = crate::config::load_config(args.common.config.as_deref())?;
    let source = ResolvedSource::resolve(&args.source, config.hyper.sigma_rho)?;
    anyhow::ensure!(args.followers >= 1, "need at least one follower");

    let leader: LeaderChannel = match (&args.data, &args.leader) {
        (Some(_), Some(_)) => bail!(UsageError("--data conflicts with --leader".into())),
        (None, None) => bail!(UsageError("need --data or --leader".into())),
        (Some(path), None) => {
            let trajs = super::load_data(path)?;
            LeaderChannel::from_trajectory(&trajs[0])
        }
        (None, Some(profile)) => {
            let kind = parse_leader_profile(profile)?;
            let dt = 1.0 / args.hz;
            let n = (args.duration * args.hz).round() as usize + 1;
            leader_profile(&kind, n, dt, 0.0, args.vehicle_length, None)?
        }
    };

    let models = source.sample_models(args.followers, seed)?;
    let lengths = vec![args.vehicle_length; args.followers];
    // chain the platoon at per-model equilibrium gaps behind the leader
    let mut inits = Vec::with_capacity(args.followers);
    let mut ahead_x = leader.x[0];
    let mut ahead_len = leader.length;
    for (k, m) in models.iter().enumerate() {
        let v = leader.v[0].min(m.idm.v0 * 0.95);
        let gap = equilibrium_gap(v, &m.idm)?;
        let x0 = ahead_x - ahead_len - gap;
        inits.push(FollowerInit { x0, v0: v });
        ahead_x = x0;
        ahead_len = lengths[k];
    }

    let ensembles = simulate_platoon(&leader, &models, &inits, &lengths, args.rollouts, seed)?;
    let (variances, ratios) = speed_variance_ratios(&leader, &ensembles);

    super::ensure_out_dir(&args.common.out)?;
    let mut manifest = crate::manifest::RunManifest::new(
        "platoon",
        seed,
        serde_json::json!({
            "data": args.data,
            "leader": args.leader,
            "duration": args.duration,
            "hz": args.hz,
            "followers": args.followers,
            "rollouts": args.rollouts,
            "vehicle_length": args.vehicle_length,
            "draw_mode": args.source.draw_mode,
            "posterior": args.source.posterior,
            "theta": args.source.theta,
            "rho": args.source.rho,
            "sigma_eta": args.source.sigma_eta,
        }),
    );

    for (k, e) in ensembles.iter().enumerate() {
        let bands = ensemble_envelope(e, &[0.025, 0.5, 0.975])?;
        let mean_x = e.mean_series(SimVar::Position);
        let mean_v = e.mean_series(SimVar::Speed);
        let mean_a = e.mean_series(SimVar::Accel);
        write_bands_csv(
            &manifest.record_output(&args.common.out, &format!("follower{}_bands.csv", k + 1)),
            e.dt,
            &bands,
            (&mean_x, &mean_v, &mean_a),
        )?;
        if args.plot {
            let svg = crate::plot::envelope_svg(
                e.dt,
                &mean_v,
                &bands.v[0],
                &bands.v[2],
                &bands.v[1],
                Some(&leader.v),
                &format!("Platoon follower {} speed envelope", k + 1),
                "speed [m/s]",
            );
            std::fs::write(
                manifest.record_output(&args.common.out, &format!("follower{}_speed.svg", k + 1)),
                svg,
            )?;
        }
    }

    // string-stability table: per-vehicle speed variance and downstream ratios
    {
        let path = manifest.record_output(&args.common.out, "string_stability.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "vehicle,speed_variance,ratio_to_upstream")?;
        writeln!(f, "leader,{},", variances[0])?;
        for k in 0..args.followers {
            writeln!(f, "follower{},{},{}", k + 1, variances[k + 1], ratios[k])?;
        }
        f.flush()?;
    }

    let total_collisions: usize = ensembles.iter().map(|e| e.collisions.len()).sum();
    manifest.diagnostics = Some(serde_json::json!({
        "collisions": total_collisions,
        "speed_variance": variances,
        "variance_ratios": ratios,
    }));
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&args.common.out)?;
    println!(
        "platoon: {} followers x {} rollouts in {:.1} s; variance ratios {:?}",
        args.followers,
        args.rollouts,
        manifest.wall_time_s,
        ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    Ok(EXIT_OK)
}
