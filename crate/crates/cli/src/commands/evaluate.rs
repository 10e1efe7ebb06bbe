use crate::args::{resolve_seed, EvaluateArgs};
use crate::models::{parse_floats, ResolvedSource};
use crate::EXIT_OK;
use anyhow::Result;
use cfcal_core::eval::{score_fractions, write_reports_csv, ModelSource};
use std::time::Instant;

pub fn run(args: EvaluateArgs) -> Result<u8> {
    let t0 = Instant::now();
    let seed = resolve_seed(args.common.seed);
    let config = crate::config::load_config(args.common.config.as_deref())?;
    let source = ResolvedSource::resolve(&args.source, config.hyper.sigma_rho)?;
    let data = super::load_data(&args.data)?;
    let horizons = parse_floats(&args.horizons, "horizon")?;

    // a pool of sampled models serves every fraction
    let pool = source.sample_models(4096.min(args.rollouts * 8), seed)?;
    let model_source = match &source {
        ResolvedSource::Fixed(m) => ModelSource::Fixed(m),
        _ => ModelSource::Pool(&pool),
    };
    let reports =
        score_fractions(&data, &model_source, &horizons, args.stride, args.rollouts, seed)?;

    super::ensure_out_dir(&args.common.out)?;
    let mut manifest = crate::manifest::RunManifest::new(
        "evaluate",
        seed,
        serde_json::json!({
            "data": args.data,
            "horizons": horizons,
            "stride": args.stride,
            "rollouts": args.rollouts,
            "draw_mode": args.source.draw_mode,
            "posterior": args.source.posterior,
            "theta": args.source.theta,
            "rho": args.source.rho,
            "sigma_eta": args.source.sigma_eta,
        }),
    );
    let report_path = manifest.record_output(&args.common.out, "report.csv");
    let file = std::fs::File::create(report_path)?;
    write_reports_csv(std::io::BufWriter::new(file), &reports)?;
    std::fs::write(
        manifest.record_output(&args.common.out, "report.json"),
        serde_json::to_string_pretty(&reports)?,
    )?;
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&args.common.out)?;

    for r in &reports {
        println!(
            "horizon {:>4.1} s over {} fractions: RMSE(v) {:.3} +- {:.3}, CRPS(v) {:.3} +- {:.3}",
            r.fraction_length, r.n_fractions, r.rmse_v.0, r.rmse_v.1, r.crps_v.0, r.crps_v.1
        );
    }
    Ok(EXIT_OK)
}
