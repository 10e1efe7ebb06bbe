use crate::args::{resolve_seed, CalibrateArgs};
use crate::posterior_io::{model_label, write_diagnostics_csv, write_draws_csv, write_summary_csv};
use crate::{EXIT_OK, EXIT_WARN};
use anyhow::{Context, Result};
use cfcal_core::diagnostics::{diagnostics, posterior_summary};
use cfcal_core::likelihood::LikelihoodMode;
use cfcal_core::sampler::{calibrate, SamplerConfig};
use cfcal_core::trajectory::{downsample, filter_min_duration};
use std::time::Instant;

const RHAT_WARN: f64 = 1.05;

pub fn run(args: CalibrateArgs) -> Result<u8> {
    let t0 = Instant::now();
    let seed = resolve_seed(args.common.seed);
    let config = crate::config::load_config(args.common.config.as_deref())?;
    let mode: LikelihoodMode = args.likelihood.parse::<LikelihoodMode>()?;

    let mut data = super::load_data(&args.data)?;
    if let Some(hz) = args.target_hz {
        data = data.iter().map(|t| downsample(t, hz)).collect::<cfcal_core::Result<_>>()?;
    }
    data = filter_min_duration(data, args.min_duration);
    anyhow::ensure!(!data.is_empty(), "no trajectories left after filtering");

    let sampler_cfg = SamplerConfig {
        chains: args.chains,
        warmup: args.warmup,
        draws: args.draws,
        target_accept: args.target_accept,
        seed,
        init_jitter: args.init_jitter,
        use_nuts: args.nuts,
        ..SamplerConfig::default()
    };
    let draws = calibrate(&data, &config.hyper, args.order, mode, &sampler_cfg)?;

    super::ensure_out_dir(&args.common.out)?;
    let mut manifest = crate::manifest::RunManifest::new(
        "calibrate",
        seed,
        serde_json::json!({
            "data": args.data,
            "order": args.order,
            "likelihood": mode.to_string(),
            "sampler": &sampler_cfg,
            "hyper": &config.hyper,
            "min_duration": args.min_duration,
            "target_hz": args.target_hz,
            "model": model_label(args.order),
        }),
    );

    let names = draws.names();
    let summary = posterior_summary(&draws, &names);
    let diags = diagnostics(&draws);

    write_draws_csv(&manifest.record_output(&args.common.out, "draws.csv"), &draws)?;
    write_summary_csv(
        &manifest.record_output(&args.common.out, "summary.csv"),
        &model_label(args.order),
        &summary,
    )
    .context("writing summary")?;
    write_diagnostics_csv(&manifest.record_output(&args.common.out, "diagnostics.csv"), &diags)?;

    let worst_rhat = diags.iter().filter_map(|d| d.rhat).fold(f64::NAN, f64::max);
    let min_ess = diags.iter().filter_map(|d| d.ess).fold(f64::INFINITY, f64::min);
    let n_divergent: usize =
        draws.divergent.iter().map(|c| c.iter().filter(|d| **d).count()).sum();
    manifest.diagnostics = Some(serde_json::json!({
        "worst_rhat": if worst_rhat.is_nan() { None } else { Some(worst_rhat) },
        "min_ess": if min_ess.is_finite() { Some(min_ess) } else { None },
        "divergent_draws": n_divergent,
        "divergences_warmup": draws.divergences_warmup,
        "step_sizes": &draws.step_sizes,
    }));
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.write(&args.common.out)?;

    println!(
        "{}: {} drivers, {} chains x {} draws in {:.1} s; worst R-hat {:.3}",
        model_label(args.order),
        data.len(),
        draws.n_chains(),
        draws.n_draws(),
        manifest.wall_time_s,
        worst_rhat
    );
    if worst_rhat.is_finite() && worst_rhat >= RHAT_WARN {
        eprintln!(
            "warning: R-hat {worst_rhat:.3} exceeds {RHAT_WARN}; chains have not mixed -- \
             increase --warmup/--draws"
        );
        return Ok(EXIT_WARN);
    }
    Ok(EXIT_OK)
}
