use anyhow::{bail, Context, Result};
use cfcal_core::diagnostics::{ParamDiagnostic, SummaryRow};
use cfcal_core::prior::{HierarchyState, ParamLayout};
use cfcal_core::sampler::PosteriorDraws;
use std::io::Write;
use std::path::Path;

/// Write posterior draws as CSV: one row per draw with chain/draw indices,
/// the log-density, acceptance statistic, divergence flag, and all constrained
/// parameters under their canonical labels.
pub fn write_draws_csv(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let names = draws.names();
    let mut header = vec![
        "chain".to_string(),
        "draw".to_string(),
        "lp".to_string(),
        "accept_stat".to_string(),
        "divergent".to_string(),
    ];
    header.extend(names);
    w.write_record(&header)?;
    for (c, chain) in draws.chains.iter().enumerate() {
        for (d, state) in chain.iter().enumerate() {
            let mut rec = vec![
                c.to_string(),
                d.to_string(),
                format!("{}", draws.logp[c][d]),
                format!("{}", draws.accept_stat[c][d]),
                if draws.divergent[c][d] { "1".into() } else { "0".into() },
            ];
            rec.extend(state.flat_constrained().iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read draws back: the layout is inferred from the header labels.
pub fn read_draws_csv(path: &Path) -> Result<(ParamLayout, Vec<HierarchyState>)> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("cannot open posterior draws {}", path.display()))?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
    let header = rdr.headers()?.clone();
    let p = header.iter().filter(|h| h.starts_with("rho_")).count();
    let n_drivers = header.iter().filter(|h| h.ends_with("_v0") && h.starts_with('d')).count();
    if n_drivers == 0 {
        bail!("posterior CSV carries no driver columns");
    }
    let layout = ParamLayout::new(n_drivers, p)?;
    let expected = HierarchyState::names(&layout);
    let offset = 5usize; // chain, draw, lp, accept_stat, divergent
    if header.len() != offset + expected.len()
        || header.iter().skip(offset).zip(&expected).any(|(a, b)| a != b)
    {
        bail!("posterior CSV header does not match the canonical parameter layout");
    }
    let mut states = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let values: Vec<f64> = rec
            .iter()
            .skip(offset)
            .map(|s| s.parse::<f64>().context("bad float in draws CSV"))
            .collect::<Result<_>>()?;
        states.push(HierarchyState::from_flat_constrained(&values, &layout)?);
    }
    if states.is_empty() {
        bail!("posterior CSV contains no draws");
    }
    Ok((layout, states))
}

/// Posterior summary in a Table-1-like layout: one row per parameter with the
/// model label on population-level rows.
pub fn write_summary_csv(path: &Path, label: &str, rows: &[SummaryRow]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["model", "parameter", "mean", "sd", "q2.5", "q50", "q97.5"])?;
    for r in rows {
        w.write_record(&[
            label.to_string(),
            r.name.clone(),
            format!("{}", r.mean),
            format!("{}", r.sd),
            format!("{}", r.q2_5),
            format!("{}", r.q50),
            format!("{}", r.q97_5),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics_csv(path: &Path, diags: &[ParamDiagnostic]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["parameter", "rhat", "ess", "degenerate"])?;
    for d in diags {
        w.write_record(&[
            d.name.clone(),
            d.rhat.map_or(String::new(), |v| format!("{v}")),
            d.ess.map_or(String::new(), |v| format!("{v}")),
            if d.degenerate { "1".into() } else { "0".into() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Model label in the reporting convention: p = 0 is the i.i.d.-error special
/// case.
pub fn model_label(p: usize) -> String {
    if p == 0 {
        "Bayesian IDM (p=0)".to_string()
    } else {
        format!("Dynamic IDM (p={p})")
    }
}

/// Write per-step ensemble quantile bands for all three state variables.
pub fn write_bands_csv(
    path: &Path,
    dt: f64,
    bands: &cfcal_core::sim::QuantileBands,
    means: (&[f64], &[f64], &[f64]),
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["t".to_string(), "x_mean".into(), "v_mean".into(), "a_mean".into()];
    for q in &bands.levels {
        header.push(format!("x_q{q}"));
        header.push(format!("v_q{q}"));
        header.push(format!("a_q{q}"));
    }
    w.write_record(&header)?;
    let steps = means.0.len();
    for t in 0..steps {
        let mut rec = vec![
            format!("{}", t as f64 * dt),
            format!("{}", means.0[t]),
            format!("{}", means.1[t]),
            format!("{}", means.2[t]),
        ];
        for li in 0..bands.levels.len() {
            rec.push(format!("{}", bands.x[li][t]));
            rec.push(format!("{}", bands.v[li][t]));
            rec.push(format!("{}", bands.a[li][t]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format time-space CSV: t, vehicle, x, v. `frame_speed` shifts
/// positions into a moving frame (x - c t).
pub fn write_timespace_csv(
    path: &Path,
    dt: f64,
    xs: &[Vec<f64>],
    vs: &[Vec<f64>],
    frame_speed: f64,
    wrap: Option<f64>,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "t,vehicle,x,v")?;
    for (veh, (x_series, v_series)) in xs.iter().zip(vs).enumerate() {
        for (t, (x, v)) in x_series.iter().zip(v_series).enumerate() {
            let time = t as f64 * dt;
            let mut pos = x - frame_speed * time;
            if let Some(c) = wrap {
                pos = pos.rem_euclid(c);
            }
            writeln!(out, "{time},{veh},{pos},{v}")?;
        }
    }
    out.flush()?;
    Ok(())
}
