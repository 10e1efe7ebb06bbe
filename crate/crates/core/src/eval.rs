//! Quantitative scoring of simulations and residual analysis: RMSE, CRPS,
//! empirical autocovariance, and horizon scoring over trajectory fractions.

use crate::ar::CovarianceFunction;
use crate::error::{Error, Result};
use crate::idm::{idm_accel_unchecked, IdmParams};
use crate::likelihood::DriverModel;
use crate::sim::{simulate_follower_models, FollowerInit, SimEnsemble, SimVar};
use crate::stats::splitmix64;
use crate::synth::LeaderChannel;
use crate::trajectory::Trajectory;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// RMSE of the ensemble mean against the truth series.
pub fn rmse(truth: &[f64], ensemble: &SimEnsemble, var: SimVar) -> Result<f64> {
    if truth.len() != ensemble.horizon() {
        return Err(Error::Dim(format!(
            "truth has {} samples, ensemble horizon is {}",
            truth.len(),
            ensemble.horizon()
        )));
    }
    let mean = ensemble.mean_series(var);
    Ok(rmse_series(truth, &mean))
}

fn rmse_series(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}

/// CRPS of an empirical forecast ensemble against one observation, using the
/// pairwise identity `mean|X - y| - mean|X - X'| / 2`, which equals the
/// integral of the squared CDF distance for the empirical CDF.
pub fn crps(observation: f64, forecast: &[f64]) -> Result<f64> {
    if forecast.is_empty() {
        return Err(Error::Param("CRPS needs a nonempty forecast ensemble".into()));
    }
    let n = forecast.len() as f64;
    let mut sorted = forecast.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mae = sorted.iter().map(|x| (x - observation).abs()).sum::<f64>() / n;
    // sum over ordered pairs |x_i - x_j| = 2 sum_k x_(k) (2k - n + 1)
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, x)| x * (2.0 * k as f64 - n + 1.0))
        .sum::<f64>()
        * 2.0;
    Ok(mae - 0.5 * pair_sum / (n * n))
}

/// Residuals of observed acceleration against the deterministic IDM term.
pub fn extract_residuals(traj: &Trajectory, idm: &IdmParams) -> Result<Vec<f64>> {
    let a = traj.a_f.as_ref().ok_or_else(|| {
        Error::Data(format!("driver {}: acceleration channel required", traj.driver_id))
    })?;
    let mut out = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let st = traj.cf_state_at(t)?;
        out.push(a[t] - idm_accel_unchecked(st.s, st.v, st.dv, idm));
    }
    Ok(out)
}

/// Biased (1/N) sample autocovariance of a residual sequence at lags
/// `0..=max_lag`, mean removed.
pub fn empirical_autocovariance(residuals: &[f64], max_lag: usize) -> Result<CovarianceFunction> {
    crate::ar::empirical_autocovariance_raw(residuals, max_lag)
}

/// Scores of one simulation horizon, aggregated over fractions as
/// (mean, standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Fraction (= simulated horizon) length, seconds.
    pub fraction_length: f64,
    pub n_fractions: usize,
    /// Acceleration scores; absent when the data carry no acceleration channel.
    pub rmse_a: Option<(f64, f64)>,
    pub crps_a: Option<(f64, f64)>,
    pub rmse_v: (f64, f64),
    pub crps_v: (f64, f64),
    pub rmse_s: (f64, f64),
    pub crps_s: (f64, f64),
}

/// Where simulation models come from during scoring.
pub enum ModelSource<'a> {
    /// The same model for every rollout.
    Fixed(&'a DriverModel),
    /// Uniform draws from a pool (e.g. posterior samples).
    Pool(&'a [DriverModel]),
}

impl ModelSource<'_> {
    fn pick(&self, rng: &mut ChaCha8Rng) -> DriverModel {
        match self {
            ModelSource::Fixed(m) => (*m).clone(),
            ModelSource::Pool(pool) => pool[rng.random_range(0..pool.len())].clone(),
        }
    }
}

/// Slice each trajectory into overlapping fractions, simulate each fraction
/// from its first state with models drawn from `source`, score against the
/// truth, and aggregate mean and standard deviation across fractions. One
/// report per requested horizon.
pub fn score_fractions(
    data: &[Trajectory],
    source: &ModelSource,
    horizons_s: &[f64],
    stride_s: f64,
    n_rollouts: usize,
    seed: u64,
) -> Result<Vec<ScoreReport>> {
    if data.is_empty() || horizons_s.is_empty() || n_rollouts == 0 {
        return Err(Error::Param("scoring needs data, horizons, and rollouts".into()));
    }
    if !(stride_s > 0.0) {
        return Err(Error::Param("stride must be positive".into()));
    }
    let mut reports = Vec::with_capacity(horizons_s.len());
    for (hi, &h) in horizons_s.iter().enumerate() {
        let mut acc = FractionAccumulator::default();
        let mut counter = (hi as u64) << 32;
        for traj in data {
            let h_steps = (h / traj.dt).round() as usize;
            let stride_steps = ((stride_s / traj.dt).round() as usize).max(1);
            if h_steps < 1 || traj.len() < h_steps + 1 {
                return Err(Error::Data(format!(
                    "driver {}: trajectory too short for a {h} s horizon",
                    traj.driver_id
                )));
            }
            let leader_full = LeaderChannel::from_trajectory(traj);
            let mut start = 0;
            while start + h_steps < traj.len() {
                counter += 1;
                let frac_seed = splitmix64(seed, counter);
                let leader = leader_full.slice(start, h_steps + 1);
                let init = FollowerInit { x0: traj.x_f[start], v0: traj.v_f[start] };
                let mut rng = ChaCha8Rng::seed_from_u64(frac_seed);
                rng.set_stream(u64::MAX); // model picks stay off the rollout streams
                let models: Vec<DriverModel> =
                    (0..n_rollouts).map(|_| source.pick(&mut rng)).collect();
                // warm-start each rollout's error lags from the observed
                // residuals just before the fraction (the serial-correlation
                // term conditions on historical information)
                let eps_init: Vec<Vec<f64>> = models
                    .iter()
                    .map(|m| observed_residual_lags(traj, start, m))
                    .collect::<Result<_>>()?;
                let ens =
                    simulate_follower_models(&leader, init, &models, Some(&eps_init), frac_seed)?;
                score_one_fraction(traj, start, h_steps, &leader, &ens, &mut acc)?;
                start += stride_steps;
            }
        }
        reports.push(acc.report(h)?);
    }
    Ok(reports)
}

/// The p most recent observed acceleration residuals before `start` (most
/// recent first), evaluated against the candidate model's IDM term. Uses the
/// acceleration channel when present, otherwise falls back to one-step speed
/// differences. Lags reaching before the first sample stay at zero.
fn observed_residual_lags(traj: &Trajectory, start: usize, m: &DriverModel) -> Result<Vec<f64>> {
    let p = m.ar.order();
    let mut out = vec![0.0; p];
    for (k, slot) in out.iter_mut().enumerate() {
        let Some(t) = start.checked_sub(k + 1) else { break };
        let st = traj.cf_state_at(t)?;
        let idm = idm_accel_unchecked(st.s, st.v, st.dv, &m.idm);
        let a_obs = match traj.a_f.as_ref() {
            Some(a) => a[t],
            None => (traj.v_f[t + 1] - traj.v_f[t]) / traj.dt,
        };
        *slot = a_obs - idm;
    }
    Ok(out)
}

#[derive(Default)]
struct FractionAccumulator {
    rmse_a: Vec<f64>,
    crps_a: Vec<f64>,
    rmse_v: Vec<f64>,
    crps_v: Vec<f64>,
    rmse_s: Vec<f64>,
    crps_s: Vec<f64>,
    missing_accel: bool,
}

impl FractionAccumulator {
    fn report(&self, h: f64) -> Result<ScoreReport> {
        if self.rmse_v.is_empty() {
            return Err(Error::Data(format!("no fractions available for the {h} s horizon")));
        }
        let agg = |v: &[f64]| -> (f64, f64) {
            let m = crate::stats::mean(v);
            let sd = if v.len() > 1 { crate::stats::std_dev(v) } else { 0.0 };
            (m, sd)
        };
        let a_scores = if self.missing_accel || self.rmse_a.is_empty() {
            (None, None)
        } else {
            (Some(agg(&self.rmse_a)), Some(agg(&self.crps_a)))
        };
        Ok(ScoreReport {
            fraction_length: h,
            n_fractions: self.rmse_v.len(),
            rmse_a: a_scores.0,
            crps_a: a_scores.1,
            rmse_v: agg(&self.rmse_v),
            crps_v: agg(&self.crps_v),
            rmse_s: agg(&self.rmse_s),
            crps_s: agg(&self.crps_s),
        })
    }
}

fn score_one_fraction(
    traj: &Trajectory,
    start: usize,
    h_steps: usize,
    leader: &LeaderChannel,
    ens: &SimEnsemble,
    acc: &mut FractionAccumulator,
) -> Result<()> {
    let n_steps = h_steps + 1;
    let truth_v: Vec<f64> = traj.v_f[start..start + n_steps].to_vec();
    let truth_s: Vec<f64> = (start..start + n_steps).map(|t| traj.gap(t)).collect();

    acc.rmse_v.push(rmse(&truth_v, ens, SimVar::Speed)?);
    let sim_mean_x = ens.mean_series(SimVar::Position);
    let mean_gap: Vec<f64> = (0..n_steps)
        .map(|t| leader.x[t] - sim_mean_x[t] - leader.length)
        .collect();
    acc.rmse_s.push(rmse_series(&truth_s, &mean_gap));

    let mut crps_v_acc = 0.0;
    let mut crps_s_acc = 0.0;
    let mut buf = vec![0.0; ens.n_rollouts()];
    for t in 0..n_steps {
        for (r, b) in buf.iter_mut().enumerate() {
            *b = ens.vs[r][t];
        }
        crps_v_acc += crps(truth_v[t], &buf)?;
        for (r, b) in buf.iter_mut().enumerate() {
            *b = leader.x[t] - ens.xs[r][t] - leader.length;
        }
        crps_s_acc += crps(truth_s[t], &buf)?;
    }
    acc.crps_v.push(crps_v_acc / n_steps as f64);
    acc.crps_s.push(crps_s_acc / n_steps as f64);

    match traj.a_f.as_ref() {
        Some(a) => {
            let truth_a: Vec<f64> = a[start..start + n_steps].to_vec();
            acc.rmse_a.push(rmse(&truth_a, ens, SimVar::Accel)?);
            let mut crps_a_acc = 0.0;
            for t in 0..n_steps {
                for (r, b) in buf.iter_mut().enumerate() {
                    *b = ens.accs[r][t];
                }
                crps_a_acc += crps(truth_a[t], &buf)?;
            }
            acc.crps_a.push(crps_a_acc / n_steps as f64);
        }
        None => acc.missing_accel = true,
    }
    Ok(())
}

const REPORT_HEADER: [&str; 14] = [
    "fraction_length",
    "n_fractions",
    "rmse_a_mean",
    "rmse_a_sd",
    "crps_a_mean",
    "crps_a_sd",
    "rmse_v_mean",
    "rmse_v_sd",
    "crps_v_mean",
    "crps_v_sd",
    "rmse_s_mean",
    "rmse_s_sd",
    "crps_s_mean",
    "crps_s_sd",
];

/// Write score reports as CSV (one row per horizon).
pub fn write_reports_csv(w: impl std::io::Write, reports: &[ScoreReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(REPORT_HEADER)?;
    for r in reports {
        let opt = |o: Option<(f64, f64)>, pick: usize| -> String {
            o.map_or(String::new(), |(m, s)| format!("{}", if pick == 0 { m } else { s }))
        };
        wtr.write_record(&[
            format!("{}", r.fraction_length),
            format!("{}", r.n_fractions),
            opt(r.rmse_a, 0),
            opt(r.rmse_a, 1),
            opt(r.crps_a, 0),
            opt(r.crps_a, 1),
            format!("{}", r.rmse_v.0),
            format!("{}", r.rmse_v.1),
            format!("{}", r.crps_v.0),
            format!("{}", r.crps_v.1),
            format!("{}", r.rmse_s.0),
            format!("{}", r.rmse_s.1),
            format!("{}", r.crps_s.0),
            format!("{}", r.crps_s.1),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parse score reports back from CSV.
pub fn read_reports_csv(r: impl std::io::Read) -> Result<Vec<ScoreReport>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(REPORT_HEADER.iter().copied()) {
        return Err(Error::Schema("unexpected score report header".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Data("short record".into()))?
                .parse::<f64>()
                .map_err(|e| Error::Data(e.to_string()))
        };
        let opt_pair = |i: usize| -> Result<Option<(f64, f64)>> {
            let a = rec.get(i).unwrap_or("");
            let b = rec.get(i + 1).unwrap_or("");
            if a.is_empty() || b.is_empty() {
                Ok(None)
            } else {
                Ok(Some((
                    a.parse().map_err(|_| Error::Data("bad float".into()))?,
                    b.parse().map_err(|_| Error::Data("bad float".into()))?,
                )))
            }
        };
        out.push(ScoreReport {
            fraction_length: f(0)?,
            n_fractions: f(1)? as usize,
            rmse_a: opt_pair(2)?,
            crps_a: opt_pair(4)?,
            rmse_v: (f(6)?, f(7)?),
            crps_v: (f(8)?, f(9)?),
            rmse_s: (f(10)?, f(11)?),
            crps_s: (f(12)?, f(13)?),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar::{table1_ar5, ArCoefficients};
    use crate::synth::{generate, recovery_ground_truth, GroundTruth, LeaderProfile};
    use rand_distr::{Distribution, Normal};

    fn flat_ensemble(values: Vec<Vec<f64>>) -> SimEnsemble {
        SimEnsemble {
            dt: 0.2,
            xs: values.clone(),
            vs: values.clone(),
            accs: values,
            collisions: vec![],
            speed_floor_events: 0,
        }
    }

    #[test]
    fn rmse_zero_when_mean_equals_truth() {
        let e = flat_ensemble(vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]]);
        let truth = [2.0, 2.0, 2.0];
        assert_eq!(rmse(&truth, &e, SimVar::Speed).unwrap(), 0.0);
    }

    #[test]
    fn rmse_constant_offset() {
        let e = flat_ensemble(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let truth = [1.7, 1.7];
        assert!((rmse(&truth, &e, SimVar::Speed).unwrap() - 0.7).abs() < 1e-12);
        assert!(rmse(&[1.0], &e, SimVar::Speed).is_err());
    }

    #[test]
    fn rmse_of_white_mean_decays_like_clt() {
        // ensemble mean of white noise vs zero truth: RMSE ~ sigma / sqrt(n)
        let sigma = 0.5;
        let t = 4000;
        let normal = Normal::new(0.0, sigma).unwrap();
        let make = |n: usize, seed: u64| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<Vec<f64>> =
                (0..n).map(|_| (0..t).map(|_| normal.sample(&mut rng)).collect()).collect();
            let e = flat_ensemble(vals);
            rmse(&vec![0.0; t], &e, SimVar::Speed).unwrap()
        };
        for (n, seed) in [(25usize, 1u64), (100, 2), (400, 3)] {
            let got = make(n, seed);
            let expect = sigma / (n as f64).sqrt();
            assert!(
                (got - expect).abs() < 0.1 * expect,
                "n={n}: rmse {got} vs {expect}"
            );
        }
    }

    #[test]
    fn crps_degenerate_ensemble_is_zero() {
        assert_eq!(crps(3.0, &[3.0; 5]).unwrap(), 0.0);
        assert!(crps(0.0, &[]).is_err());
    }

    #[test]
    fn crps_two_point_case() {
        assert!((crps(0.0, &[0.0, 1.0]).unwrap() - 0.25).abs() < 1e-15);
    }

    /// Direct numerical integration of the squared distance between the
    /// empirical CDF and the observation step function. Test oracle.
    fn crps_by_integration(obs: f64, forecast: &[f64]) -> f64 {
        let n = forecast.len() as f64;
        let mut breaks: Vec<f64> = forecast.to_vec();
        breaks.push(obs);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        let mut total = 0.0;
        for w in breaks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let f = forecast.iter().filter(|x| **x <= lo).count() as f64 / n;
            let ind = if lo >= obs { 1.0 } else { 0.0 };
            total += (f - ind) * (f - ind) * (hi - lo);
        }
        total
    }

    #[test]
    fn crps_identity_matches_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 2.0).unwrap();
        for trial in 0..200 {
            let n = 1 + (trial % 8);
            let ens: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let obs = normal.sample(&mut rng);
            let a = crps(obs, &ens).unwrap();
            let b = crps_by_integration(obs, &ens);
            assert!((a - b).abs() < 1e-10, "trial {trial}: {a} vs {b}");
        }
        // ties in the ensemble are handled by the same identity
        let ens = [1.0, 1.0, 2.0, 2.0];
        assert!((crps(1.5, &ens).unwrap() - crps_by_integration(1.5, &ens)).abs() < 1e-12);
    }

    #[test]
    fn crps_bounded_by_mean_absolute_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..100 {
            let n = 2 + rng.random_range(0..30);
            let ens: Vec<f64> = (0..n).map(|_| 3.0 * normal.sample(&mut rng)).collect();
            let obs = 3.0 * normal.sample(&mut rng);
            let c = crps(obs, &ens).unwrap();
            let mae = ens.iter().map(|x| (x - obs).abs()).sum::<f64>() / n as f64;
            assert!(c <= mae + 1e-12);
            assert!(c >= 0.0);
        }
    }

    #[test]
    fn crps_gaussian_closed_form() {
        // for X ~ N(mu, sigma^2) and obs = mu: CRPS = sigma (sqrt(2) - 1) / sqrt(pi)
        let sigma = 1.7;
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let normal = Normal::new(5.0, sigma).unwrap();
        let ens: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let got = crps(5.0, &ens).unwrap();
        let expect = sigma * (std::f64::consts::SQRT_2 - 1.0) / std::f64::consts::PI.sqrt();
        assert!((got - expect).abs() < 0.02 * expect, "{got} vs {expect}");
    }

    #[test]
    fn scores_are_translation_equivariant() {
        let e = flat_ensemble(vec![vec![0.3, -0.2], vec![1.4, 0.8], vec![-0.6, 2.0]]);
        let truth = [0.5, 0.7];
        let c = 123.4;
        let mut shifted = e.clone();
        for r in 0..3 {
            for t in 0..2 {
                shifted.vs[r][t] += c;
            }
        }
        let truth_shift: Vec<f64> = truth.iter().map(|v| v + c).collect();
        let r1 = rmse(&truth, &e, SimVar::Speed).unwrap();
        let r2 = rmse(&truth_shift, &shifted, SimVar::Speed).unwrap();
        assert!((r1 - r2).abs() < 1e-9);
        let vals: Vec<f64> = (0..3).map(|r| e.vs[r][0]).collect();
        let vals_s: Vec<f64> = vals.iter().map(|v| v + c).collect();
        let c1 = crps(truth[0], &vals).unwrap();
        let c2 = crps(truth[0] + c, &vals_s).unwrap();
        assert!((c1 - c2).abs() < 1e-9);
    }

    #[test]
    fn residuals_of_deterministic_idm_are_zero() {
        let gt = GroundTruth {
            drivers: vec![DriverModel::new(
                IdmParams::recommended(),
                ArCoefficients::white(1e-300).unwrap(),
            )],
            sigma_v: 0.0,
            sigma_x: 0.0,
            leader: LeaderProfile::Sawtooth { lo: 8.0, hi: 18.0, period: 30.0 },
            seed: 5,
        };
        let (latent, _) = generate(&gt, 60.0, 0.2).unwrap().remove(0);
        let resid = extract_residuals(&latent, &IdmParams::recommended()).unwrap();
        assert!(resid.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn residuals_of_biased_data_recover_bias() {
        let gt = GroundTruth {
            drivers: vec![DriverModel::new(
                IdmParams::recommended(),
                ArCoefficients::white(1e-300).unwrap(),
            )],
            sigma_v: 0.0,
            sigma_x: 0.0,
            leader: LeaderProfile::Constant { v: 20.0 },
            seed: 6,
        };
        let (latent, _) = generate(&gt, 30.0, 0.2).unwrap().remove(0);
        let mut biased = latent.clone();
        for a in biased.a_f.as_mut().unwrap().iter_mut() {
            *a += 0.3;
        }
        let resid = extract_residuals(&biased, &IdmParams::recommended()).unwrap();
        assert!(resid.iter().all(|r| (r - 0.3).abs() < 1e-12));
        let no_a = Trajectory::new(
            "x",
            latent.dt,
            0.0,
            latent.x_f.clone(),
            latent.v_f.clone(),
            latent.x_l.clone(),
            latent.v_l.clone(),
            None,
            latent.lead_length,
        )
        .unwrap();
        assert!(extract_residuals(&no_a, &IdmParams::recommended()).is_err());
    }

    #[test]
    fn ar1_residual_autocorrelation_matches_rho() {
        let rho = 0.7;
        let gt = GroundTruth {
            drivers: vec![DriverModel::new(
                IdmParams::recommended(),
                ArCoefficients::new(vec![rho], 0.05).unwrap(),
            )],
            sigma_v: 0.0,
            sigma_x: 0.0,
            leader: LeaderProfile::Constant { v: 20.0 },
            seed: 8,
        };
        let (latent, _) = generate(&gt, 20_000.0, 0.2).unwrap().remove(0);
        let resid = extract_residuals(&latent, &IdmParams::recommended()).unwrap();
        let cov = empirical_autocovariance(&resid, 1).unwrap();
        let r1 = cov.gamma[1] / cov.gamma[0];
        let n = resid.len() as f64;
        let se = ((1.0 - rho * rho) / n).sqrt();
        assert!((r1 - rho).abs() < 3.0 * se, "r1={r1} rho={rho} se={se}");
    }

    #[test]
    fn alternating_sequence_autocovariance() {
        let n = 64;
        let x: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let cov = empirical_autocovariance(&x, 5).unwrap();
        for k in 0..=5 {
            let expect = (1.0 - k as f64 / n as f64) * if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!((cov.gamma[k] - expect).abs() < 1e-12, "lag {k}");
        }
        // constant sequence: gamma(0) = 0
        let c = empirical_autocovariance(&vec![3.0; 50], 3).unwrap();
        assert_eq!(c.gamma[0], 0.0);
        assert!(empirical_autocovariance(&x, 64).is_err());
    }

    #[test]
    fn table1_ar5_residual_autocovariance_cross_check() {
        let ar = table1_ar5(0.05);
        let gt = GroundTruth {
            drivers: vec![DriverModel::new(IdmParams::recommended(), ar.clone())],
            sigma_v: 0.0,
            sigma_x: 0.0,
            leader: LeaderProfile::Constant { v: 20.0 },
            seed: 12,
        };
        let n_steps = 200_000;
        let (latent, _) = generate(&gt, n_steps as f64 * 0.2, 0.2).unwrap().remove(0);
        let resid = extract_residuals(&latent, &IdmParams::recommended()).unwrap();
        let emp = empirical_autocovariance(&resid, 8).unwrap();
        let exact = crate::ar::autocovariance(&ar, 8).unwrap();
        let ext = crate::ar::autocovariance(&ar, 3000).unwrap();
        for k in 0..=8 {
            let se = crate::ar::bartlett_se(&ext, k, resid.len());
            assert!(
                (emp.gamma[k] - exact.gamma[k]).abs() < 3.0 * se,
                "lag {k}: {} vs {}",
                emp.gamma[k],
                exact.gamma[k]
            );
        }
    }

    #[test]
    fn noiseless_scoring_gives_vanishing_rmse() {
        let truth_model = DriverModel::new(
            IdmParams::recommended(),
            ArCoefficients::white(1e-300).unwrap(),
        );
        let gt = GroundTruth {
            drivers: vec![truth_model.clone()],
            sigma_v: 0.0,
            sigma_x: 0.0,
            leader: LeaderProfile::Sawtooth { lo: 8.0, hi: 18.0, period: 20.0 },
            seed: 3,
        };
        let (latent, _) = generate(&gt, 30.0, 0.2).unwrap().remove(0);
        let reports = score_fractions(
            std::slice::from_ref(&latent),
            &ModelSource::Fixed(&truth_model),
            &[5.0],
            2.0,
            8,
            77,
        )
        .unwrap();
        assert_eq!(reports.len(), 1);
        let r = &reports[0];
        assert!(r.n_fractions > 5);
        assert!(r.rmse_v.0 < 1e-6, "rmse_v = {:?}", r.rmse_v);
        assert!(r.rmse_s.0 < 1e-6);
        assert!(r.crps_v.0 < 1e-6);
        assert!(r.rmse_a.unwrap().0 < 1e-6);
    }

    #[test]
    fn matched_order_beats_white_noise_model_on_crps() {
        // AR(5)-generated data: the p = 5 truth model should score a lower mean
        // acceleration CRPS than the best-matched p = 0 model on most seeds
        let mut wins = 0;
        let seeds = [0u64, 1];
        for &seed in &seeds {
            let ar = table1_ar5(0.05);
            let marginal_sd = crate::ar::autocovariance(&ar, 0).unwrap().gamma[0].sqrt();
            let idm = IdmParams::recommended();
            let gt = GroundTruth {
                drivers: vec![DriverModel::new(idm, ar.clone())],
                sigma_v: 0.0,
                sigma_x: 0.0,
                leader: LeaderProfile::Sawtooth { lo: 8.0, hi: 18.0, period: 24.0 },
                seed: 100 + seed,
            };
            let (latent, _) = generate(&gt, 40.0, 0.2).unwrap().remove(0);
            let m5 = DriverModel::new(idm, ar);
            let m0 = DriverModel::new(idm, ArCoefficients::white(marginal_sd).unwrap());
            let score = |m: &DriverModel| {
                score_fractions(
                    std::slice::from_ref(&latent),
                    &ModelSource::Fixed(m),
                    &[5.0],
                    1.0,
                    128,
                    900 + seed,
                )
                .unwrap()[0]
                    .crps_a
                    .unwrap()
                    .0
            };
            if score(&m5) < score(&m0) {
                wins += 1;
            }
        }
        assert!(wins >= 1, "p=5 won only {wins}/{} seeds", seeds.len());
    }

    #[test]
    fn report_csv_round_trip() {
        let gt = recovery_ground_truth(1, 9);
        let (_, observed) = generate(&gt, 20.0, 0.2).unwrap().remove(0);
        let model = gt.drivers[0].clone();
        let reports = score_fractions(
            std::slice::from_ref(&observed),
            &ModelSource::Fixed(&model),
            &[2.0, 5.0],
            2.0,
            16,
            5,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &reports).unwrap();
        let back = read_reports_csv(buf.as_slice()).unwrap();
        assert_eq!(back, reports);
    }

    #[test]
    fn pooled_models_are_sampled_deterministically() {
        let gt = recovery_ground_truth(3, 21);
        let (_, observed) = generate(&gt, 20.0, 0.2).unwrap().remove(0);
        let pool: Vec<DriverModel> = gt.drivers.clone();
        let run = || {
            score_fractions(
                std::slice::from_ref(&observed),
                &ModelSource::Pool(&pool),
                &[3.0],
                2.0,
                32,
                11,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
