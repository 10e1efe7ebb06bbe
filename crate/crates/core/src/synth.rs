//! Generative oracle: trajectories produced by the exact model (IDM mean +
//! AR(p) process error + observation noise) with known ground truth, used for
//! parameter recovery and derived test fixtures.

use crate::ar::{ar_mean, ArCoefficients};
use crate::error::{Error, Result};
use crate::idm::{ballistic_step, equilibrium_gap, idm_accel_unchecked, IdmParams, SamplingConfig};
use crate::likelihood::DriverModel;
use crate::trajectory::Trajectory;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Deterministic leader kinematics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LeaderProfile {
    /// Constant speed.
    Constant { v: f64 },
    /// Triangle wave between two speed levels with a fixed period; exercises
    /// braking and acceleration transients.
    Sawtooth { lo: f64, hi: f64, period: f64 },
    /// Re-play a recorded trajectory's leader channel unchanged.
    Recorded,
}

/// Leader position/speed sequences handed to the simulators.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderChannel {
    pub dt: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Leader vehicle length, m.
    pub length: f64,
}

impl LeaderChannel {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The leader channel of a recorded trajectory, unchanged.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        LeaderChannel {
            dt: traj.dt,
            x: traj.x_l.clone(),
            v: traj.v_l.clone(),
            length: traj.lead_length,
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        LeaderChannel {
            dt: self.dt,
            x: self.x[start..start + len].to_vec(),
            v: self.v[start..start + len].to_vec(),
            length: self.length,
        }
    }
}

/// Materialize a leader profile as `n` samples at step `dt`, starting at
/// position `x0`. `Recorded` requires the trajectory it replays.
pub fn leader_profile(
    kind: &LeaderProfile,
    n: usize,
    dt: f64,
    x0: f64,
    length: f64,
    recorded: Option<&Trajectory>,
) -> Result<LeaderChannel> {
    if n == 0 || !(dt > 0.0) {
        return Err(Error::Param("leader profile needs n > 0 and dt > 0".into()));
    }
    match kind {
        LeaderProfile::Constant { v } => {
            if !(*v >= 0.0) {
                return Err(Error::Param(format!("constant leader speed must be >= 0, got {v}")));
            }
            let x = (0..n).map(|i| x0 + v * i as f64 * dt).collect();
            Ok(LeaderChannel { dt, x, v: vec![*v; n], length })
        }
        LeaderProfile::Sawtooth { lo, hi, period } => {
            if !(*lo >= 0.0 && hi > lo && *period > 0.0) {
                return Err(Error::Param(format!(
                    "sawtooth needs 0 <= lo < hi and period > 0, got ({lo}, {hi}, {period})"
                )));
            }
            let half = period / 2.0;
            let speed = |t: f64| {
                let tau = t.rem_euclid(*period);
                if tau < half {
                    lo + (hi - lo) * tau / half
                } else {
                    hi - (hi - lo) * (tau - half) / half
                }
            };
            let v: Vec<f64> = (0..n).map(|i| speed(i as f64 * dt)).collect();
            // positions via trapezoid: exact for piecewise-linear speed
            let mut x = Vec::with_capacity(n);
            x.push(x0);
            for i in 1..n {
                x.push(x[i - 1] + 0.5 * (v[i - 1] + v[i]) * dt);
            }
            Ok(LeaderChannel { dt, x, v, length })
        }
        LeaderProfile::Recorded => {
            let traj = recorded.ok_or_else(|| {
                Error::Param("recorded leader profile needs a source trajectory".into())
            })?;
            Ok(LeaderChannel::from_trajectory(traj))
        }
    }
}

/// Everything needed to generate synthetic data with known truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Per-driver IDM parameters and AR error processes.
    pub drivers: Vec<DriverModel>,
    /// Speed observation noise, m/s.
    pub sigma_v: f64,
    /// Position observation noise, m.
    pub sigma_x: f64,
    pub leader: LeaderProfile,
    pub seed: u64,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        if self.drivers.is_empty() {
            return Err(Error::Param("ground truth needs at least one driver".into()));
        }
        for d in &self.drivers {
            d.idm.validate()?;
            if !crate::ar::is_stationary(&d.ar) {
                return Err(Error::Param(
                    "ground-truth AR coefficients must be stationary".into(),
                ));
            }
        }
        if self.sigma_v < 0.0 || self.sigma_x < 0.0 {
            return Err(Error::Param("observation noise must be nonnegative".into()));
        }
        Ok(())
    }
}

const LEAD_LENGTH: f64 = 5.0;

/// Generate one (latent, observed) trajectory pair per driver.
///
/// Latent states follow the generative recursion exactly: the acceleration is
/// the IDM mean plus the AR error, states advance ballistically, and the error
/// history starts at zero. Observed follower speeds and positions add i.i.d.
/// Gaussian noise; accelerations and the leader channel are carried unchanged.
pub fn generate(gt: &GroundTruth, duration: f64, dt: f64) -> Result<Vec<(Trajectory, Trajectory)>> {
    gt.validate()?;
    let steps = duration / dt;
    if (steps - steps.round()).abs() > 1e-9 || steps < 1.0 {
        return Err(Error::Param(format!(
            "duration {duration} s must be a positive multiple of dt = {dt} s"
        )));
    }
    let n = steps.round() as usize + 1;
    let mut out = Vec::with_capacity(gt.drivers.len());
    for (d, model) in gt.drivers.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(gt.seed);
        rng.set_stream(d as u64);
        let leader = leader_profile(&gt.leader, n, dt, 0.0, LEAD_LENGTH, None)?;
        let pair = generate_one(model, &leader, gt.sigma_v, gt.sigma_x, &mut rng, d)?;
        out.push(pair);
    }
    Ok(out)
}

fn generate_one(
    model: &DriverModel,
    leader: &LeaderChannel,
    sigma_v: f64,
    sigma_x: f64,
    rng: &mut ChaCha8Rng,
    driver_idx: usize,
) -> Result<(Trajectory, Trajectory)> {
    let n = leader.len();
    let dt = leader.dt;
    let cfg = SamplingConfig::new(dt)?;
    let p = model.ar.order();
    let std_normal = Normal::new(0.0, 1.0).map_err(|e| Error::Param(e.to_string()))?;

    // start at the equilibrium gap behind the leader's initial state
    let v_init = leader.v[0].min(model.idm.v0 * 0.95);
    let s_eq = equilibrium_gap(v_init, &model.idm)?;
    let mut x = leader.x[0] - leader.length - s_eq;
    let mut v = v_init;

    let mut eps_hist = vec![0.0; p];
    let mut x_f = Vec::with_capacity(n);
    let mut v_f = Vec::with_capacity(n);
    let mut a_f = Vec::with_capacity(n);
    for t in 0..n {
        let s = leader.x[t] - x - leader.length;
        if !(s > 0.0) {
            return Err(Error::Data(format!(
                "driver {driver_idx}: generated gap went non-positive at step {t}"
            )));
        }
        let idm = idm_accel_unchecked(s, v, v - leader.v[t], &model.idm);
        let eta = model.ar.sigma_eta * std_normal.sample(rng);
        let eps = ar_mean(&model.ar.rho, &eps_hist) + eta;
        let a = idm + eps;
        x_f.push(x);
        v_f.push(v);
        a_f.push(a);
        if p > 0 {
            eps_hist.rotate_right(1);
            eps_hist[0] = eps;
        }
        let (xn, vn) = ballistic_step(x, v, a, &cfg);
        x = xn;
        v = vn;
    }

    let id = format!("d{driver_idx}");
    let latent = Trajectory::new(
        id.clone(),
        dt,
        0.0,
        x_f.clone(),
        v_f.clone(),
        leader.x.clone(),
        leader.v.clone(),
        Some(a_f.clone()),
        leader.length,
    )?;

    let x_obs: Vec<f64> = x_f.iter().map(|&x| x + sigma_x * std_normal.sample(rng)).collect();
    let v_obs: Vec<f64> = v_f.iter().map(|&v| v + sigma_v * std_normal.sample(rng)).collect();
    let observed = Trajectory::new(
        id,
        dt,
        0.0,
        x_obs,
        v_obs,
        leader.x.clone(),
        leader.v.clone(),
        Some(a_f),
        leader.length,
    )?;
    Ok((latent, observed))
}

/// Population-level truth used by the recovery fixtures: the Table-1 AR(5)
/// posterior means.
pub fn table1_population_truth() -> (IdmParams, ArCoefficients) {
    (
        IdmParams::from_array([27.099, 2.843, 1.235, 0.813, 3.422]).unwrap(),
        crate::ar::table1_ar5(0.016),
    )
}

/// The default recovery fixture: `n_drivers` drivers whose log-IDM parameters
/// scatter around the Table-1 population truth, each paired with a jittered
/// copy of the Table-1 AR(5) process.
pub fn recovery_ground_truth(n_drivers: usize, seed: u64) -> GroundTruth {
    let (idm_pop, ar_pop) = table1_population_truth();
    let log_pop: Vec<f64> = idm_pop.as_array().iter().map(|v| v.ln()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX); // keep driver-parameter draws off the path streams
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut drivers = Vec::with_capacity(n_drivers);
    for _ in 0..n_drivers {
        let theta: Vec<f64> =
            log_pop.iter().map(|&m| (m + 0.05 * normal.sample(&mut rng)).exp()).collect();
        let rho: Vec<f64> =
            ar_pop.rho.iter().map(|&r| r + 0.01 * normal.sample(&mut rng)).collect();
        let ar = ArCoefficients::new(rho, ar_pop.sigma_eta).unwrap();
        let ar = if crate::ar::is_stationary(&ar) { ar } else { ar_pop.clone() };
        drivers.push(DriverModel::new(
            IdmParams::from_array([theta[0], theta[1], theta[2], theta[3], theta[4]]).unwrap(),
            ar,
        ));
    }
    // measurement noise must sit an order below the innovation speed scale
    // (sigma_eta * dt): the one-step likelihood conditions on observed lags
    // as exact, so noise at that scale rotates the recovered AR structure
    GroundTruth {
        drivers,
        sigma_v: 5e-4,
        sigma_x: 5e-4,
        leader: LeaderProfile::Sawtooth { lo: 4.0, hi: 20.0, period: 40.0 },
        seed,
    }
}

/// Assemble a truth-scaled [`crate::prior::HierarchyState`] from generative
/// ground truth, with the AR order coerced to `p` (truncating or zero-padding
/// the lag vectors). When `p` differs from the generative order, `sigma_eta`
/// is widened to the marginal error scale so residual quadratics stay O(1)
/// per step.
pub fn truth_state(gt: &GroundTruth, p: usize) -> Result<crate::prior::HierarchyState> {
    use crate::prior::{DriverParams, HierarchyState};
    gt.validate()?;
    let d = gt.drivers.len();
    let coerce = |rho: &[f64]| -> Vec<f64> {
        let mut r: Vec<f64> = rho.iter().copied().take(p).collect();
        r.resize(p, 0.0);
        r
    };
    let drivers: Vec<DriverParams> = gt
        .drivers
        .iter()
        .map(|m| {
            let mut log_theta = [0.0; 5];
            for (i, v) in m.idm.as_array().iter().enumerate() {
                log_theta[i] = v.ln();
            }
            DriverParams { log_theta, rho: coerce(&m.ar.rho) }
        })
        .collect();
    let mut log_theta_pop = [0.0; 5];
    for i in 0..5 {
        log_theta_pop[i] = drivers.iter().map(|dp| dp.log_theta[i]).sum::<f64>() / d as f64;
    }
    let mut sigma0 = [0.03; 5];
    if d > 1 {
        for i in 0..5 {
            let var = drivers
                .iter()
                .map(|dp| (dp.log_theta[i] - log_theta_pop[i]).powi(2))
                .sum::<f64>()
                / (d as f64 - 1.0);
            sigma0[i] = var.sqrt().max(0.03);
        }
    }
    let mut chol_corr = [[0.0; 5]; 5];
    for (i, row) in chol_corr.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut rho_pop = vec![0.0; p];
    for dp in &drivers {
        for k in 0..p {
            rho_pop[k] += dp.rho[k] / d as f64;
        }
    }
    let gen_order = gt.drivers[0].ar.order();
    let sigma_eta = if p == gen_order {
        gt.drivers[0].ar.sigma_eta
    } else {
        let cov = crate::ar::autocovariance(&gt.drivers[0].ar, gen_order.max(1))?;
        cov.gamma[0].sqrt()
    };
    Ok(HierarchyState {
        log_theta_pop,
        sigma0,
        chol_corr,
        rho_pop,
        sigma_eta,
        sigma_v: gt.sigma_v.max(1e-3),
        sigma_x: gt.sigma_x.max(1e-3),
        drivers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar::{autocovariance, bartlett_se, empirical_autocovariance_raw, table1_ar5};

    fn white_truth(sigma_eta: f64, sigma_v: f64, sigma_x: f64) -> GroundTruth {
        GroundTruth {
            drivers: vec![DriverModel::new(
                IdmParams::recommended(),
                ArCoefficients::white(sigma_eta.max(1e-15)).unwrap(),
            )],
            sigma_v,
            sigma_x,
            leader: LeaderProfile::Constant { v: 20.0 },
            seed: 1,
        }
    }

    #[test]
    fn noiseless_generation_is_deterministic_idm() {
        let gt = white_truth(1e-15, 0.0, 0.0);
        let pairs = generate(&gt, 30.0, 0.2).unwrap();
        let (latent, observed) = &pairs[0];
        assert_eq!(latent, observed);
        // equilibrium init under a constant-speed leader keeps the gap constant
        let g0 = latent.gap(0);
        for i in 0..latent.len() {
            assert!((latent.gap(i) - g0).abs() < 1e-6, "i={i}");
            assert!(latent.a_f.as_ref().unwrap()[i].abs() < 1e-7);
        }
    }

    #[test]
    fn latent_residuals_reproduce_ar_autocovariance() {
        // residual = a - IDM(state) recovers the error series exactly, so its
        // empirical autocovariance must match the Yule-Walker solution
        let ar = table1_ar5(0.05);
        let gt = GroundTruth {
            drivers: vec![DriverModel::new(IdmParams::recommended(), ar.clone())],
            sigma_v: 0.0,
            sigma_x: 0.0,
            leader: LeaderProfile::Constant { v: 20.0 },
            seed: 9,
        };
        let n_steps = 100_000;
        let pairs = generate(&gt, n_steps as f64 * 0.2, 0.2).unwrap();
        let (latent, _) = &pairs[0];
        let resid: Vec<f64> = (0..latent.len())
            .map(|t| {
                let st = latent.cf_state_at(t).unwrap();
                latent.a_f.as_ref().unwrap()[t]
                    - idm_accel_unchecked(st.s, st.v, st.dv, &gt.drivers[0].idm)
            })
            .collect();
        let emp = empirical_autocovariance_raw(&resid, 10).unwrap();
        let exact = autocovariance(&ar, 10).unwrap();
        let ext = autocovariance(&ar, 2000).unwrap();
        for k in 0..=10 {
            let se = bartlett_se(&ext, k, resid.len());
            assert!(
                (emp.gamma[k] - exact.gamma[k]).abs() < 3.0 * se,
                "lag {k}: emp={} exact={} se={se}",
                emp.gamma[k],
                exact.gamma[k]
            );
        }
    }

    #[test]
    fn constant_leader_profile() {
        let ch =
            leader_profile(&LeaderProfile::Constant { v: 20.0 }, 500, 0.2, 0.0, 5.0, None).unwrap();
        assert_eq!(ch.len(), 500);
        assert!(ch.x.windows(2).all(|w| w[1] > w[0]));
        assert!((ch.x[499] - 20.0 * 499.0 * 0.2).abs() < 1e-9);
    }

    #[test]
    fn sawtooth_range_is_exact() {
        let ch = leader_profile(
            &LeaderProfile::Sawtooth { lo: 15.0, hi: 25.0, period: 40.0 },
            1000,
            0.2,
            0.0,
            5.0,
            None,
        )
        .unwrap();
        let min = ch.v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = ch.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, 15.0);
        assert_eq!(max, 25.0);
    }

    #[test]
    fn recorded_profile_round_trips() {
        let gt = white_truth(0.05, 0.0, 0.0);
        let (latent, _) = generate(&gt, 10.0, 0.2).unwrap().remove(0);
        let ch = leader_profile(&LeaderProfile::Recorded, 0, 0.2, 0.0, 5.0, Some(&latent))
            .unwrap_or_else(|_| LeaderChannel::from_trajectory(&latent));
        assert_eq!(ch.x, latent.x_l);
        assert_eq!(ch.v, latent.v_l);
    }

    #[test]
    fn generation_deterministic_per_seed() {
        let gt = recovery_ground_truth(3, 5);
        let a = generate(&gt, 20.0, 0.2).unwrap();
        let b = generate(&gt, 20.0, 0.2).unwrap();
        assert_eq!(a, b);
        let mut gt2 = gt.clone();
        gt2.seed = 6;
        let c = generate(&gt2, 20.0, 0.2).unwrap();
        assert_ne!(a[0].0, c[0].0);
    }

    #[test]
    fn observed_differs_from_latent_by_declared_noise() {
        let gt = white_truth(0.05, 0.03, 0.08);
        let pairs = generate(&gt, 2000.0, 0.2).unwrap();
        let (latent, observed) = &pairs[0];
        let n = latent.len();
        let dv: Vec<f64> = (0..n).map(|i| observed.v_f[i] - latent.v_f[i]).collect();
        let dx: Vec<f64> = (0..n).map(|i| observed.x_f[i] - latent.x_f[i]).collect();
        // paired differences are the i.i.d. observation noise; 3 MC SE bands
        // around the declared variances (var of sample variance ~ 2 sigma^4 / n)
        let n_f = n as f64;
        let var_v = crate::stats::variance(&dv);
        let se_v = (2.0f64 / (n_f - 1.0)).sqrt() * 0.03 * 0.03;
        assert!((var_v - 0.0009).abs() < 3.0 * se_v, "var_v={var_v}");
        let var_x = crate::stats::variance(&dx);
        let se_x = (2.0f64 / (n_f - 1.0)).sqrt() * 0.08 * 0.08;
        assert!((var_x - 0.0064).abs() < 3.0 * se_x, "var_x={var_x}");
        assert_eq!(latent.a_f, observed.a_f);
        assert_eq!(latent.x_l, observed.x_l);
    }

    #[test]
    fn p0_latent_residuals_are_white() {
        let gt = white_truth(0.1, 0.0, 0.0);
        let pairs = generate(&gt, 20_000.0, 0.2).unwrap();
        let (latent, _) = &pairs[0];
        let resid: Vec<f64> = (0..latent.len())
            .map(|t| {
                let st = latent.cf_state_at(t).unwrap();
                latent.a_f.as_ref().unwrap()[t]
                    - idm_accel_unchecked(st.s, st.v, st.dv, &gt.drivers[0].idm)
            })
            .collect();
        let n = resid.len();
        let emp = empirical_autocovariance_raw(&resid, 10).unwrap();
        // for white noise the empirical autocorrelation at any positive lag has
        // SE ~ 1/sqrt(n)
        let se = 1.0 / (n as f64).sqrt();
        for k in 1..=10 {
            let r = emp.gamma[k] / emp.gamma[0];
            assert!(r.abs() < 3.0 * se, "lag {k}: autocorr {r} exceeds 3/sqrt(n)");
        }
    }

    #[test]
    fn non_integral_duration_rejected() {
        let gt = white_truth(0.05, 0.0, 0.0);
        assert!(generate(&gt, 10.05, 0.2).is_err());
    }
}
