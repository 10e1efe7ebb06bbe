//! Stochastic rollout engines: single-follower ensembles, platoons where each
//! vehicle follows the simulated vehicle ahead, and ring-road multi-vehicle
//! runs.
//!
//! Every engine draws the process error from the AR recursion: at each step the
//! IDM mean is computed from the current simulated state, the AR correction
//! uses the rollout's own past errors, and a fresh white-noise innovation is
//! added. Error bookkeeping uses the realized acceleration minus the IDM mean,
//! so speed clamping feeds back into the recursion consistently. Commanded
//! speeds are floored at zero; collisions are recorded and the gap is floored
//! at 0.01 m for the IDM input rather than aborting the rollout.

use crate::ar::ar_mean;
use crate::error::{Error, Result};
use crate::idm::{equilibrium_gap, idm_accel_unchecked, IdmParams};
use crate::likelihood::DriverModel;
use crate::stats::quantile_sorted;
use crate::synth::LeaderChannel;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Gap floor handed to the IDM after a recorded collision.
pub const GAP_FLOOR: f64 = 0.01;

const STREAMS_PER_ROLLOUT: u64 = 4096;

/// Initial follower state for a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerInit {
    pub x0: f64,
    pub v0: f64,
}

/// A recorded gap-collapse event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub rollout: usize,
    pub vehicle: usize,
    pub step: usize,
}

/// A set of stochastic rollouts of one follower.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEnsemble {
    pub dt: f64,
    /// `[rollout][step]` positions.
    pub xs: Vec<Vec<f64>>,
    pub vs: Vec<Vec<f64>>,
    /// Realized accelerations; the final entry is the acceleration computed at
    /// the last state (not applied).
    pub accs: Vec<Vec<f64>>,
    pub collisions: Vec<CollisionEvent>,
    /// Number of steps where the commanded acceleration was limited to keep
    /// the speed nonnegative.
    pub speed_floor_events: usize,
}

impl SimEnsemble {
    pub fn n_rollouts(&self) -> usize {
        self.xs.len()
    }

    pub fn horizon(&self) -> usize {
        self.xs.first().map_or(0, |x| x.len())
    }

    /// Cross-rollout mean of a variable at each step.
    pub fn mean_series(&self, var: SimVar) -> Vec<f64> {
        let t = self.horizon();
        let n = self.n_rollouts() as f64;
        let mut out = vec![0.0; t];
        for r in 0..self.n_rollouts() {
            let series = self.series(var, r);
            for (o, v) in out.iter_mut().zip(series) {
                *o += v / n;
            }
        }
        out
    }

    pub fn series(&self, var: SimVar, rollout: usize) -> &[f64] {
        match var {
            SimVar::Position => &self.xs[rollout],
            SimVar::Speed => &self.vs[rollout],
            SimVar::Accel => &self.accs[rollout],
        }
    }
}

/// Which state variable of an ensemble to inspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimVar {
    Position,
    Speed,
    Accel,
}

/// Pointwise quantile bands of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBands {
    pub levels: Vec<f64>,
    /// `[level][step]` for each variable.
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
}

/// One follower rollout; shared kernel for all engines.
struct RolloutState {
    x: f64,
    v: f64,
    eps: Vec<f64>,
    xs: Vec<f64>,
    vs: Vec<f64>,
    accs: Vec<f64>,
    collisions: Vec<usize>,
    floor_events: usize,
}

impl RolloutState {
    fn new(init: FollowerInit, eps0: Vec<f64>, horizon: usize) -> Self {
        RolloutState {
            x: init.x0,
            v: init.v0,
            eps: eps0,
            xs: Vec::with_capacity(horizon),
            vs: Vec::with_capacity(horizon),
            accs: Vec::with_capacity(horizon),
            collisions: Vec::new(),
            floor_events: 0,
        }
    }

    /// Advance one step given the leader state at the current step. `advance`
    /// is false at the final step, where the acceleration is recorded but the
    /// state is left in place.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        step: usize,
        leader_x: f64,
        leader_v: f64,
        lead_length: f64,
        model: &DriverModel,
        dt: f64,
        eta: f64,
        advance: bool,
    ) {
        let mut s = leader_x - self.x - lead_length;
        if s <= 0.0 {
            self.collisions.push(step);
            s = GAP_FLOOR;
        }
        let idm = idm_accel_unchecked(s, self.v, self.v - leader_v, &model.idm);
        let mut a = idm + ar_mean(&model.ar.rho, &self.eps) + eta;
        // keep the commanded speed nonnegative
        if self.v + a * dt < 0.0 {
            a = -self.v / dt;
            self.floor_events += 1;
        }
        self.xs.push(self.x);
        self.vs.push(self.v);
        self.accs.push(a);
        if !self.eps.is_empty() {
            self.eps.rotate_right(1);
            self.eps[0] = a - idm;
        }
        if advance {
            let (xn, vn) = crate::idm::ballistic_step(self.x, self.v, a, &crate::idm::SamplingConfig { dt });
            self.x = xn;
            self.v = vn;
        }
    }
}

fn rollout_rng(seed: u64, rollout: usize, vehicle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rollout as u64 * STREAMS_PER_ROLLOUT + vehicle as u64);
    rng
}

fn single_rollout(
    leader: &LeaderChannel,
    init: FollowerInit,
    eps0: Vec<f64>,
    model: &DriverModel,
    seed: u64,
    rollout: usize,
    vehicle: usize,
) -> RolloutState {
    let mut rng = rollout_rng(seed, rollout, vehicle);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let t = leader.len();
    let mut state = RolloutState::new(init, eps0, t);
    for step in 0..t {
        let eta = model.ar.sigma_eta * normal.sample(&mut rng);
        state.step(
            step,
            leader.x[step],
            leader.v[step],
            leader.length,
            model,
            leader.dt,
            eta,
            step + 1 < t,
        );
    }
    state
}

/// Probabilistic single-follower simulation: `n_rollouts` independent rollouts
/// against a fixed leader channel. Deterministic given the seed.
pub fn simulate_follower(
    leader: &LeaderChannel,
    init: FollowerInit,
    model: &DriverModel,
    n_rollouts: usize,
    seed: u64,
) -> Result<SimEnsemble> {
    check_follower_inputs(leader, init, n_rollouts)?;
    model.idm.validate()?;
    let p = model.ar.order();
    let states: Vec<RolloutState> = (0..n_rollouts)
        .into_par_iter()
        .map(|r| single_rollout(leader, init, vec![0.0; p], model, seed, r, 0))
        .collect();
    Ok(collect_ensemble(states, leader.dt, 0))
}

/// Like [`simulate_follower`] but with one driver model per rollout (e.g.
/// posterior draws); `models.len()` sets the rollout count. `eps_init`
/// optionally warm-starts each rollout's error lags (most recent first) from
/// observed pre-horizon residuals; it must match each model's AR order.
pub fn simulate_follower_models(
    leader: &LeaderChannel,
    init: FollowerInit,
    models: &[DriverModel],
    eps_init: Option<&[Vec<f64>]>,
    seed: u64,
) -> Result<SimEnsemble> {
    check_follower_inputs(leader, init, models.len())?;
    for (r, m) in models.iter().enumerate() {
        m.idm.validate()?;
        if let Some(eps) = eps_init {
            if eps.len() != models.len() || eps[r].len() != m.ar.order() {
                return Err(Error::Dim(
                    "eps_init must provide one length-p history per rollout".into(),
                ));
            }
        }
    }
    let states: Vec<RolloutState> = models
        .par_iter()
        .enumerate()
        .map(|(r, m)| {
            let eps0 = match eps_init {
                Some(eps) => eps[r].clone(),
                None => vec![0.0; m.ar.order()],
            };
            single_rollout(leader, init, eps0, m, seed, r, 0)
        })
        .collect();
    Ok(collect_ensemble(states, leader.dt, 0))
}

fn check_follower_inputs(leader: &LeaderChannel, init: FollowerInit, n_rollouts: usize) -> Result<()> {
    if leader.len() < 2 {
        return Err(Error::Param("leader channel needs at least two samples".into()));
    }
    if n_rollouts == 0 {
        return Err(Error::Param("need at least one rollout".into()));
    }
    if !(leader.x[0] - init.x0 - leader.length > 0.0) {
        return Err(Error::Param("follower must start strictly behind the leader".into()));
    }
    Ok(())
}

fn collect_ensemble(states: Vec<RolloutState>, dt: f64, vehicle: usize) -> SimEnsemble {
    let mut xs = Vec::with_capacity(states.len());
    let mut vs = Vec::with_capacity(states.len());
    let mut accs = Vec::with_capacity(states.len());
    let mut collisions = Vec::new();
    let mut floors = 0;
    for (r, st) in states.into_iter().enumerate() {
        for step in st.collisions {
            collisions.push(CollisionEvent { rollout: r, vehicle, step });
        }
        floors += st.floor_events;
        xs.push(st.xs);
        vs.push(st.vs);
        accs.push(st.accs);
    }
    SimEnsemble { dt, xs, vs, accs, collisions, speed_floor_events: floors }
}

/// Joint platoon simulation: follower k's leader is follower k-1's realized
/// trajectory within the same rollout. With a single follower this reduces to
/// [`simulate_follower`] bit for bit (identical RNG streams).
pub fn simulate_platoon(
    leader: &LeaderChannel,
    followers: &[DriverModel],
    inits: &[FollowerInit],
    vehicle_lengths: &[f64],
    n_rollouts: usize,
    seed: u64,
) -> Result<Vec<SimEnsemble>> {
    if followers.is_empty() || followers.len() != inits.len() {
        return Err(Error::Param("need one init per follower".into()));
    }
    if vehicle_lengths.len() != followers.len() {
        return Err(Error::Param("need one vehicle length per follower".into()));
    }
    if leader.len() < 2 {
        return Err(Error::Param("leader channel needs at least two samples".into()));
    }
    let t = leader.len();
    let n_f = followers.len();
    let per_rollout: Vec<Vec<RolloutState>> = (0..n_rollouts)
        .into_par_iter()
        .map(|r| {
            let mut chain: Vec<RolloutState> = Vec::with_capacity(n_f);
            for k in 0..n_f {
                let mut rng = rollout_rng(seed, r, k);
                let normal = Normal::new(0.0, 1.0).unwrap();
                let model = &followers[k];
                let mut st = RolloutState::new(inits[k], vec![0.0; model.ar.order()], t);
                // the immediate leader's realized states and its length
                let (lead_len, prev): (f64, Option<&RolloutState>) = if k == 0 {
                    (leader.length, None)
                } else {
                    (vehicle_lengths[k - 1], Some(&chain[k - 1]))
                };
                for step in 0..t {
                    let (lx, lv) = match prev {
                        None => (leader.x[step], leader.v[step]),
                        Some(p) => (p.xs[step], p.vs[step]),
                    };
                    let eta = model.ar.sigma_eta * normal.sample(&mut rng);
                    st.step(step, lx, lv, lead_len, model, leader.dt, eta, step + 1 < t);
                }
                chain.push(st);
            }
            chain
        })
        .collect();

    // regroup per follower
    let mut grouped: Vec<Vec<RolloutState>> = (0..n_f).map(|_| Vec::with_capacity(n_rollouts)).collect();
    for rollout in per_rollout {
        for (k, st) in rollout.into_iter().enumerate() {
            grouped[k].push(st);
        }
    }
    Ok(grouped
        .into_iter()
        .enumerate()
        .map(|(k, states)| collect_ensemble(states, leader.dt, k + 1))
        .collect())
}

/// Per-follower time-variance of speed averaged over rollouts, plus the
/// downstream/upstream ratios (a string-stability indicator: ratios above one
/// mean amplification along the platoon).
pub fn speed_variance_ratios(leader: &LeaderChannel, ensembles: &[SimEnsemble]) -> (Vec<f64>, Vec<f64>) {
    let mut vars = Vec::with_capacity(ensembles.len() + 1);
    vars.push(crate::stats::variance(&leader.v));
    for e in ensembles {
        let mut acc = 0.0;
        for r in 0..e.n_rollouts() {
            acc += crate::stats::variance(&e.vs[r]);
        }
        vars.push(acc / e.n_rollouts() as f64);
    }
    let ratios = vars.windows(2).map(|w| w[1] / w[0]).collect();
    (vars, ratios)
}

/// Ring-road configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingConfig {
    /// Ring radius, m.
    pub radius: f64,
    pub n_vehicles: usize,
    /// Initial speed of every vehicle, m/s.
    pub v_init: f64,
    pub steps: usize,
    pub dt: f64,
    /// Vehicle length, m.
    pub vehicle_length: f64,
}

impl Default for RingConfig {
    fn default() -> Self {
        RingConfig {
            radius: 128.0,
            n_vehicles: 32,
            v_init: 11.6,
            steps: 15000,
            dt: 0.2,
            vehicle_length: 5.0,
        }
    }
}

impl RingConfig {
    pub fn circumference(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.radius
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles < 2 || self.steps == 0 || !(self.dt > 0.0) || !(self.v_init >= 0.0) {
            return Err(Error::Param("invalid ring configuration".into()));
        }
        let gap = self.circumference() / self.n_vehicles as f64 - self.vehicle_length;
        if gap < 1.0 {
            return Err(Error::Param(format!(
                "vehicles overlap at initialization: uniform gap would be {gap:.2} m"
            )));
        }
        Ok(())
    }

    /// Uniform bumper-to-bumper gap at initialization.
    pub fn uniform_gap(&self) -> f64 {
        self.circumference() / self.n_vehicles as f64 - self.vehicle_length
    }
}

/// One ring-road rollout: unwrapped positions per vehicle over time.
#[derive(Debug, Clone, PartialEq)]
pub struct RingRollout {
    pub config: RingConfig,
    /// `[vehicle][step]` unwrapped positions (project with `x %
    /// circumference` for on-circle coordinates).
    pub xs: Vec<Vec<f64>>,
    pub vs: Vec<Vec<f64>>,
    pub collisions: Vec<CollisionEvent>,
    pub speed_floor_events: usize,
}

impl RingRollout {
    /// Bumper-to-bumper gap ahead of vehicle `i` at `step`. Vehicles never
    /// pass, so unwrapped positions keep their cyclic order and the last
    /// vehicle's leader is vehicle 0 one lap ahead.
    pub fn gap(&self, i: usize, step: usize) -> f64 {
        let n = self.config.n_vehicles;
        let ahead = (i + 1) % n;
        let wrap = if ahead == 0 { self.config.circumference() } else { 0.0 };
        self.xs[ahead][step] + wrap - self.xs[i][step] - self.config.vehicle_length
    }

    /// Standard deviation of speeds across vehicles at one step.
    pub fn spatial_speed_std(&self, step: usize) -> f64 {
        let speeds: Vec<f64> = self.vs.iter().map(|v| v[step]).collect();
        crate::stats::std_dev(&speeds)
    }
}

/// Multi-vehicle ring-road simulation. `models` supplies one driver model per
/// vehicle; all vehicles start uniformly spaced at `cfg.v_init`.
pub fn simulate_ring(cfg: &RingConfig, models: &[DriverModel], seed: u64) -> Result<RingRollout> {
    cfg.validate()?;
    if models.len() != cfg.n_vehicles {
        return Err(Error::Param(format!(
            "need {} driver models, got {}",
            cfg.n_vehicles,
            models.len()
        )));
    }
    let n = cfg.n_vehicles;
    let circ = cfg.circumference();
    let spacing = circ / n as f64;
    let mut x: Vec<f64> = (0..n).map(|i| i as f64 * spacing).collect();
    let mut v = vec![cfg.v_init; n];
    let mut eps: Vec<Vec<f64>> = models.iter().map(|m| vec![0.0; m.ar.order()]).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| rollout_rng(seed, 0, i)).collect();
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut xs: Vec<Vec<f64>> = (0..n).map(|_| Vec::with_capacity(cfg.steps)).collect();
    let mut vs: Vec<Vec<f64>> = (0..n).map(|_| Vec::with_capacity(cfg.steps)).collect();
    let mut collisions = Vec::new();
    let mut floor_events = 0usize;

    for step in 0..cfg.steps {
        for i in 0..n {
            xs[i].push(x[i]);
            vs[i].push(v[i]);
        }
        // simultaneous update from the state at this step
        let mut a = vec![0.0; n];
        for i in 0..n {
            let ahead = (i + 1) % n;
            let wrap = if ahead == 0 { circ } else { 0.0 };
            let mut s = x[ahead] + wrap - x[i] - cfg.vehicle_length;
            if s <= 0.0 {
                collisions.push(CollisionEvent { rollout: 0, vehicle: i, step });
                s = GAP_FLOOR;
            }
            let m = &models[i];
            let idm = idm_accel_unchecked(s, v[i], v[i] - v[ahead], &m.idm);
            let eta = m.ar.sigma_eta * normal.sample(&mut rngs[i]);
            let mut ai = idm + ar_mean(&m.ar.rho, &eps[i]) + eta;
            if v[i] + ai * cfg.dt < 0.0 {
                ai = -v[i] / cfg.dt;
                floor_events += 1;
            }
            if !eps[i].is_empty() {
                eps[i].rotate_right(1);
                eps[i][0] = ai - idm;
            }
            a[i] = ai;
        }
        for i in 0..n {
            let (xn, vn) =
                crate::idm::ballistic_step(x[i], v[i], a[i], &crate::idm::SamplingConfig { dt: cfg.dt });
            x[i] = xn;
            v[i] = vn;
        }
    }

    Ok(RingRollout { config: cfg.clone(), xs, vs, collisions, speed_floor_events: floor_events })
}

/// Pointwise quantile bands per step and state variable.
pub fn ensemble_envelope(e: &SimEnsemble, levels: &[f64]) -> Result<QuantileBands> {
    if e.n_rollouts() == 0 {
        return Err(Error::Param("empty ensemble".into()));
    }
    if levels.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::Param("quantile levels must lie in [0, 1]".into()));
    }
    let t = e.horizon();
    let bands_for = |series: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; t]; levels.len()];
        let mut buf = vec![0.0; e.n_rollouts()];
        for step in 0..t {
            for (r, slot) in buf.iter_mut().enumerate() {
                *slot = series[r][step];
            }
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (li, &q) in levels.iter().enumerate() {
                out[li][step] = quantile_sorted(&buf, q);
            }
        }
        out
    };
    Ok(QuantileBands {
        levels: levels.to_vec(),
        x: bands_for(&e.xs),
        v: bands_for(&e.vs),
        a: bands_for(&e.accs),
    })
}

/// Equilibrium follower init behind the leader's first state.
pub fn equilibrium_init(leader: &LeaderChannel, idm: &IdmParams) -> Result<FollowerInit> {
    let v = leader.v[0].min(idm.v0 * 0.95);
    let gap = equilibrium_gap(v, idm)?;
    Ok(FollowerInit { x0: leader.x[0] - leader.length - gap, v0: v })
}
