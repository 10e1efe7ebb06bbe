//! The Intelligent Driver Model acceleration law and the ballistic state update.
//!
//! Everything here is a pure function; stochastic behavior and speed clamping live
//! in [`crate::sim`], so the expressions below stay identical to the forms used by
//! the likelihoods.

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::trajectory::CfState;
use serde::{Deserialize, Serialize};

/// The five physical IDM parameters of one driver.
///
/// `s1` (the gap-term coefficient) is fixed at zero; it is kept as a field so the
/// desired-gap expression reads like its usual statement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired (free-flow) speed, m/s.
    pub v0: f64,
    /// Jam spacing, m.
    pub s0: f64,
    /// Safe time headway, s.
    pub t_hw: f64,
    /// Maximum acceleration, m/s^2.
    pub alpha: f64,
    /// Comfortable deceleration, m/s^2 (stored positive).
    pub beta: f64,
    /// Gap-term coefficient, m. Fixed at 0.
    pub s1: f64,
}

/// Recommended parameter values used as the prior location.
pub const THETA_REC: [f64; 5] = [33.3, 2.0, 1.6, 1.5, 1.67];

impl IdmParams {
    pub fn new(v0: f64, s0: f64, t_hw: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = IdmParams { v0, s0, t_hw, alpha, beta, s1: 0.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn from_array(theta: [f64; 5]) -> Result<Self> {
        Self::new(theta[0], theta[1], theta[2], theta[3], theta[4])
    }

    /// Recommended values from the IDM literature.
    pub fn recommended() -> Self {
        Self::from_array(THETA_REC).unwrap()
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.v0, self.s0, self.t_hw, self.alpha, self.beta]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.v0 > 0.0 && self.s0 > 0.0 && self.t_hw > 0.0 && self.alpha > 0.0 && self.beta > 0.0;
        if !ok || !self.as_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Param(format!(
                "IDM parameters must be strictly positive and finite, got {:?}",
                self.as_array()
            )));
        }
        if self.s1 != 0.0 {
            return Err(Error::Param("s1 is fixed at 0".into()));
        }
        Ok(())
    }
}

/// Simulation / integration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Step length, s.
    pub dt: f64,
}

impl SamplingConfig {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Param(format!("dt must be positive, got {dt}")));
        }
        Ok(SamplingConfig { dt })
    }
}

/// Desired minimum gap s*(v, dv). Not clamped at zero: strongly negative
/// approach rates may drive it negative, exactly as the closed form reads.
pub fn desired_gap(v: f64, dv: f64, p: &IdmParams) -> f64 {
    let mut s = p.s0 + v * p.t_hw + v * dv / (2.0 * (p.alpha * p.beta).sqrt());
    if p.s1 != 0.0 {
        s += p.s1 * (v / p.v0).sqrt();
    }
    s
}

/// IDM acceleration a(s, v, dv). Errors if the gap is not positive.
pub fn idm_accel(state: &CfState, p: &IdmParams) -> Result<f64> {
    if !(state.s > 0.0) {
        return Err(Error::Domain(format!(
            "IDM requires a positive gap, got s = {}",
            state.s
        )));
    }
    Ok(idm_accel_unchecked(state.s, state.v, state.dv, p))
}

/// IDM acceleration without the gap check; callers guarantee s > 0.
#[inline]
pub fn idm_accel_unchecked(s: f64, v: f64, dv: f64, p: &IdmParams) -> f64 {
    let s_star = desired_gap(v, dv, p);
    let ratio = s_star / s;
    p.alpha * (1.0 - (v / p.v0).powi(4) - ratio * ratio)
}

/// Per-driver quantities that do not depend on the time step, hoisted out of
/// the likelihood loops.
pub struct IdmTerms<S> {
    pub v0: S,
    pub s0: S,
    pub t_hw: S,
    pub alpha: S,
    /// 1 / (2 sqrt(alpha beta))
    pub half_inv_sqrt_ab: S,
    /// 1 / v0^4
    pub inv_v0_4: S,
}

impl<S: Real> IdmTerms<S> {
    /// `theta` ordered as [v0, s0, T, alpha, beta].
    pub fn new(theta: &[S; 5]) -> Self {
        let v0 = theta[0];
        let alpha = theta[3];
        let beta = theta[4];
        IdmTerms {
            v0,
            s0: theta[1],
            t_hw: theta[2],
            alpha,
            half_inv_sqrt_ab: ((alpha * beta).sqrt().mulc(2.0)).recip(),
            inv_v0_4: v0.powi4().recip(),
        }
    }

    /// IDM acceleration with the kinematic inputs as plain data.
    #[inline]
    pub fn accel(&self, s: f64, v: f64, dv: f64) -> S {
        let s_star = self.t_hw.mulc(v) + self.half_inv_sqrt_ab.mulc(v * dv) + self.s0;
        let ratio = s_star.mulc(1.0 / s);
        let free = self.inv_v0_4.mulc(v.powi(4));
        self.alpha * (free + ratio.sq()).csub(1.0)
    }
}

/// One ballistic (constant-acceleration) step: exact over the interval.
pub fn ballistic_step(x: f64, v: f64, a: f64, cfg: &SamplingConfig) -> (f64, f64) {
    let dt = cfg.dt;
    (x + v * dt + 0.5 * a * dt * dt, v + a * dt)
}

/// Equilibrium gap at speed `v` with zero approach rate, i.e. the gap where
/// the IDM acceleration vanishes. Exists only for 0 <= v < v0.
pub fn equilibrium_gap(v: f64, p: &IdmParams) -> Result<f64> {
    if !(v >= 0.0 && v < p.v0) {
        return Err(Error::Domain(format!(
            "equilibrium gap requires 0 <= v < v0, got v = {v}, v0 = {}",
            p.v0
        )));
    }
    let s_star = desired_gap(v, 0.0, p);
    Ok(s_star / (1.0 - (v / p.v0).powi(4)).sqrt())
}

/// Equilibrium speed for a given gap: the inverse of [`equilibrium_gap`],
/// found by bisection (the equilibrium gap is strictly increasing in speed).
pub fn equilibrium_speed(gap: f64, p: &IdmParams) -> Result<f64> {
    if !(gap > p.s0) {
        return Err(Error::Domain(format!(
            "equilibrium speed requires gap > s0, got gap = {gap}, s0 = {}",
            p.s0
        )));
    }
    let (mut lo, mut hi) = (0.0, p.v0 * (1.0 - 1e-12));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if equilibrium_gap(mid, p)? < gap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
