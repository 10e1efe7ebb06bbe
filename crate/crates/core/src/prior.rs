//! Hierarchical prior over population- and driver-level parameters, the
//! bijective unconstrained reparameterization, and the log-posterior target
//! handed to the sampler.
//!
//! Unconstrained coordinate layout (in order):
//!
//! ```text
//! ln theta_pop (5) | ln sigma0 (5) | corr y (10) | rho_pop (p) |
//! ln sigma_eta | ln sigma_v | ln sigma_x |
//! per driver d: z_theta_d (5) | rho_d (p)
//! ```
//!
//! Driver-level IDM parameters are non-centered:
//! `ln theta_d = ln theta_pop + diag(sigma0) (L z_d)` with `z_d` standard
//! normal and `L` the correlation Cholesky factor, so
//! `Sigma = diag(sigma0) L L' diag(sigma0)`. Driver-level AR coefficients are
//! stored directly (their prior scale `sigma_rho` is a fixed hyperparameter,
//! so no funnel arises). The correlation factor is parameterized by canonical
//! partial correlations `z = tanh(y)`; under the LKJ prior these are
//! independent scaled-Beta variables, which makes the density self-normalizing.

use crate::ar::ArCoefficients;
use crate::autodiff::{Real, Tape};
use crate::error::{Error, Result};
use crate::idm::{IdmParams, THETA_REC};
use crate::likelihood::{
    accel_loglik_generic, joint_loglik_generic, position_loglik_generic, speed_loglik_generic,
    DriverModel, LikelihoodMode, ObservationNoise, TrajData,
};
use crate::sampler::LogDensity;
use crate::stats::{ln_beta, LN_2PI};
use crate::trajectory::Trajectory;
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

/// Number of IDM parameters.
pub const K_THETA: usize = 5;
/// Strictly-lower entries of the 5x5 correlation factor.
pub const N_CORR: usize = K_THETA * (K_THETA - 1) / 2;

/// Fixed hyperparameters of the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Rate of the exponential prior on each population scale sigma0_i.
    pub lambda0: f64,
    /// LKJ shape for the correlation factor.
    pub eta_lkj: f64,
    /// Covariance of the prior on ln theta_pop.
    #[serde(rename = "Sigma0", alias = "sigma0")]
    pub sigma0_cov: [[f64; 5]; 5],
    /// Rate of the exponential prior on sigma_eta.
    pub lambda_eta: f64,
    /// Population AR-coefficient prior standard deviation.
    pub sigma_rho0: f64,
    /// Driver-level AR-coefficient standard deviation (fixed).
    pub sigma_rho: f64,
    /// Rate of the exponential prior on sigma_v.
    pub lambda_v: f64,
    /// Rate of the exponential prior on sigma_x.
    pub lambda_x: f64,
    /// Prior location of ln theta_pop (natural units).
    pub theta_rec: [f64; 5],
}

impl Default for HyperParams {
    fn default() -> Self {
        let mut sigma0_cov = [[0.0; 5]; 5];
        for (i, row) in sigma0_cov.iter_mut().enumerate() {
            row[i] = 0.1;
        }
        HyperParams {
            lambda0: 100.0,
            eta_lkj: 2.0,
            sigma0_cov,
            lambda_eta: 2e6,
            sigma_rho0: 1.0,
            sigma_rho: 0.1,
            lambda_v: 1e6,
            lambda_x: 1e7,
            theta_rec: THETA_REC,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.lambda0,
            self.lambda_eta,
            self.lambda_v,
            self.lambda_x,
            self.sigma_rho0,
            self.sigma_rho,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Param("all prior rates and scales must be positive".into()));
        }
        if !(self.eta_lkj >= 1.0) {
            return Err(Error::Param(format!("eta_lkj must be >= 1, got {}", self.eta_lkj)));
        }
        if self.theta_rec.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Param("theta_rec entries must be positive".into()));
        }
        self.sigma0_precision()?;
        Ok(())
    }

    /// Inverse and log-determinant of `Sigma0`; errors unless symmetric
    /// positive definite.
    pub fn sigma0_precision(&self) -> Result<([[f64; 5]; 5], f64)> {
        let m = DMatrix::from_fn(5, 5, |i, j| self.sigma0_cov[i][j]);
        if (&m - m.transpose()).abs().max() > 1e-10 {
            return Err(Error::Param("Sigma0 must be symmetric".into()));
        }
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Param("Sigma0 must be positive definite".into()))?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv = chol.inverse();
        let mut w = [[0.0; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                w[i][j] = inv[(i, j)];
            }
        }
        Ok((w, logdet))
    }
}

/// Dimension bookkeeping for the flat unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_drivers: usize,
    /// AR order.
    pub p: usize,
}

impl ParamLayout {
    pub fn new(n_drivers: usize, p: usize) -> Result<Self> {
        if n_drivers == 0 {
            return Err(Error::Param("need at least one driver".into()));
        }
        if p > crate::ar::MAX_ORDER {
            return Err(Error::Param(format!("AR order {p} exceeds {}", crate::ar::MAX_ORDER)));
        }
        Ok(ParamLayout { n_drivers, p })
    }

    pub fn dim(&self) -> usize {
        K_THETA + K_THETA + N_CORR + self.p + 3 + self.n_drivers * (K_THETA + self.p)
    }

    pub fn idx_log_theta_pop(&self) -> usize {
        0
    }
    pub fn idx_log_sigma0(&self) -> usize {
        K_THETA
    }
    pub fn idx_corr(&self) -> usize {
        2 * K_THETA
    }
    pub fn idx_rho_pop(&self) -> usize {
        2 * K_THETA + N_CORR
    }
    pub fn idx_log_sigma_eta(&self) -> usize {
        self.idx_rho_pop() + self.p
    }
    pub fn idx_log_sigma_v(&self) -> usize {
        self.idx_log_sigma_eta() + 1
    }
    pub fn idx_log_sigma_x(&self) -> usize {
        self.idx_log_sigma_eta() + 2
    }
    pub fn idx_driver(&self, d: usize) -> usize {
        self.idx_log_sigma_eta() + 3 + d * (K_THETA + self.p)
    }
}

/// Per-driver constrained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverParams {
    pub log_theta: [f64; 5],
    pub rho: Vec<f64>,
}

/// All model parameters in constrained (physical) coordinates. Bijective with
/// the flat unconstrained vector through [`constrain`] / [`unconstrain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyState {
    pub log_theta_pop: [f64; 5],
    pub sigma0: [f64; 5],
    /// Lower-triangular correlation Cholesky factor (unit-norm rows).
    pub chol_corr: [[f64; 5]; 5],
    pub rho_pop: Vec<f64>,
    pub sigma_eta: f64,
    pub sigma_v: f64,
    pub sigma_x: f64,
    pub drivers: Vec<DriverParams>,
}

impl HierarchyState {
    pub fn layout(&self) -> Result<ParamLayout> {
        let p = self.rho_pop.len();
        if self.drivers.iter().any(|d| d.rho.len() != p) {
            return Err(Error::Dim("driver AR orders differ from the population order".into()));
        }
        ParamLayout::new(self.drivers.len(), p)
    }

    /// Reconstruct `Sigma = diag(sigma0) L L' diag(sigma0)`.
    pub fn sigma_matrix(&self) -> [[f64; 5]; 5] {
        let mut m = [[0.0; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..=i.min(j) {
                    acc += self.chol_corr[i][k] * self.chol_corr[j][k];
                }
                m[i][j] = self.sigma0[i] * self.sigma0[j] * acc;
            }
        }
        m
    }

    pub fn driver_model(&self, d: usize) -> Result<DriverModel> {
        let dp = self
            .drivers
            .get(d)
            .ok_or_else(|| Error::Dim(format!("driver index {d} out of range")))?;
        let th = dp.log_theta.map(f64::exp);
        Ok(DriverModel::new(
            IdmParams::from_array(th)?,
            ArCoefficients::new(dp.rho.clone(), self.sigma_eta)?,
        ))
    }

    pub fn observation_noise(&self) -> Result<ObservationNoise> {
        ObservationNoise::new(self.sigma_v, self.sigma_x)
    }

    /// Population-level model (theta_pop with the population AR coefficients).
    pub fn population_model(&self) -> Result<DriverModel> {
        let th = self.log_theta_pop.map(f64::exp);
        Ok(DriverModel::new(
            IdmParams::from_array(th)?,
            ArCoefficients::new(self.rho_pop.clone(), self.sigma_eta)?,
        ))
    }

    fn validate(&self) -> Result<()> {
        self.layout()?;
        let finite = self.log_theta_pop.iter().all(|v| v.is_finite())
            && self.sigma0.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.rho_pop.iter().all(|v| v.is_finite())
            && self.sigma_eta > 0.0
            && self.sigma_v > 0.0
            && self.sigma_x > 0.0;
        if !finite {
            return Err(Error::Param(
                "hierarchy state has non-finite values or non-positive scales".into(),
            ));
        }
        for i in 0..5 {
            let mut norm = 0.0;
            for j in 0..=i {
                norm += self.chol_corr[i][j] * self.chol_corr[i][j];
            }
            if (norm - 1.0).abs() > 1e-8 || self.chol_corr[i][i] <= 0.0 {
                return Err(Error::Param(format!(
                    "correlation factor row {i} is not unit-norm lower triangular"
                )));
            }
            for j in i + 1..5 {
                if self.chol_corr[i][j] != 0.0 {
                    return Err(Error::Param("correlation factor must be lower triangular".into()));
                }
            }
        }
        Ok(())
    }

    /// Column labels for the constrained flat encoding, matching
    /// [`HierarchyState::flat_constrained`].
    pub fn names(layout: &ParamLayout) -> Vec<String> {
        let mut names: Vec<String> =
            ["v0", "s0", "T", "alpha", "beta"].iter().map(|s| s.to_string()).collect();
        for i in 1..=5 {
            names.push(format!("sigma0_{i}"));
        }
        for i in 1..5 {
            for j in 0..i {
                names.push(format!("L_{}_{}", i + 1, j + 1));
            }
        }
        for k in 1..=layout.p {
            names.push(format!("rho_{k}"));
        }
        names.push("sigma_eta".into());
        names.push("sigma_v".into());
        names.push("sigma_x".into());
        for d in 0..layout.n_drivers {
            for nm in ["v0", "s0", "T", "alpha", "beta"] {
                names.push(format!("d{d}_{nm}"));
            }
            for k in 1..=layout.p {
                names.push(format!("d{d}_rho_{k}"));
            }
        }
        names
    }

    /// Flat constrained encoding: population theta in natural units, sigma0,
    /// strictly-lower correlation factor entries, rho_pop, noise scales, then
    /// per-driver theta (natural units) and rho.
    pub fn flat_constrained(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(self.log_theta_pop.iter().map(|l| l.exp()));
        v.extend_from_slice(&self.sigma0);
        for i in 1..5 {
            for j in 0..i {
                v.push(self.chol_corr[i][j]);
            }
        }
        v.extend_from_slice(&self.rho_pop);
        v.push(self.sigma_eta);
        v.push(self.sigma_v);
        v.push(self.sigma_x);
        for d in &self.drivers {
            v.extend(d.log_theta.iter().map(|l| l.exp()));
            v.extend_from_slice(&d.rho);
        }
        v
    }

    /// Inverse of [`HierarchyState::flat_constrained`].
    pub fn from_flat_constrained(values: &[f64], layout: &ParamLayout) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::Dim(format!(
                "constrained row has {} values, layout needs {}",
                values.len(),
                layout.dim()
            )));
        }
        let mut it = values.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { (&mut it).take(n).collect() };
        let theta_pop = take(5);
        let sigma0v = take(5);
        let lower = take(N_CORR);
        let rho_pop = take(layout.p);
        let sigma_eta = take(1)[0];
        let sigma_v = take(1)[0];
        let sigma_x = take(1)[0];
        let mut chol_corr = [[0.0; 5]; 5];
        chol_corr[0][0] = 1.0;
        let mut li = 0;
        for i in 1..5 {
            let mut norm = 0.0;
            for j in 0..i {
                chol_corr[i][j] = lower[li];
                norm += lower[li] * lower[li];
                li += 1;
            }
            if norm >= 1.0 {
                return Err(Error::Param(format!("correlation row {i} exceeds unit norm")));
            }
            chol_corr[i][i] = (1.0 - norm).sqrt();
        }
        let mut drivers = Vec::with_capacity(layout.n_drivers);
        for _ in 0..layout.n_drivers {
            let th = take(5);
            let rho = take(layout.p);
            let mut log_theta = [0.0; 5];
            for (i, t) in th.iter().enumerate() {
                if !(*t > 0.0) {
                    return Err(Error::Param("driver theta entries must be positive".into()));
                }
                log_theta[i] = t.ln();
            }
            drivers.push(DriverParams { log_theta, rho });
        }
        let mut log_theta_pop = [0.0; 5];
        for (i, t) in theta_pop.iter().enumerate() {
            if !(*t > 0.0) {
                return Err(Error::Param("theta_pop entries must be positive".into()));
            }
            log_theta_pop[i] = t.ln();
        }
        let mut sigma0 = [0.0; 5];
        sigma0.copy_from_slice(&sigma0v);
        let state = HierarchyState {
            log_theta_pop,
            sigma0,
            chol_corr,
            rho_pop,
            sigma_eta,
            sigma_v,
            sigma_x,
            drivers,
        };
        state.validate()?;
        Ok(state)
    }
}

/// Build the correlation Cholesky factor rows from canonical partial
/// correlations `z = tanh(y)`.
fn build_corr_factor<S: Real>(y: &[S], one: S) -> Vec<Vec<S>> {
    let mut l: Vec<Vec<S>> = Vec::with_capacity(K_THETA);
    l.push(vec![one]);
    let mut yi = 0;
    for i in 1..K_THETA {
        let mut row = Vec::with_capacity(i + 1);
        let mut rem = one;
        for _j in 0..i {
            let z = y[yi].tanh();
            yi += 1;
            row.push(z * rem.sqrt());
            rem = rem * z.sq().csub(1.0);
        }
        row.push(rem.sqrt());
        l.push(row);
    }
    l
}

/// Map the flat unconstrained vector to constrained coordinates.
pub fn constrain(u: &[f64], layout: &ParamLayout) -> Result<HierarchyState> {
    if u.len() != layout.dim() {
        return Err(Error::Dim(format!(
            "unconstrained vector has length {}, layout needs {}",
            u.len(),
            layout.dim()
        )));
    }
    let mut log_theta_pop = [0.0; 5];
    log_theta_pop.copy_from_slice(&u[0..5]);
    let mut sigma0 = [0.0; 5];
    for i in 0..5 {
        sigma0[i] = u[layout.idx_log_sigma0() + i].exp();
    }
    let y = &u[layout.idx_corr()..layout.idx_corr() + N_CORR];
    let lrows = build_corr_factor(y, 1.0);
    let mut chol_corr = [[0.0; 5]; 5];
    for (i, row) in lrows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            chol_corr[i][j] = *v;
        }
    }
    let rho_pop = u[layout.idx_rho_pop()..layout.idx_rho_pop() + layout.p].to_vec();
    let sigma_eta = u[layout.idx_log_sigma_eta()].exp();
    let sigma_v = u[layout.idx_log_sigma_v()].exp();
    let sigma_x = u[layout.idx_log_sigma_x()].exp();

    let mut drivers = Vec::with_capacity(layout.n_drivers);
    for d in 0..layout.n_drivers {
        let base = layout.idx_driver(d);
        let z = &u[base..base + 5];
        let mut log_theta = [0.0; 5];
        for i in 0..5 {
            let mut w = 0.0;
            for j in 0..=i {
                w += chol_corr[i][j] * z[j];
            }
            log_theta[i] = log_theta_pop[i] + sigma0[i] * w;
        }
        let rho = u[base + 5..base + 5 + layout.p].to_vec();
        drivers.push(DriverParams { log_theta, rho });
    }
    Ok(HierarchyState {
        log_theta_pop,
        sigma0,
        chol_corr,
        rho_pop,
        sigma_eta,
        sigma_v,
        sigma_x,
        drivers,
    })
}

/// Inverse of [`constrain`].
pub fn unconstrain(state: &HierarchyState) -> Result<Vec<f64>> {
    state.validate()?;
    let layout = state.layout()?;
    let mut u = vec![0.0; layout.dim()];
    u[0..5].copy_from_slice(&state.log_theta_pop);
    for i in 0..5 {
        u[layout.idx_log_sigma0() + i] = state.sigma0[i].ln();
    }
    // inverse stick-breaking: z_ij = L_ij / sqrt(remaining), y = atanh(z)
    let mut yi = layout.idx_corr();
    for i in 1..5 {
        let mut rem = 1.0;
        for j in 0..i {
            let z = state.chol_corr[i][j] / rem.sqrt();
            if !(z.abs() < 1.0) {
                return Err(Error::Param("correlation factor entry out of range".into()));
            }
            u[yi] = z.atanh();
            yi += 1;
            rem *= 1.0 - z * z;
        }
    }
    u[layout.idx_rho_pop()..layout.idx_rho_pop() + layout.p].copy_from_slice(&state.rho_pop);
    u[layout.idx_log_sigma_eta()] = state.sigma_eta.ln();
    u[layout.idx_log_sigma_v()] = state.sigma_v.ln();
    u[layout.idx_log_sigma_x()] = state.sigma_x.ln();
    for (d, dp) in state.drivers.iter().enumerate() {
        let base = layout.idx_driver(d);
        // w = (ln theta_d - ln theta_pop) / sigma0, then solve L z = w
        let mut w = [0.0; 5];
        for i in 0..5 {
            w[i] = (dp.log_theta[i] - state.log_theta_pop[i]) / state.sigma0[i];
        }
        let mut z = [0.0; 5];
        for i in 0..5 {
            let mut acc = w[i];
            for j in 0..i {
                acc -= state.chol_corr[i][j] * z[j];
            }
            z[i] = acc / state.chol_corr[i][i];
        }
        u[base..base + 5].copy_from_slice(&z);
        u[base + 5..base + 5 + layout.p].copy_from_slice(&dp.rho);
    }
    Ok(u)
}

/// Pieces of the prior density that depend only on hyperparameters.
#[derive(Debug, Clone)]
struct PriorConsts {
    sigma0_prec: [[f64; 5]; 5],
    sigma0_logdet: f64,
    /// Per strictly-lower entry (row-major): Beta shape and additive constant.
    lkj_shapes: Vec<(f64, f64)>,
    ln_lambda0: f64,
    ln_lambda_eta: f64,
    ln_lambda_v: f64,
    ln_lambda_x: f64,
    log_theta_rec: [f64; 5],
}

impl PriorConsts {
    fn new(hp: &HyperParams) -> Result<Self> {
        hp.validate()?;
        let (sigma0_prec, sigma0_logdet) = hp.sigma0_precision()?;
        let mut lkj_shapes = Vec::with_capacity(N_CORR);
        for i in 1..K_THETA {
            for j in 0..i {
                // canonical partial correlation at 0-based column j has a
                // Beta(a, a) law on (-1, 1) with a = eta + (K - 2 - j) / 2
                let a = hp.eta_lkj + (K_THETA - 2 - j) as f64 / 2.0;
                let norm = -(2.0 * a - 1.0) * std::f64::consts::LN_2 - ln_beta(a, a);
                lkj_shapes.push((a, norm));
            }
        }
        Ok(PriorConsts {
            sigma0_prec,
            sigma0_logdet,
            lkj_shapes,
            ln_lambda0: hp.lambda0.ln(),
            ln_lambda_eta: hp.lambda_eta.ln(),
            ln_lambda_v: hp.lambda_v.ln(),
            ln_lambda_x: hp.lambda_x.ln(),
            log_theta_rec: hp.theta_rec.map(f64::ln),
        })
    }
}

/// Exponential(rate) prior on sigma = exp(u), including the log-Jacobian u.
#[inline]
fn exp_prior_term<S: Real>(u: S, sigma: S, rate: f64, ln_rate: f64) -> S {
    u + sigma.mulc(-rate).addc(ln_rate)
}

/// Log-prior density over the unconstrained vector, including all transform
/// Jacobians (generic core).
fn log_prior_generic<S: Real>(
    u: &[S],
    layout: &ParamLayout,
    hp: &HyperParams,
    pc: &PriorConsts,
) -> S {
    let mut lp = u[0].lift(0.0);

    // sigma0 ~ Exp(lambda0), sampled as ln sigma0
    for i in 0..5 {
        let ui = u[layout.idx_log_sigma0() + i];
        let s = ui.exp();
        lp = lp + exp_prior_term(ui, s, hp.lambda0, pc.ln_lambda0);
    }

    // LKJ on the correlation factor via canonical partial correlations:
    // a * ln(1 - z^2) absorbs both the Beta exponent (a - 1) and the tanh
    // Jacobian (+1)
    let y = &u[layout.idx_corr()..layout.idx_corr() + N_CORR];
    for (yi, &(a, norm)) in y.iter().zip(&pc.lkj_shapes) {
        let z = yi.tanh();
        let one_m = z.sq().csub(1.0);
        lp = lp + one_m.ln().mulc(a).addc(norm);
    }

    // ln theta_pop ~ N(ln theta_rec, Sigma0)
    let mut quad = u[0].lift(0.0);
    for i in 0..5 {
        let di = u[i].addc(-pc.log_theta_rec[i]);
        for j in 0..=i {
            let w = pc.sigma0_prec[i][j];
            if w != 0.0 {
                let term = di * u[j].addc(-pc.log_theta_rec[j]);
                quad = quad + term.mulc(if i == j { w } else { 2.0 * w });
            }
        }
    }
    lp = lp + quad.mulc(-0.5).addc(-0.5 * pc.sigma0_logdet - 2.5 * LN_2PI);

    // rho_pop ~ N(0, sigma_rho0^2 I)
    let p = layout.p;
    if p > 0 {
        let inv2 = 1.0 / (hp.sigma_rho0 * hp.sigma_rho0);
        let mut q = u[0].lift(0.0);
        for k in 0..p {
            q = q + u[layout.idx_rho_pop() + k].sq();
        }
        lp = lp + q.mulc(-0.5 * inv2).addc(-(p as f64) * (hp.sigma_rho0.ln() + 0.5 * LN_2PI));
    }

    // noise scales
    let u_eta = u[layout.idx_log_sigma_eta()];
    lp = lp + exp_prior_term(u_eta, u_eta.exp(), hp.lambda_eta, pc.ln_lambda_eta);
    let u_v = u[layout.idx_log_sigma_v()];
    lp = lp + exp_prior_term(u_v, u_v.exp(), hp.lambda_v, pc.ln_lambda_v);
    let u_x = u[layout.idx_log_sigma_x()];
    lp = lp + exp_prior_term(u_x, u_x.exp(), hp.lambda_x, pc.ln_lambda_x);

    // driver level: standard normal z, rho_d ~ N(rho_pop, sigma_rho^2 I)
    let inv2_rho = 1.0 / (hp.sigma_rho * hp.sigma_rho);
    for d in 0..layout.n_drivers {
        let base = layout.idx_driver(d);
        let mut q = u[0].lift(0.0);
        for i in 0..5 {
            q = q + u[base + i].sq();
        }
        lp = lp + q.mulc(-0.5).addc(-2.5 * LN_2PI);
        if p > 0 {
            let mut qr = u[0].lift(0.0);
            for k in 0..p {
                let r = u[base + 5 + k] - u[layout.idx_rho_pop() + k];
                qr = qr + r.sq();
            }
            lp = lp
                + qr.mulc(-0.5 * inv2_rho).addc(-(p as f64) * (hp.sigma_rho.ln() + 0.5 * LN_2PI));
        }
    }
    lp
}

/// Per-driver natural-unit theta and rho from the unconstrained vector.
fn driver_params_generic<S: Real>(u: &[S], layout: &ParamLayout) -> Vec<([S; 5], Vec<S>)> {
    let one = u[0].lift(1.0);
    let y = &u[layout.idx_corr()..layout.idx_corr() + N_CORR];
    let lrows = build_corr_factor(y, one);
    let mut sigma0 = [one; 5];
    for i in 0..5 {
        sigma0[i] = u[layout.idx_log_sigma0() + i].exp();
    }
    let mut out = Vec::with_capacity(layout.n_drivers);
    for d in 0..layout.n_drivers {
        let base = layout.idx_driver(d);
        let z = &u[base..base + 5];
        let mut theta = [one; 5];
        for i in 0..5 {
            let mut w = lrows[i][0] * z[0];
            for j in 1..=i {
                w = w + lrows[i][j] * z[j];
            }
            theta[i] = (u[i] + sigma0[i] * w).exp();
        }
        let rho: Vec<S> = (0..layout.p).map(|k| u[base + 5 + k]).collect();
        out.push((theta, rho));
    }
    out
}

/// Log-prior of a constrained state (including transform Jacobians).
pub fn log_prior(state: &HierarchyState, hp: &HyperParams) -> Result<f64> {
    let layout = state.layout()?;
    let pc = PriorConsts::new(hp)?;
    let u = unconstrain(state)?;
    Ok(log_prior_generic(&u, &layout, hp, &pc))
}

/// The posterior density over unconstrained coordinates, ready for the sampler.
pub struct PosteriorTarget {
    layout: ParamLayout,
    hp: HyperParams,
    pc: PriorConsts,
    data: Vec<TrajData>,
    mode: LikelihoodMode,
}

impl PosteriorTarget {
    pub fn new(
        data: &[Trajectory],
        hp: &HyperParams,
        p: usize,
        mode: LikelihoodMode,
    ) -> Result<Self> {
        let layout = ParamLayout::new(data.len(), p)?;
        hp.validate()?;
        let min_len =
            crate::likelihood::burn_in(p) + 1 + usize::from(mode != LikelihoodMode::Accel);
        for traj in data {
            if mode == LikelihoodMode::Accel && traj.a_f.is_none() {
                return Err(Error::Data(format!(
                    "driver {}: acceleration channel required for accel-mode calibration",
                    traj.driver_id
                )));
            }
            if traj.len() < min_len {
                return Err(Error::Data(format!(
                    "driver {}: trajectory too short for AR order {p}",
                    traj.driver_id
                )));
            }
        }
        Ok(PosteriorTarget {
            layout,
            hp: hp.clone(),
            pc: PriorConsts::new(hp)?,
            data: data.iter().map(TrajData::new).collect(),
            mode,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn mode(&self) -> LikelihoodMode {
        self.mode
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    /// Data-informed starting point: population parameters at the prior
    /// center, driver offsets at zero, and the innovation scale estimated from
    /// crude IDM residuals at `theta_rec`. Uses only the data and defaults.
    pub fn data_informed_init(&self) -> Vec<f64> {
        let mut u = vec![0.0; self.layout.dim()];
        for i in 0..5 {
            u[i] = self.hp.theta_rec[i].ln();
        }
        for i in 0..5 {
            u[self.layout.idx_log_sigma0() + i] = 0.1f64.ln();
        }
        let idm_rec = IdmParams::from_array(self.hp.theta_rec)
            .unwrap_or_else(|_| IdmParams::recommended());
        let terms = crate::idm::IdmTerms::<f64>::new(&idm_rec.as_array());
        let mut acc = 0.0;
        let mut n = 0usize;
        for d in &self.data {
            for t in 0..d.len() - 1 {
                let a_obs = match d.a.as_ref() {
                    Some(a) => a[t],
                    None => (d.v[t + 1] - d.v[t]) / d.dt,
                };
                let r = a_obs - terms.accel(d.s[t], d.v[t], d.dv[t]);
                acc += r * r;
                n += 1;
            }
        }
        let n_f = n.max(1) as f64;
        let resid_sd = (acc / n_f).sqrt().max(1e-3);
        // under a strong exponential prior the posterior scale sits near the
        // rate/likelihood balance point (n s^2 / lambda)^(1/3); start there
        // rather than fighting a huge prior gradient
        let balance = (n_f * resid_sd * resid_sd / self.hp.lambda_eta).cbrt();
        u[self.layout.idx_log_sigma_eta()] = resid_sd.min(balance).max(1e-6).ln();
        u[self.layout.idx_log_sigma_v()] = (1.0 / self.hp.lambda_v).max(1e-12).ln();
        u[self.layout.idx_log_sigma_x()] = (1.0 / self.hp.lambda_x).max(1e-12).ln();
        u
    }

    fn eval<S: Real>(&self, u: &[S]) -> S {
        let mut lp = log_prior_generic(u, &self.layout, &self.hp, &self.pc);
        let sigma_eta = u[self.layout.idx_log_sigma_eta()].exp();
        let sigma_v = u[self.layout.idx_log_sigma_v()].exp();
        let sigma_x = u[self.layout.idx_log_sigma_x()].exp();
        let drivers = driver_params_generic(u, &self.layout);
        for (d, (theta, rho)) in drivers.iter().enumerate() {
            let data = &self.data[d];
            let ll = match self.mode {
                LikelihoodMode::Accel => accel_loglik_generic(data, theta, rho, sigma_eta),
                LikelihoodMode::Speed => speed_loglik_generic(data, theta, rho, sigma_eta, sigma_v),
                LikelihoodMode::Position => {
                    position_loglik_generic(data, theta, rho, sigma_eta, sigma_x)
                }
                LikelihoodMode::Joint => {
                    joint_loglik_generic(data, theta, rho, sigma_eta, sigma_v, sigma_x)
                }
            };
            lp = lp + ll;
        }
        lp
    }
}

thread_local! {
    static POSTERIOR_TAPE: Tape = Tape::with_capacity(1 << 16);
}

impl LogDensity for PosteriorTarget {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn logp(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn grad_logp(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        POSTERIOR_TAPE.with(|tape| {
            tape.clear();
            let vars = tape.vars(x);
            let out = self.eval(&vars);
            let lp = out.value();
            if lp.is_finite() {
                tape.gradient(out, grad);
            } else {
                grad.fill(0.0);
            }
            lp
        })
    }

    fn init_center(&self) -> Option<Vec<f64>> {
        Some(self.data_informed_init())
    }
}

/// Log-posterior of a constrained state: log-prior plus the selected
/// likelihood summed over drivers (one trajectory per driver index).
pub fn log_posterior(
    state: &HierarchyState,
    hp: &HyperParams,
    data: &[Trajectory],
    mode: LikelihoodMode,
) -> Result<f64> {
    let layout = state.layout()?;
    if data.len() != layout.n_drivers {
        return Err(Error::Dim(format!(
            "state has {} drivers but data has {} trajectories",
            layout.n_drivers,
            data.len()
        )));
    }
    let target = PosteriorTarget::new(data, hp, layout.p, mode)?;
    let u = unconstrain(state)?;
    Ok(target.logp(&u))
}

/// Draw a state from the prior.
pub fn sample_prior(
    hp: &HyperParams,
    layout: &ParamLayout,
    rng: &mut ChaCha8Rng,
) -> Result<HierarchyState> {
    hp.validate()?;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let exp0 = Exp::new(hp.lambda0).unwrap();
    let exp_eta = Exp::new(hp.lambda_eta).unwrap();
    let exp_v = Exp::new(hp.lambda_v).unwrap();
    let exp_x = Exp::new(hp.lambda_x).unwrap();
    let mut u = vec![0.0; layout.dim()];
    // ln theta_pop ~ N(ln theta_rec, Sigma0) via the Cholesky factor
    let m = DMatrix::from_fn(5, 5, |i, j| hp.sigma0_cov[i][j]);
    let chol = m.cholesky().ok_or_else(|| Error::Param("Sigma0 not positive definite".into()))?;
    let zs = DVector::from_fn(5, |_, _| normal.sample(rng));
    let shift = chol.l() * zs;
    for i in 0..5 {
        u[i] = hp.theta_rec[i].ln() + shift[i];
    }
    for i in 0..5 {
        u[layout.idx_log_sigma0() + i] = exp0.sample(rng).max(1e-300).ln();
    }
    let mut yi = layout.idx_corr();
    for i in 1..K_THETA {
        for j in 0..i {
            let a = hp.eta_lkj + (K_THETA - 2 - j) as f64 / 2.0;
            let b = Beta::new(a, a).map_err(|e| Error::Param(e.to_string()))?;
            let z: f64 = 2.0 * b.sample(rng) - 1.0;
            u[yi] = z.clamp(-0.999_999, 0.999_999).atanh();
            yi += 1;
        }
    }
    for k in 0..layout.p {
        u[layout.idx_rho_pop() + k] = hp.sigma_rho0 * normal.sample(rng);
    }
    u[layout.idx_log_sigma_eta()] = exp_eta.sample(rng).max(1e-300).ln();
    u[layout.idx_log_sigma_v()] = exp_v.sample(rng).max(1e-300).ln();
    u[layout.idx_log_sigma_x()] = exp_x.sample(rng).max(1e-300).ln();
    for d in 0..layout.n_drivers {
        let base = layout.idx_driver(d);
        for i in 0..5 {
            u[base + i] = normal.sample(rng);
        }
        for k in 0..layout.p {
            u[base + 5 + k] = u[layout.idx_rho_pop() + k] + hp.sigma_rho * normal.sample(rng);
        }
    }
    constrain(&u, layout)
}

/// The LKJ matrix-density exponent `(eta - 1) ln det R` for a correlation
/// factor; permutation-invariant, and identically zero at eta = 1.
pub fn lkj_matrix_log_density(chol_corr: &[[f64; 5]; 5], eta: f64) -> f64 {
    let log_det: f64 = (0..5).map(|i| 2.0 * chol_corr[i][i].ln()).sum();
    (eta - 1.0) * log_det
}
