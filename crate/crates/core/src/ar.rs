//! AR(p) process errors: stepping, sampling, stationarity, and closed-form
//! autocovariance via the Yule-Walker equations.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Largest admissible AR order for the dense Yule-Walker solve.
pub const MAX_ORDER: usize = 32;

/// Lag coefficients and white-noise scale of one driver's error process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArCoefficients {
    /// Lag coefficients rho_1..rho_p (dimensionless).
    pub rho: Vec<f64>,
    /// White-noise standard deviation, m/s^2.
    pub sigma_eta: f64,
}

impl ArCoefficients {
    pub fn new(rho: Vec<f64>, sigma_eta: f64) -> Result<Self> {
        if rho.len() > MAX_ORDER {
            return Err(Error::Param(format!(
                "AR order {} exceeds the supported maximum {MAX_ORDER}",
                rho.len()
            )));
        }
        if !(sigma_eta > 0.0) || !sigma_eta.is_finite() {
            return Err(Error::Param(format!("sigma_eta must be positive, got {sigma_eta}")));
        }
        if rho.iter().any(|r| !r.is_finite()) {
            return Err(Error::Param("AR coefficients must be finite".into()));
        }
        Ok(ArCoefficients { rho, sigma_eta })
    }

    /// White noise (p = 0).
    pub fn white(sigma_eta: f64) -> Result<Self> {
        Self::new(vec![], sigma_eta)
    }

    pub fn order(&self) -> usize {
        self.rho.len()
    }
}

/// Autocovariances gamma(0..K) of a stationary process, in (m/s^2)^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFunction {
    pub gamma: Vec<f64>,
}

impl CovarianceFunction {
    pub fn max_lag(&self) -> usize {
        self.gamma.len().saturating_sub(1)
    }
}

/// True iff all roots of `1 - rho_1 z - ... - rho_p z^p` lie strictly outside
/// the unit circle (companion-matrix eigenvalue moduli < 1, tolerance 1e-9).
pub fn is_stationary(c: &ArCoefficients) -> bool {
    let p = c.order();
    if p == 0 {
        return true;
    }
    let mut companion = DMatrix::<f64>::zeros(p, p);
    for (k, &r) in c.rho.iter().enumerate() {
        companion[(0, k)] = r;
    }
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .all(|ev| ev.norm() < 1.0 - 1e-9)
}

/// One AR step: `eps_next = sum_k rho_k * history[k-1] + eta`, with
/// `history[k-1] = eps_{t-k}` (most recent first).
pub fn step_error(c: &ArCoefficients, history: &[f64], eta: f64) -> Result<f64> {
    if history.len() != c.order() {
        return Err(Error::Dim(format!(
            "AR({}) step needs {} lagged errors, got {}",
            c.order(),
            c.order(),
            history.len()
        )));
    }
    Ok(ar_mean(&c.rho, history) + eta)
}

/// The deterministic AR regression part, `sum_k rho_k * history[k-1]`.
#[inline]
pub fn ar_mean(rho: &[f64], history: &[f64]) -> f64 {
    rho.iter().zip(history).map(|(r, e)| r * e).sum()
}

/// Autocovariances gamma(0..max_lag) solving the Yule-Walker system with
/// innovation variance `sigma_eta^2`. Requires stationarity.
pub fn autocovariance(c: &ArCoefficients, max_lag: usize) -> Result<CovarianceFunction> {
    if !is_stationary(c) {
        return Err(Error::Domain(
            "autocovariance is defined only for stationary AR coefficients".into(),
        ));
    }
    let p = c.order();
    let s2 = c.sigma_eta * c.sigma_eta;
    let mut gamma = Vec::with_capacity(max_lag + 1);
    if p == 0 {
        gamma.push(s2);
        gamma.resize(max_lag + 1, 0.0);
        return Ok(CovarianceFunction { gamma });
    }

    // unknowns gamma(0..p):
    //   gamma(0) - sum_k rho_k gamma(k)     = sigma^2
    //   gamma(j) - sum_k rho_k gamma(|j-k|) = 0       for j = 1..p
    let n = p + 1;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    b[0] = s2;
    for j in 0..n {
        a[(j, j)] += 1.0;
        for k in 1..=p {
            let idx = j.abs_diff(k);
            a[(j, idx)] -= c.rho[k - 1];
        }
    }
    let head = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Domain("Yule-Walker system is singular".into()))?;
    gamma.extend(head.iter().copied());

    // recursion gamma(j) = sum_k rho_k gamma(j-k) for j > p
    for j in p + 1..=max_lag {
        let g = (1..=p).map(|k| c.rho[k - 1] * gamma[j - k]).sum();
        gamma.push(g);
    }
    gamma.truncate(max_lag + 1);
    Ok(CovarianceFunction { gamma })
}

/// Residual of the Yule-Walker equations at `gamma`; zero for an exact solution.
/// `gamma` must extend at least to lag p.
pub fn yule_walker_residual(c: &ArCoefficients, cov: &CovarianceFunction) -> f64 {
    let p = c.order();
    let g = &cov.gamma;
    assert!(g.len() > p, "covariance must cover lags 0..=p");
    let r0 = g[0] - (1..=p).map(|k| c.rho[k - 1] * g[k]).sum::<f64>() - c.sigma_eta * c.sigma_eta;
    let mut worst = r0.abs();
    for j in 1..g.len() {
        let pred: f64 = (1..=p)
            .map(|k| {
                let idx = j.abs_diff(k);
                if idx < g.len() {
                    c.rho[k - 1] * g[idx]
                } else {
                    f64::NAN
                }
            })
            .sum();
        if pred.is_nan() {
            continue; // lag j needs covariances beyond the computed range
        }
        worst = worst.max((g[j] - pred).abs());
    }
    worst
}

/// Sample a length-`n` error path with i.i.d. N(0, sigma_eta^2) innovations.
/// `init` supplies the p most recent pre-sample errors (most recent first);
/// deterministic given the seed.
pub fn sample_path(c: &ArCoefficients, n: usize, seed: u64, init: &[f64]) -> Result<Vec<f64>> {
    if init.len() != c.order() {
        return Err(Error::Dim(format!(
            "AR({}) path needs {} initial errors, got {}",
            c.order(),
            c.order(),
            init.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, c.sigma_eta).map_err(|e| Error::Param(e.to_string()))?;
    let p = c.order();
    let mut hist: Vec<f64> = init.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let eta = normal.sample(&mut rng);
        let e = ar_mean(&c.rho, &hist) + eta;
        if p > 0 {
            hist.rotate_right(1);
            hist[0] = e;
        }
        out.push(e);
    }
    Ok(out)
}

/// Squared-exponential kernel values `sigma_k^2 exp(-tau^2 / (2 ell^2))` at the
/// given lags (seconds). Comparison curve only; never an inferable error model.
pub fn se_kernel(sigma_k: f64, ell: f64, lags: &[f64]) -> Result<CovarianceFunction> {
    if !(sigma_k > 0.0) || !(ell > 0.0) {
        return Err(Error::Param(format!(
            "SE kernel needs sigma_k > 0 and ell > 0, got ({sigma_k}, {ell})"
        )));
    }
    let s2 = sigma_k * sigma_k;
    Ok(CovarianceFunction {
        gamma: lags.iter().map(|&t| s2 * (-t * t / (2.0 * ell * ell)).exp()).collect(),
    })
}

/// Monte Carlo standard error of the empirical autocovariance at lag `k`
/// (Bartlett's formula) for a path of length `n`, given the true covariance
/// function extended far enough for the sum to have converged.
pub fn bartlett_se(cov: &CovarianceFunction, k: usize, n: usize) -> f64 {
    let g = &cov.gamma;
    let m = g.len();
    let mut var = 0.0;
    for j in 0..m {
        let gj = g[j];
        let gjk_plus = if j + k < m { g[j + k] } else { 0.0 };
        let gjk_minus = g[j.abs_diff(k)];
        // sum over j in (-m, m): double positive j, count j = 0 once
        let w = if j == 0 { 1.0 } else { 2.0 };
        var += w * (gj * gj + gjk_plus * gjk_minus);
    }
    (var / n as f64).sqrt()
}

/// Biased (1/N) sample autocovariance of `x` at lags 0..=max_lag, mean removed.
pub fn empirical_autocovariance_raw(x: &[f64], max_lag: usize) -> Result<CovarianceFunction> {
    if x.len() <= max_lag {
        return Err(Error::Param(format!(
            "need more than {max_lag} samples, got {}",
            x.len()
        )));
    }
    let n = x.len();
    let m = crate::stats::mean(x);
    let mut gamma = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let mut acc = 0.0;
        for t in 0..n - k {
            acc += (x[t] - m) * (x[t + k] - m);
        }
        gamma.push(acc / n as f64);
    }
    Ok(CovarianceFunction { gamma })
}

/// The Table-1 AR(5) posterior-mean coefficients, used as a reference process
/// in tests and simulations.
pub fn table1_ar5(sigma_eta: f64) -> ArCoefficients {
    ArCoefficients::new(vec![0.874, 0.580, -0.105, -0.315, -0.071], sigma_eta).unwrap()
}
