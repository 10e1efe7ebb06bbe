//! Convergence diagnostics (split R-hat, rank-normalized effective sample
//! size) and posterior summaries.

use crate::sampler::PosteriorDraws;
use crate::stats::{inv_phi, mean, quantile_sorted};
use serde::{Deserialize, Serialize};

/// Per-parameter convergence report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDiagnostic {
    pub name: String,
    /// Split R-hat; `None` with a single chain or a degenerate (constant)
    /// parameter.
    pub rhat: Option<f64>,
    /// Rank-normalized bulk effective sample size; `None` when degenerate.
    pub ess: Option<f64>,
    /// True when the draws carry no variation at all.
    pub degenerate: bool,
}

/// Split each chain in half and compute R-hat across the halves. `None` when
/// fewer than two halves or zero variance everywhere.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let n = c.len();
        if n < 4 {
            return None;
        }
        let mid = n / 2;
        halves.push(&c[..mid]);
        halves.push(&c[n - mid..]);
    }
    rhat_of(&halves)
}

fn rhat_of(seqs: &[&[f64]]) -> Option<f64> {
    let m = seqs.len();
    if m < 2 {
        return None;
    }
    let n = seqs.iter().map(|s| s.len()).min()?;
    if n < 2 {
        return None;
    }
    let means: Vec<f64> = seqs.iter().map(|s| mean(&s[..n])).collect();
    let grand = mean(&means);
    let b = n as f64 / (m as f64 - 1.0)
        * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| {
            s[..n].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0)
        })
        .sum::<f64>()
        / m as f64;
    if w <= 0.0 {
        return if b <= 0.0 { None } else { Some(f64::INFINITY) };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Some((var_plus / w).sqrt())
}

/// Rank-normalize draws across all chains: fractional ranks mapped through the
/// inverse normal CDF.
fn rank_normalize(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(chains.len());
    let mut off = 0;
    for c in chains {
        offsets.push(off);
        for (i, &v) in c.iter().enumerate() {
            indexed.push((v, off + i));
        }
        off += c.len();
    }
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank = vec![0.0; total];
    let mut i = 0;
    while i < total {
        // average ranks over ties
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            rank[indexed[k].1] = avg;
        }
        i = j + 1;
    }
    let s = total as f64;
    chains
        .iter()
        .zip(&offsets)
        .map(|(c, &o)| {
            (0..c.len()).map(|i| inv_phi((rank[o + i] - 0.375) / (s + 0.25))).collect()
        })
        .collect()
}

/// Rank-normalized bulk ESS over split chains, following the combined-chain
/// autocorrelation estimator with Geyer's initial monotone sequence.
pub fn ess_bulk(chains: &[&[f64]]) -> Option<f64> {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let n = c.len();
        if n < 8 {
            return None;
        }
        let mid = n / 2;
        halves.push(&c[..mid]);
        halves.push(&c[n - mid..]);
    }
    let normalized = rank_normalize(&halves);
    let seqs: Vec<&[f64]> = normalized.iter().map(|v| v.as_slice()).collect();
    ess_of(&seqs)
}

fn autocovariance_at(x: &[f64], mu: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for t in 0..n - lag {
        acc += (x[t] - mu) * (x[t + lag] - mu);
    }
    acc / n as f64
}

fn ess_of(seqs: &[&[f64]]) -> Option<f64> {
    let m = seqs.len();
    let n = seqs.iter().map(|s| s.len()).min()?;
    if n < 4 {
        return None;
    }
    let means: Vec<f64> = seqs.iter().map(|s| mean(&s[..n])).collect();
    let vars: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s[..n].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let w = mean(&vars);
    if w <= 0.0 {
        return None;
    }
    let grand = mean(&means);
    let b_over_n = means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>()
        / (m as f64 - 1.0).max(1.0);
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;

    let mut rho_hat = Vec::with_capacity(n);
    rho_hat.push(1.0);
    let mut t = 1;
    let mut prev_pair = f64::INFINITY;
    while t + 1 < n {
        let acov = |lag: usize| -> f64 {
            let s: f64 =
                seqs.iter().zip(&means).map(|(s, mu)| autocovariance_at(&s[..n], *mu, lag)).sum();
            s / m as f64
        };
        let r1 = 1.0 - (w - acov(t)) / var_plus;
        let r2 = 1.0 - (w - acov(t + 1)) / var_plus;
        let pair = r1 + r2;
        if pair < 0.0 {
            break;
        }
        // Geyer initial monotone sequence: clip paired sums to be nonincreasing
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        rho_hat.push(r1.min(pair));
        rho_hat.push(r2.min(pair));
        t += 2;
        if t > n / 2 {
            break;
        }
    }
    let tau: f64 = -1.0 + 2.0 * rho_hat.iter().sum::<f64>();
    let tau = tau.max(1.0 / (m as f64 * n as f64).log10().max(1.0)).max(1e-3);
    Some((m * n) as f64 / tau)
}

/// Diagnostics over a `[chain][draw][param]` matrix.
pub fn diagnostics_flat(chains: &[&Vec<Vec<f64>>], names: &[String]) -> Vec<ParamDiagnostic> {
    let n_params = names.len();
    let mut out = Vec::with_capacity(n_params);
    for (k, name) in names.iter().enumerate() {
        let per_chain: Vec<Vec<f64>> =
            chains.iter().map(|c| c.iter().map(|draw| draw[k]).collect()).collect();
        let refs: Vec<&[f64]> = per_chain.iter().map(|v| v.as_slice()).collect();
        let degenerate = {
            let first = per_chain.first().and_then(|c| c.first()).copied();
            first.is_some_and(|f| per_chain.iter().all(|c| c.iter().all(|&v| v == f)))
        };
        let (rhat, ess) = if degenerate {
            (None, None)
        } else {
            let rh = if chains.len() >= 2 { split_rhat(&refs) } else { None };
            (rh, ess_bulk(&refs))
        };
        out.push(ParamDiagnostic { name: name.clone(), rhat, ess, degenerate });
    }
    out
}

/// Diagnostics for calibrated posterior draws, in constrained coordinates.
pub fn diagnostics(draws: &PosteriorDraws) -> Vec<ParamDiagnostic> {
    let mat = draws.constrained_matrix();
    let refs: Vec<&Vec<Vec<f64>>> = mat.iter().collect();
    diagnostics_flat(&refs, &draws.names())
}

/// Summary statistics of one scalar parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q50: f64,
    pub q97_5: f64,
}

/// Per-parameter mean, standard deviation, and 2.5/50/97.5% quantiles over all
/// chains, in constrained space.
pub fn posterior_summary(draws: &PosteriorDraws, names: &[String]) -> Vec<SummaryRow> {
    let mat = draws.constrained_matrix();
    let n_params = names.len();
    let mut out = Vec::with_capacity(n_params);
    for (k, name) in names.iter().enumerate() {
        let mut vals: Vec<f64> =
            mat.iter().flat_map(|c| c.iter().map(|draw| draw[k])).collect();
        out.push(summarize_values(name, &mut vals));
    }
    out
}

/// Summary of a raw value vector (sorted in place).
pub fn summarize_values(name: &str, vals: &mut [f64]) -> SummaryRow {
    assert!(!vals.is_empty(), "cannot summarize an empty draw set");
    let m = mean(vals);
    let sd = if vals.len() > 1 {
        (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    SummaryRow {
        name: name.to_string(),
        mean: m,
        sd,
        q2_5: quantile_sorted(vals, 0.025),
        q50: quantile_sorted(vals, 0.5),
        q97_5: quantile_sorted(vals, 0.975),
    }
}
