//! Convergence diagnostics and posterior summaries.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::math::{exp, sqrt};
use crate::{Error, Result};

/// Hazard-ratio summary of one log-hazard-ratio component.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PosteriorSummary {
    pub hr_mean: f64,
    pub hr_ci_low: f64,
    pub hr_ci_high: f64,
    pub p_hr_le_1: f64,
}

/// Sample quantile with linear interpolation between order statistics
/// (`(n - 1) q` positions).
pub fn quantile_type7(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile input"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("q", "must lie in [0, 1]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, central 95% interval and `P(HR <= 1)` of `exp(beta)` over the draws
/// after `burn_in`.
pub fn summarize(draws: &[f64], burn_in: usize) -> Result<PosteriorSummary> {
    if draws.len() <= burn_in {
        return Err(Error::Empty("post-burn-in draws"));
    }
    let mut hr: Vec<f64> = draws[burn_in..].iter().map(|&b| exp(b)).collect();
    hr.sort_by(f64::total_cmp);
    let n = hr.len() as f64;
    Ok(PosteriorSummary {
        hr_mean: hr.iter().sum::<f64>() / n,
        hr_ci_low: quantile_sorted(&hr, 0.025),
        hr_ci_high: quantile_sorted(&hr, 0.975),
        p_hr_le_1: hr.iter().filter(|&&h| h <= 1.0).count() as f64 / n,
    })
}

fn chain_moments(chains: &[&[f64]]) -> Result<(f64, f64, f64)> {
    if chains.len() < 2 {
        return Err(Error::TooFew {
            what: "chains",
            need: 2,
            got: chains.len(),
        });
    }
    let l = chains[0].len();
    if l < 10 {
        return Err(Error::TooFew {
            what: "draws per chain",
            need: 10,
            got: l,
        });
    }
    if let Some(c) = chains.iter().find(|c| c.len() != l) {
        return Err(Error::Dimension {
            what: "chain length",
            expected: l,
            got: c.len(),
        });
    }
    let lf = l as f64;
    let m = chains.len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / lf).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (lf - 1.0))
        .sum::<f64>()
        / m;
    let grand = means.iter().sum::<f64>() / m;
    let b = lf * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m - 1.0);
    Ok((lf, w, b))
}

/// Classic potential scale reduction over whole chains:
/// `sqrt(((L - 1) / L W + B / L) / W)`.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<f64> {
    let (l, w, b) = chain_moments(chains)?;
    if !(w > 0.0) {
        return Err(Error::ZeroVariance("within-chain variance"));
    }
    Ok(sqrt(((l - 1.0) / l * w + b / l) / w))
}

/// The same statistic after splitting every chain into two halves.
pub fn gelman_rubin_split(chains: &[&[f64]]) -> Result<f64> {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    gelman_rubin(&halves)
}

/// Effective sample size from Geyer's initial positive sequence of paired
/// autocorrelations, clipped to `[1, n]`.
pub fn ess(draws: &[f64]) -> Result<f64> {
    let n = draws.len();
    if n < 100 {
        return Err(Error::TooFew {
            what: "draws for ESS",
            need: 100,
            got: n,
        });
    }
    let nf = n as f64;
    let mean = draws.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = draws.iter().map(|v| v - mean).collect();
    let acov = |lag: usize| centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / nf;
    let c0 = acov(0);
    if !(c0 > 0.0) {
        return Ok(1.0);
    }
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (acov(2 * k) + acov(2 * k + 1)) / c0;
        if !(pair > 0.0) {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    if !(tau > 0.0) {
        return Ok(nf);
    }
    Ok((nf / tau).clamp(1.0, nf))
}
