//! Additive log-ratio coordinates for compositional covariates.
//!
//! Compositions are fractions of a whole. The last part is the reference
//! (the remainder of everything not modeled), so a `K + 1` part composition
//! maps to `K` log-ratios.

use alloc::vec::Vec;

use crate::math::{exp, log, pow, sqrt};
use crate::{Error, Result};

/// Rescales to unit sum.
pub fn closure(parts: &[f64]) -> Result<Vec<f64>> {
    if parts.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid("composition", "parts must be finite and nonnegative"));
    }
    let total: f64 = parts.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("composition", "parts sum to zero"));
    }
    Ok(parts.iter().map(|p| p / total).collect())
}

/// Replaces zeros by `detection_half` and re-closes.
pub fn zero_replace(parts: &[f64], detection_half: f64) -> Result<Vec<f64>> {
    if !(detection_half > 0.0) || !detection_half.is_finite() {
        return Err(Error::invalid("detection_half", "must be positive"));
    }
    if parts.iter().any(|p| *p < 0.0) {
        return Err(Error::invalid("composition", "negative part"));
    }
    if parts.iter().all(|p| *p == 0.0) {
        return Err(Error::invalid("composition", "every part is zero"));
    }
    let replaced: Vec<f64> = parts.iter().map(|&p| if p == 0.0 { detection_half } else { p }).collect();
    closure(&replaced)
}

/// `log(p_k / p_last)` for every part but the last.
pub fn alr(parts: &[f64]) -> Result<Vec<f64>> {
    let (&reference, rest) = parts.split_last().ok_or(Error::Empty("composition"))?;
    if parts.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::invalid("composition", "alr needs strictly positive parts"));
    }
    let lr = log(reference);
    Ok(rest.iter().map(|&p| log(p) - lr).collect())
}

/// Closed composition `(exp(c), 1) / sum`, shifted by the largest exponent.
pub fn alr_inverse(coords: &[f64]) -> Result<Vec<f64>> {
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("alr coordinates", "must be finite"));
    }
    let shift = coords.iter().copied().fold(0.0, f64::max);
    let mut parts: Vec<f64> = coords.iter().map(|&c| exp(c - shift)).collect();
    parts.push(exp(-shift));
    let total: f64 = parts.iter().sum();
    parts.iter_mut().for_each(|p| *p /= total);
    Ok(parts)
}

/// Column-wise scaling by the sample standard deviation over the reference
/// rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub scaled: Vec<Vec<f64>>,
    pub sd: Vec<f64>,
}

/// Divides every column by its sample SD (`n - 1`) over `reference` rows.
pub fn standardize(rows: &[Vec<f64>], reference: &[usize]) -> Result<Standardized> {
    if reference.len() < 2 {
        return Err(Error::TooFew {
            what: "reference rows",
            need: 2,
            got: reference.len(),
        });
    }
    let k = rows.first().map(Vec::len).ok_or(Error::Empty("alr matrix"))?;
    if let Some(bad) = rows.iter().find(|r| r.len() != k) {
        return Err(Error::Dimension {
            what: "alr row",
            expected: k,
            got: bad.len(),
        });
    }
    if let Some(&i) = reference.iter().find(|&&i| i >= rows.len()) {
        return Err(Error::invalid("reference", alloc::format!("row {i} out of range")));
    }
    let m = reference.len() as f64;
    let sd: Vec<f64> = (0..k)
        .map(|c| {
            let mean = reference.iter().map(|&i| rows[i][c]).sum::<f64>() / m;
            let ss: f64 = reference.iter().map(|&i| (rows[i][c] - mean) * (rows[i][c] - mean)).sum();
            sqrt(ss / (m - 1.0))
        })
        .collect();
    if sd.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::ZeroVariance("alr column over the reference rows"));
    }
    let scaled = rows.iter().map(|r| r.iter().zip(&sd).map(|(v, s)| v / s).collect()).collect();
    Ok(Standardized { scaled, sd })
}

/// Rise in every log-ratio when the reference part's fraction drops from
/// `reference_fraction` to `reference_fraction - delta` while the modeled
/// parts keep their fractions except the one that absorbed `delta`.
pub fn reference_loss_log_shift(reference_fraction: f64, delta: f64) -> Result<f64> {
    if !(reference_fraction > delta) || !(delta >= 0.0) {
        return Err(Error::invalid("delta", "must lie in [0, reference fraction)"));
    }
    Ok(log(reference_fraction) - log(reference_fraction - delta))
}

/// Hazard factor `prod_{k != changed} hr_k^(log_shift / sd_k)` when every
/// standardized log-ratio except `changed_index` rises by `log_shift / sd_k`.
pub fn composition_shift_hr(hr: &[f64], sd: &[f64], log_shift: f64, changed_index: Option<usize>) -> Result<f64> {
    if hr.len() != sd.len() {
        return Err(Error::Dimension {
            what: "sd",
            expected: hr.len(),
            got: sd.len(),
        });
    }
    if hr.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::invalid("hr", "must be positive"));
    }
    if sd.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("sd", "must be positive"));
    }
    if let Some(c) = changed_index {
        if c >= hr.len() {
            return Err(Error::invalid("changed_index", "out of range"));
        }
    }
    Ok(hr
        .iter()
        .zip(sd)
        .enumerate()
        .filter(|(k, _)| Some(*k) != changed_index)
        .map(|(_, (&h, &s))| pow(h, log_shift / s))
        .product())
}
