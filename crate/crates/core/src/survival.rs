//! Cohort data model and the Breslow-form Cox partial likelihood.
//!
//! Ties share one denominator: every subject with `time >= t` is in the risk
//! set at `t`. Denominators come from one descending-time sweep over the
//! cohort with a running log-sum-exp, so a full evaluation is `O(n d)` once
//! the time ordering (cached in [`CohortData`]) is known.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::DMatrix;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::math::{log, log_sum_exp, LogSumExp};
use crate::{Error, Result};

/// One individual: follow-up, event indicator, selection and covariates.
///
/// `z` holds the expensive covariates and is present exactly when the subject
/// was selected. `subcohort` marks random-subcohort membership (as opposed to
/// being selected only because of an event) and is only used by the Prentice
/// weighting scheme.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SubjectRecord {
    pub time: f64,
    pub event: bool,
    pub selected: bool,
    pub subcohort: bool,
    pub z: Option<Vec<f64>>,
    pub w: Vec<f64>,
    pub x: Vec<f64>,
}

impl SubjectRecord {
    /// Record whose selection follows from `z`; selected non-cases are
    /// treated as subcohort members and selected cases as outside it.
    pub fn new(time: f64, event: bool, z: Option<Vec<f64>>, w: Vec<f64>, x: Vec<f64>) -> Self {
        let selected = z.is_some();
        Self {
            time,
            event,
            selected,
            subcohort: selected && !event,
            z,
            w,
            x,
        }
    }

    pub fn with_subcohort(mut self, subcohort: bool) -> Self {
        self.subcohort = subcohort;
        self
    }
}

/// Immutable cohort with cached orderings and flat covariate storage.
#[derive(Debug, Clone)]
pub struct CohortData {
    records: Vec<SubjectRecord>,
    d_z: usize,
    d_w: usize,
    d_x: usize,
    event_order: Vec<usize>,
    risk_order: Vec<usize>,
    /// Half-open ranges into `risk_order` of subjects sharing a time.
    tie_groups: Vec<(usize, usize)>,
    s_set: Vec<usize>,
    s_bar: Vec<usize>,
    missing_slot: Vec<Option<usize>>,
    z_obs: Vec<f64>,
    w_flat: Vec<f64>,
}

impl CohortData {
    pub fn new(records: Vec<SubjectRecord>) -> Result<Self> {
        build_cohort(records)
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }
    pub fn d_z(&self) -> usize {
        self.d_z
    }
    pub fn d_w(&self) -> usize {
        self.d_w
    }
    pub fn d_x(&self) -> usize {
        self.d_x
    }
    /// Length of the full log-hazard ratio `(beta1, beta2)`.
    pub fn d_beta(&self) -> usize {
        self.d_z + self.d_w
    }
    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }
    pub fn record(&self, i: usize) -> &SubjectRecord {
        &self.records[i]
    }
    /// Event subjects sorted by ascending time, ties in input order.
    pub fn event_order(&self) -> &[usize] {
        &self.event_order
    }
    /// All subjects sorted by descending time, ties in input order.
    pub fn risk_order(&self) -> &[usize] {
        &self.risk_order
    }
    /// Indices with measured expensive covariates.
    pub fn selected(&self) -> &[usize] {
        &self.s_set
    }
    /// Indices whose expensive covariates are missing.
    pub fn unselected(&self) -> &[usize] {
        &self.s_bar
    }
    pub fn n_events(&self) -> usize {
        self.event_order.len()
    }
    /// Position of subject `i` among the unselected subjects.
    pub fn missing_slot(&self, i: usize) -> Option<usize> {
        self.missing_slot[i]
    }
    pub fn observed_z(&self, i: usize) -> Option<&[f64]> {
        self.records[i].z.as_deref()
    }
    pub fn w(&self, i: usize) -> &[f64] {
        &self.w_flat[i * self.d_w..(i + 1) * self.d_w]
    }
    pub fn x(&self, i: usize) -> &[f64] {
        &self.records[i].x
    }
    pub fn time(&self, i: usize) -> f64 {
        self.records[i].time
    }
    pub fn event(&self, i: usize) -> bool {
        self.records[i].event
    }

    /// Observed expensive covariates of the selected subjects, `|S| x d_z`.
    pub fn observed_z_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.s_set.len(), self.d_z, |r, k| {
            self.z_obs[self.s_set[r] * self.d_z + k]
        })
    }

    /// Completes the `n x d_z` covariate matrix with imputed rows for `S-bar`.
    pub fn complete_z(&self, missing: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_missing_shape(self, missing)?;
        Ok(DMatrix::from_fn(self.n(), self.d_z, |i, k| match self.missing_slot[i] {
            Some(slot) => missing[(slot, k)],
            None => self.z_obs[i * self.d_z + k],
        }))
    }

    /// Design rows `(1, w, x)` for the listed subjects.
    pub fn design_matrix(&self, indices: &[usize]) -> DMatrix<f64> {
        let d_v = 1 + self.d_w + self.d_x;
        DMatrix::from_fn(indices.len(), d_v, |r, c| {
            let i = indices[r];
            if c == 0 {
                1.0
            } else if c <= self.d_w {
                self.w(i)[c - 1]
            } else {
                self.records[i].x[c - 1 - self.d_w]
            }
        })
    }
}

/// Validates the records and computes orderings and index sets.
pub fn build_cohort(records: Vec<SubjectRecord>) -> Result<CohortData> {
    let first = records.first().ok_or(Error::Empty("cohort records"))?;
    let d_w = first.w.len();
    let d_x = first.x.len();
    let d_z = records
        .iter()
        .find_map(|r| r.z.as_ref().map(Vec::len))
        .ok_or(Error::Empty("selected subjects"))?;

    for (i, r) in records.iter().enumerate() {
        if !(r.time >= 0.0) || !r.time.is_finite() {
            return Err(Error::invalid("time", alloc::format!("subject {i}: {}", r.time)));
        }
        if r.w.len() != d_w {
            return Err(Error::Dimension {
                what: "confounders w",
                expected: d_w,
                got: r.w.len(),
            });
        }
        if r.x.len() != d_x {
            return Err(Error::Dimension {
                what: "auxiliary covariates x",
                expected: d_x,
                got: r.x.len(),
            });
        }
        match (&r.z, r.selected) {
            (None, true) => return Err(Error::MissingCovariates(i)),
            (Some(_), false) => {
                return Err(Error::invalid(
                    "z",
                    alloc::format!("subject {i} is unselected but carries z"),
                ))
            }
            (Some(z), true) if z.len() != d_z => {
                return Err(Error::Dimension {
                    what: "expensive covariates z",
                    expected: d_z,
                    got: z.len(),
                })
            }
            _ => {}
        }
        if r.subcohort && !r.selected {
            return Err(Error::invalid(
                "subcohort",
                alloc::format!("subject {i} is in the subcohort but unselected"),
            ));
        }
        let finite = r.w.iter().chain(&r.x).chain(r.z.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid(
                "covariates",
                alloc::format!("subject {i} has a non-finite covariate"),
            ));
        }
    }

    let n = records.len();
    let mut risk_order: Vec<usize> = (0..n).collect();
    // Stable: ties keep input order.
    risk_order.sort_by(|&a, &b| {
        records[b]
            .time
            .partial_cmp(&records[a].time)
            .unwrap_or(Ordering::Equal)
    });
    let mut event_order: Vec<usize> = (0..n).filter(|&i| records[i].event).collect();
    event_order.sort_by(|&a, &b| {
        records[a]
            .time
            .partial_cmp(&records[b].time)
            .unwrap_or(Ordering::Equal)
    });

    let mut tie_groups = Vec::new();
    let mut start = 0;
    for pos in 1..=n {
        if pos == n || records[risk_order[pos]].time != records[risk_order[start]].time {
            tie_groups.push((start, pos));
            start = pos;
        }
    }

    let mut s_set = Vec::new();
    let mut s_bar = Vec::new();
    let mut missing_slot = vec![None; n];
    let mut z_obs = vec![0.0; n * d_z];
    let mut w_flat = Vec::with_capacity(n * d_w);
    for (i, r) in records.iter().enumerate() {
        match &r.z {
            Some(z) => {
                s_set.push(i);
                z_obs[i * d_z..(i + 1) * d_z].copy_from_slice(z);
            }
            None => {
                missing_slot[i] = Some(s_bar.len());
                s_bar.push(i);
            }
        }
        w_flat.extend_from_slice(&r.w);
    }

    Ok(CohortData {
        records,
        d_z,
        d_w,
        d_x,
        event_order,
        risk_order,
        tie_groups,
        s_set,
        s_bar,
        missing_slot,
        z_obs,
        w_flat,
    })
}

/// Log-hazard ratio `(beta1, beta2)` for the expensive covariates and the
/// confounders.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LogHazardRatio {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

impl LogHazardRatio {
    pub fn new(beta1: Vec<f64>, beta2: Vec<f64>) -> Result<Self> {
        if beta1.iter().chain(&beta2).any(|v| !v.is_finite()) {
            return Err(Error::invalid("beta", "non-finite entry"));
        }
        Ok(Self { beta1, beta2 })
    }

    pub fn zeros(d_z: usize, d_w: usize) -> Self {
        Self {
            beta1: vec![0.0; d_z],
            beta2: vec![0.0; d_w],
        }
    }

    /// Splits a flat `(beta1, beta2)` vector.
    pub fn from_flat(flat: &[f64], d_z: usize) -> Result<Self> {
        if d_z > flat.len() {
            return Err(Error::Dimension {
                what: "beta",
                expected: d_z,
                got: flat.len(),
            });
        }
        Self::new(flat[..d_z].to_vec(), flat[d_z..].to_vec())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.beta1.clone();
        v.extend_from_slice(&self.beta2);
        v
    }

    pub fn len(&self) -> usize {
        self.beta1.len() + self.beta2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `B` imputed copies of the missing expensive covariates, each
/// `|S-bar| x d_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationDraw {
    pub copies: Vec<DMatrix<f64>>,
}

impl ImputationDraw {
    pub fn new(copies: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = copies.first().ok_or(Error::Empty("imputation copies"))?;
        let shape = first.shape();
        for c in &copies {
            if c.shape() != shape {
                return Err(Error::Dimension {
                    what: "imputation copy rows",
                    expected: shape.0,
                    got: c.nrows(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("imputation draw", "non-finite entry"));
            }
        }
        Ok(Self { copies })
    }

    pub fn single(copy: DMatrix<f64>) -> Self {
        Self { copies: vec![copy] }
    }

    pub fn b(&self) -> usize {
        self.copies.len()
    }
}

fn check_missing_shape(cohort: &CohortData, missing: &DMatrix<f64>) -> Result<()> {
    if missing.nrows() != cohort.s_bar.len() {
        return Err(Error::Dimension {
            what: "imputed rows",
            expected: cohort.s_bar.len(),
            got: missing.nrows(),
        });
    }
    if missing.ncols() != cohort.d_z {
        return Err(Error::Dimension {
            what: "imputed columns",
            expected: cohort.d_z,
            got: missing.ncols(),
        });
    }
    Ok(())
}

fn check_beta(cohort: &CohortData, beta: &LogHazardRatio) -> Result<()> {
    if beta.beta1.len() != cohort.d_z {
        return Err(Error::Dimension {
            what: "beta1",
            expected: cohort.d_z,
            got: beta.beta1.len(),
        });
    }
    if beta.beta2.len() != cohort.d_w {
        return Err(Error::Dimension {
            what: "beta2",
            expected: cohort.d_w,
            got: beta.beta2.len(),
        });
    }
    Ok(())
}

/// Breslow log partial likelihood of a linear predictor over the cohort.
///
/// Returns 0 when there are no events.
pub fn log_partial_likelihood_eta(cohort: &CohortData, eta: &[f64]) -> f64 {
    let mut acc = LogSumExp::new();
    let mut total = 0.0;
    for &(start, end) in &cohort.tie_groups {
        let group = &cohort.risk_order[start..end];
        for &i in group {
            acc.push(eta[i]);
        }
        let mut log_denom = None;
        for &i in group {
            if cohort.records[i].event {
                let ld = *log_denom.get_or_insert_with(|| acc.value());
                total += eta[i] - ld;
            }
        }
    }
    total
}

/// Log partial likelihood for a completed `n x d_z` covariate matrix whose
/// observed rows must equal the stored values.
pub fn log_partial_likelihood(
    cohort: &CohortData,
    beta: &LogHazardRatio,
    z_full: &DMatrix<f64>,
) -> Result<f64> {
    check_beta(cohort, beta)?;
    if z_full.shape() != (cohort.n(), cohort.d_z) {
        return Err(Error::Dimension {
            what: "z_full rows",
            expected: cohort.n(),
            got: z_full.nrows(),
        });
    }
    for &i in &cohort.s_set {
        let stored = &cohort.z_obs[i * cohort.d_z..(i + 1) * cohort.d_z];
        if (0..cohort.d_z).any(|k| z_full[(i, k)] != stored[k]) {
            return Err(Error::invalid(
                "z_full",
                alloc::format!("row {i} differs from the observed covariates"),
            ));
        }
    }
    let mut eta = vec![0.0; cohort.n()];
    for (i, e) in eta.iter_mut().enumerate() {
        let zb: f64 = (0..cohort.d_z).map(|k| z_full[(i, k)] * beta.beta1[k]).sum();
        *e = zb + dot(cohort.w(i), &beta.beta2);
        if !e.is_finite() {
            return Err(Error::NonFiniteLinearPredictor(i));
        }
    }
    Ok(log_partial_likelihood_eta(cohort, &eta))
}

/// `log h(beta, Z^mis)`: log of the mean partial likelihood over the copies.
pub fn log_h(cohort: &CohortData, beta: &LogHazardRatio, draw: &ImputationDraw) -> Result<f64> {
    LikelihoodEvaluator::new(cohort).log_h(beta, draw)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reusable scratch space for repeated `log h` evaluations on one cohort.
#[derive(Debug, Clone)]
pub struct LikelihoodEvaluator<'a> {
    cohort: &'a CohortData,
    base: Vec<f64>,
    eta: Vec<f64>,
    per_copy: Vec<f64>,
}

impl<'a> LikelihoodEvaluator<'a> {
    pub fn new(cohort: &'a CohortData) -> Self {
        Self {
            cohort,
            base: vec![0.0; cohort.n()],
            eta: vec![0.0; cohort.n()],
            per_copy: Vec::new(),
        }
    }

    pub fn cohort(&self) -> &'a CohortData {
        self.cohort
    }

    /// Linear predictor without the imputed part: `beta2^T w` for every
    /// subject plus `beta1^T z` for the selected ones.
    fn fill_base(&mut self, beta: &LogHazardRatio) -> Result<()> {
        check_beta(self.cohort, beta)?;
        let c = self.cohort;
        for i in 0..c.n() {
            let mut v = dot(c.w(i), &beta.beta2);
            if c.missing_slot[i].is_none() {
                v += dot(&c.z_obs[i * c.d_z..(i + 1) * c.d_z], &beta.beta1);
            }
            if !v.is_finite() {
                return Err(Error::NonFiniteLinearPredictor(i));
            }
            self.base[i] = v;
        }
        Ok(())
    }

    fn copy_log_pl(&mut self, beta: &LogHazardRatio, copy: &DMatrix<f64>) -> Result<f64> {
        let c = self.cohort;
        check_missing_shape(c, copy)?;
        self.eta.copy_from_slice(&self.base);
        let rows = copy.nrows();
        let data = copy.as_slice();
        for (k, b) in beta.beta1.iter().enumerate() {
            let col = &data[k * rows..(k + 1) * rows];
            for (slot, &i) in c.s_bar.iter().enumerate() {
                self.eta[i] += col[slot] * b;
            }
        }
        for &i in &c.s_bar {
            if !self.eta[i].is_finite() {
                return Err(Error::NonFiniteLinearPredictor(i));
            }
        }
        Ok(log_partial_likelihood_eta(c, &self.eta))
    }

    /// Per-copy log partial likelihoods.
    pub fn log_pl_copies(&mut self, beta: &LogHazardRatio, draw: &ImputationDraw) -> Result<Vec<f64>> {
        self.fill_base(beta)?;
        draw.copies.iter().map(|copy| self.copy_log_pl(beta, copy)).collect()
    }

    pub fn log_h(&mut self, beta: &LogHazardRatio, draw: &ImputationDraw) -> Result<f64> {
        if draw.copies.is_empty() {
            return Err(Error::Empty("imputation copies"));
        }
        self.fill_base(beta)?;
        let mut per_copy = core::mem::take(&mut self.per_copy);
        per_copy.clear();
        for copy in &draw.copies {
            per_copy.push(self.copy_log_pl(beta, copy)?);
        }
        let value = log_sum_exp(&per_copy) - log(per_copy.len() as f64);
        self.per_copy = per_copy;
        Ok(value)
    }
}
