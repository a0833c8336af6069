//! Weighted Cox estimators for the case-cohort design and the full-cohort
//! estimator, fitted by damped Newton iteration on the weighted Breslow
//! partial likelihood with a sandwich variance.
//!
//! Scheme definitions:
//!
//! * `full`: every subject, unit weights (needs `z` for everyone).
//! * `prentice`: subcohort members are at risk as usual; cases outside the
//!   subcohort join only the risk set at their own failure time. Unit weights.
//! * `ipw`: selected subjects; cases weight 1, non-cases `1 / p` for the
//!   known subcohort sampling probability `p`.
//! * `post_strat`: selected subjects; cases weight 1, non-cases
//!   `(cohort non-cases) / (sampled non-cases)`.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::math::{exp, log, sqrt};
use crate::{CohortData, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SchemeKind {
    Full,
    Prentice,
    Ipw,
    PostStrat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct WeightScheme {
    pub kind: SchemeKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub sampling_prob: Option<f64>,
}

impl WeightScheme {
    pub const FULL: Self = Self::plain(SchemeKind::Full);
    pub const PRENTICE: Self = Self::plain(SchemeKind::Prentice);
    pub const POST_STRAT: Self = Self::plain(SchemeKind::PostStrat);

    const fn plain(kind: SchemeKind) -> Self {
        Self {
            kind,
            sampling_prob: None,
        }
    }

    pub fn ipw(sampling_prob: f64) -> Self {
        Self {
            kind: SchemeKind::Ipw,
            sampling_prob: Some(sampling_prob),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.sampling_prob) {
            (SchemeKind::Ipw, Some(p)) if p > 0.0 && p <= 1.0 => Ok(()),
            (SchemeKind::Ipw, Some(p)) => Err(Error::invalid("sampling_prob", alloc::format!("{p} is outside (0, 1]"))),
            (SchemeKind::Ipw, None) => Err(Error::invalid("sampling_prob", "required by ipw")),
            (_, Some(_)) => Err(Error::invalid("sampling_prob", "only used by ipw")),
            (_, None) => Ok(()),
        }
    }
}

/// Subjects entering a weighted fit, sorted by descending time, with
/// covariates `(z, w)` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedView {
    dim: usize,
    d_z: usize,
    x: Vec<f64>,
    time: Vec<f64>,
    event: Vec<bool>,
    weight: Vec<f64>,
    point_only: Vec<bool>,
    subject: Vec<usize>,
    groups: Vec<(usize, usize)>,
}

impl WeightedView {
    /// Builds a view from explicit per-subject rows (any order).
    pub fn from_parts(
        rows: Vec<Vec<f64>>,
        time: Vec<f64>,
        event: Vec<bool>,
        weight: Vec<f64>,
        point_only: Vec<bool>,
        d_z: usize,
    ) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::Empty("weighted view"));
        }
        let dim = rows[0].len();
        for (what, len) in [("time", time.len()), ("event", event.len()), ("weight", weight.len()), ("point_only", point_only.len())] {
            if len != m {
                return Err(Error::Dimension { what, expected: m, got: len });
            }
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension {
                what: "view covariates",
                expected: dim,
                got: rows.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0),
            });
        }
        if weight.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weight", "must be positive and finite"));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| time[b].partial_cmp(&time[a]).unwrap_or(Ordering::Equal));
        let mut view = Self {
            dim,
            d_z,
            x: Vec::with_capacity(m * dim),
            time: Vec::with_capacity(m),
            event: Vec::with_capacity(m),
            weight: Vec::with_capacity(m),
            point_only: Vec::with_capacity(m),
            subject: Vec::with_capacity(m),
            groups: Vec::new(),
        };
        for &i in &order {
            view.x.extend_from_slice(&rows[i]);
            view.time.push(time[i]);
            view.event.push(event[i]);
            view.weight.push(weight[i]);
            view.point_only.push(point_only[i]);
            view.subject.push(i);
        }
        let mut start = 0;
        for pos in 1..=m {
            if pos == m || view.time[pos] != view.time[start] {
                view.groups.push((start, pos));
                start = pos;
            }
        }
        Ok(view)
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    /// Source index (cohort record, or row for [`Self::from_parts`]) of view
    /// position `j`.
    pub fn subject(&self, j: usize) -> usize {
        self.subject[j]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weight[j]
    }

    pub fn time(&self, j: usize) -> f64 {
        self.time[j]
    }

    pub fn event(&self, j: usize) -> bool {
        self.event[j]
    }

    pub fn covariates(&self, j: usize) -> &[f64] {
        &self.x[j * self.dim..(j + 1) * self.dim]
    }

    pub fn is_point_only(&self, j: usize) -> bool {
        self.point_only[j]
    }

    /// Whether view member `j` is in the risk set at time `t`.
    pub fn at_risk(&self, j: usize, t: f64) -> bool {
        if self.point_only[j] {
            self.time[j] == t
        } else {
            self.time[j] >= t
        }
    }

    /// Same view with every weight multiplied by `c`.
    pub fn scaled_weights(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.weight.iter_mut().for_each(|w| *w *= c);
        out
    }
}

/// Builds the risk structure of `scheme` on `cohort`.
pub fn build_weighted_view(cohort: &CohortData, scheme: &WeightScheme) -> Result<WeightedView> {
    scheme.validate()?;
    if cohort.selected().is_empty() {
        return Err(Error::Empty("selected subjects"));
    }
    let n = cohort.n();
    let included: Vec<usize> = match scheme.kind {
        SchemeKind::Full => {
            if !cohort.unselected().is_empty() {
                return Err(Error::MissingCovariates(cohort.unselected()[0]));
            }
            (0..n).collect()
        }
        SchemeKind::Prentice => (0..n)
            .filter(|&i| cohort.records()[i].subcohort || (cohort.event(i) && cohort.records()[i].selected))
            .collect(),
        SchemeKind::Ipw | SchemeKind::PostStrat => cohort.selected().to_vec(),
    };
    let control_weight = match scheme.kind {
        SchemeKind::Ipw => 1.0 / scheme.sampling_prob.unwrap_or(1.0),
        SchemeKind::PostStrat => {
            let cohort_controls = (0..n).filter(|&i| !cohort.event(i)).count();
            let sampled = cohort.selected().iter().filter(|&&i| !cohort.event(i)).count();
            if sampled == 0 {
                return Err(Error::invalid("post_strat", "no sampled non-cases"));
            }
            cohort_controls as f64 / sampled as f64
        }
        _ => 1.0,
    };
    let rows = included
        .iter()
        .map(|&i| {
            let mut r = cohort.observed_z(i).expect("included subjects are selected").to_vec();
            r.extend_from_slice(cohort.w(i));
            r
        })
        .collect();
    let time = included.iter().map(|&i| cohort.time(i)).collect();
    let event = included.iter().map(|&i| cohort.event(i)).collect();
    let weight = included
        .iter()
        .map(|&i| if cohort.event(i) { 1.0 } else { control_weight })
        .collect();
    let point_only = included
        .iter()
        .map(|&i| scheme.kind == SchemeKind::Prentice && !cohort.records()[i].subcohort)
        .collect();
    let mut view = WeightedView::from_parts(rows, time, event, weight, point_only, cohort.d_z())?;
    for s in view.subject.iter_mut() {
        *s = included[*s];
    }
    Ok(view)
}

/// Objective, score and information at one `beta`.
#[derive(Debug, Clone)]
struct Evaluation {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
    /// Diagonal of `sum_k Delta_k w_k S2 / S0`, the scale against which
    /// information is judged singular.
    raw_second: Vec<f64>,
}

fn linear_predictor(view: &WeightedView, beta: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != view.dim {
        return Err(Error::Dimension {
            what: "beta",
            expected: view.dim,
            got: beta.len(),
        });
    }
    (0..view.len())
        .map(|j| {
            let e: f64 = view.covariates(j).iter().zip(beta).map(|(a, b)| a * b).sum();
            if e.is_finite() {
                Ok(e)
            } else {
                Err(Error::NonFiniteLinearPredictor(view.subject[j]))
            }
        })
        .collect()
}

/// Per-group risk-set moments `(S0, S1, S2)` computed with `exp(eta - shift)`.
struct Moments {
    s0: f64,
    s1: Vec<f64>,
    s2: DMatrix<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self {
            s0: 0.0,
            s1: vec![0.0; d],
            s2: DMatrix::zeros(d, d),
        }
    }

    fn add(&mut self, x: &[f64], r: f64, second: bool) {
        self.s0 += r;
        for (a, &v) in self.s1.iter_mut().zip(x) {
            *a += r * v;
        }
        if second {
            for a in 0..x.len() {
                for b in 0..=a {
                    self.s2[(a, b)] += r * x[a] * x[b];
                }
            }
        }
    }
}

/// Sweeps the view once; `visit` receives each event-carrying group's moments
/// and the total event weight in it.
fn sweep<F: FnMut(usize, &Moments, f64)>(view: &WeightedView, eta: &[f64], second: bool, shift: f64, mut visit: F) {
    let d = view.dim;
    let mut running = Moments::new(d);
    let mut group = Moments::new(d);
    for (g, &(start, end)) in view.groups.iter().enumerate() {
        for j in start..end {
            if !view.point_only[j] {
                running.add(view.covariates(j), view.weight[j] * exp(eta[j] - shift), second);
            }
        }
        let event_weight: f64 = (start..end).filter(|&j| view.event[j]).map(|j| view.weight[j]).sum();
        if event_weight == 0.0 {
            continue;
        }
        let has_point = (start..end).any(|j| view.point_only[j]);
        if has_point {
            group.s0 = running.s0;
            group.s1.copy_from_slice(&running.s1);
            if second {
                group.s2.copy_from(&running.s2);
            }
            for j in start..end {
                if view.point_only[j] {
                    group.add(view.covariates(j), view.weight[j] * exp(eta[j] - shift), second);
                }
            }
            visit(g, &group, event_weight);
        } else {
            visit(g, &running, event_weight);
        }
    }
}

fn evaluate(view: &WeightedView, beta: &[f64], second: bool) -> Result<Evaluation> {
    let eta = linear_predictor(view, beta)?;
    let d = view.dim;
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut loglik = 0.0;
    let mut score = DVector::zeros(d);
    let mut info = DMatrix::zeros(d, d);
    let mut raw_second = vec![0.0; d];
    for j in 0..view.len() {
        if view.event[j] {
            loglik += view.weight[j] * eta[j];
            for (k, &v) in view.covariates(j).iter().enumerate() {
                score[k] += view.weight[j] * v;
            }
        }
    }
    sweep(view, &eta, second, shift, |_, m, ew| {
        loglik -= ew * (log(m.s0) + shift);
        for k in 0..d {
            score[k] -= ew * m.s1[k] / m.s0;
        }
        if second {
            for a in 0..d {
                raw_second[a] += ew * m.s2[(a, a)] / m.s0;
                for b in 0..=a {
                    let v = ew * (m.s2[(a, b)] / m.s0 - m.s1[a] * m.s1[b] / (m.s0 * m.s0));
                    info[(a, b)] += v;
                }
            }
        }
    });
    if second {
        for a in 0..d {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
    }
    Ok(Evaluation {
        loglik,
        score,
        info,
        raw_second,
    })
}

/// Weighted Breslow log partial likelihood
/// `sum_k Delta_k w_k [eta_k - log sum_l w_l R_l(Y_k) exp(eta_l)]`.
pub fn weighted_log_likelihood(view: &WeightedView, beta: &[f64]) -> Result<f64> {
    Ok(evaluate(view, beta, false)?.loglik)
}

/// Score vector of [`weighted_log_likelihood`].
pub fn weighted_score(view: &WeightedView, beta: &[f64]) -> Result<Vec<f64>> {
    Ok(evaluate(view, beta, false)?.score.as_slice().to_vec())
}

/// Observed information (negative Hessian).
pub fn weighted_information(view: &WeightedView, beta: &[f64]) -> Result<DMatrix<f64>> {
    Ok(evaluate(view, beta, true)?.info)
}

/// Inverse of the information after a scale-free singularity check.
fn invert_information(ev: &Evaluation) -> Result<DMatrix<f64>> {
    let d = ev.info.nrows();
    let mut scale = vec![0.0; d];
    for a in 0..d {
        let diag = ev.info[(a, a)];
        if !(diag > 1e-10 * ev.raw_second[a].max(f64::MIN_POSITIVE)) {
            return Err(Error::Singular("information matrix"));
        }
        scale[a] = 1.0 / sqrt(diag);
    }
    let corr = DMatrix::from_fn(d, d, |a, b| ev.info[(a, b)] * scale[a] * scale[b]);
    let chol = corr.cholesky().ok_or(Error::Singular("information matrix"))?;
    let l = chol.l();
    if (0..d).any(|a| !(l[(a, a)] * l[(a, a)] > 1e-12)) {
        return Err(Error::Singular("information matrix"));
    }
    let inv_corr = chol.inverse();
    Ok(DMatrix::from_fn(d, d, |a, b| inv_corr[(a, b)] * scale[a] * scale[b]))
}

/// `D_i = w_i r_i` with `r_i` the Breslow score residual.
fn weighted_score_residuals(view: &WeightedView, beta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let eta = linear_predictor(view, beta)?;
    let d = view.dim;
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Per group: a_g = sum_events w / S0 and b_g = a_g * xbar.
    let ng = view.groups.len();
    let mut a = vec![0.0; ng];
    let mut b = vec![vec![0.0; d]; ng];
    let mut xbar = vec![vec![0.0; d]; ng];
    sweep(view, &eta, false, shift, |g, m, ew| {
        a[g] = ew / m.s0;
        for k in 0..d {
            xbar[g][k] = m.s1[k] / m.s0;
            b[g][k] = a[g] * xbar[g][k];
        }
    });
    // Groups are in descending time; cumulative from the earliest time.
    let mut cum_a = vec![0.0; ng];
    let mut cum_b = vec![vec![0.0; d]; ng];
    let (mut acc_a, mut acc_b) = (0.0, vec![0.0; d]);
    for g in (0..ng).rev() {
        acc_a += a[g];
        for k in 0..d {
            acc_b[k] += b[g][k];
        }
        cum_a[g] = acc_a;
        cum_b[g].copy_from_slice(&acc_b);
    }
    let mut out = vec![vec![0.0; d]; view.len()];
    for (g, &(start, end)) in view.groups.iter().enumerate() {
        for j in start..end {
            let x = view.covariates(j);
            let r = exp(eta[j] - shift);
            let (sa, sb) = if view.point_only[j] { (a[g], &b[g]) } else { (cum_a[g], &cum_b[g]) };
            for k in 0..d {
                let mut v = -r * (x[k] * sa - sb[k]);
                if view.event[j] {
                    v += x[k] - xbar[g][k];
                }
                out[j][k] = view.weight[j] * v;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct WeightedFit {
    pub beta_hat: Vec<f64>,
    pub robust_se: Vec<f64>,
    /// Sandwich covariance `A^{-1} B A^{-1}`.
    pub robust_cov: Vec<Vec<f64>>,
    /// Inverse observed information.
    pub naive_cov: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub step_halvings: usize,
    pub max_abs_score: f64,
    pub loglik: f64,
}

impl WeightedFit {
    /// Central Wald interval for component `k` at normal quantile `q`.
    pub fn wald_interval(&self, k: usize, q: f64) -> (f64, f64) {
        (self.beta_hat[k] - q * self.robust_se[k], self.beta_hat[k] + q * self.robust_se[k])
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Damped Newton maximization of the weighted log partial likelihood.
///
/// Converged when the largest score component drops below `tol` or an
/// accepted step moves `beta` by less than `1e-10 (1 + |beta|_inf)`.
/// Non-convergence is reported through `converged`; a singular information
/// matrix is an error.
pub fn newton_solve(view: &WeightedView, init_beta: &[f64], tol: f64, max_iter: usize) -> Result<WeightedFit> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let mut beta = init_beta.to_vec();
    let mut ev = evaluate(view, &beta, true)?;
    let mut iterations = 0;
    let mut halvings = 0;
    let mut converged = max_abs(&ev.score) < tol;
    while !converged && iterations < max_iter {
        iterations += 1;
        let inv = invert_information(&ev)?;
        let step = &inv * &ev.score;
        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            if let Ok(e) = evaluate(view, &trial, true) {
                // Ascent up to rounding in the log-likelihood.
                if e.loglik >= ev.loglik - 1e-12 * (1.0 + ev.loglik.abs()) {
                    break Some((trial, e));
                }
            }
            if t < 1e-10 {
                break None;
            }
            t *= 0.5;
            halvings += 1;
        };
        let Some((trial, next)) = accepted else {
            // No ascent along the Newton direction: numerically stationary.
            break;
        };
        let moved = beta.iter().zip(&trial).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = 1.0 + trial.iter().map(|b| b.abs()).fold(0.0, f64::max);
        beta = trial;
        ev = next;
        converged = max_abs(&ev.score) < tol || moved < 1e-10 * scale;
    }
    let inv = invert_information(&ev)?;
    let resid = weighted_score_residuals(view, &beta)?;
    let d = view.dim;
    let mut meat = DMatrix::zeros(d, d);
    for r in &resid {
        for a in 0..d {
            for b in 0..d {
                meat[(a, b)] += r[a] * r[b];
            }
        }
    }
    let mut robust = &inv * meat * &inv;
    crate::linalg::symmetrize(&mut robust);
    let robust_se = (0..d).map(|a| sqrt(robust[(a, a)].max(0.0))).collect();
    Ok(WeightedFit {
        beta_hat: beta,
        robust_se,
        robust_cov: to_rows(&robust),
        naive_cov: to_rows(&inv),
        converged,
        iterations,
        step_halvings: halvings,
        max_abs_score: max_abs(&ev.score),
        loglik: ev.loglik,
    })
}

/// Builds the view and solves from zero with the default tolerance.
pub fn fit_scheme(cohort: &CohortData, scheme: &WeightScheme) -> Result<WeightedFit> {
    let view = build_weighted_view(cohort, scheme)?;
    newton_solve(&view, &vec![0.0; view.dim()], DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Largest relative discrepancy `|a - f| / max(|a|, |f|, 1)` between the
/// analytic score and Hessian and central finite differences.
pub fn analytic_gradient_check(view: &WeightedView, beta: &[f64]) -> Result<f64> {
    let ev = evaluate(view, beta, true)?;
    let d = view.dim;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1.0);
    let mut worst: f64 = 0.0;
    for k in 0..d {
        let h = 1e-5 * beta[k].abs().max(1.0);
        let mut plus = beta.to_vec();
        let mut minus = beta.to_vec();
        plus[k] += h;
        minus[k] -= h;
        let ep = evaluate(view, &plus, false)?;
        let em = evaluate(view, &minus, false)?;
        worst = worst.max(rel(ev.score[k], (ep.loglik - em.loglik) / (2.0 * h)));
        for a in 0..d {
            let fd = (ep.score[a] - em.score[a]) / (2.0 * h);
            worst = worst.max(rel(-ev.info[(a, k)], fd));
        }
    }
    Ok(worst)
}
