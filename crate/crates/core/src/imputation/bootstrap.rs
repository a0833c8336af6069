use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{ImputationModel, NormalInversion};
use crate::math::normal_cdf;
use crate::{CohortData, Error, Result};

/// Bayesian bootstrap for the expensive covariates: Dirichlet(1, ..., 1)
/// weights over the observed vectors, then categorical draws.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesianBootstrapModel {
    support: DMatrix<f64>,
    missing: usize,
}

impl BayesianBootstrapModel {
    pub fn new(support: DMatrix<f64>, missing: usize) -> Result<Self> {
        if support.nrows() == 0 {
            return Err(Error::Empty("bootstrap support"));
        }
        Ok(Self { support, missing })
    }

    /// Support = observed `Z` of the selected subjects.
    pub fn from_cohort(cohort: &CohortData) -> Result<Self> {
        Self::new(cohort.observed_z_matrix(), cohort.unselected().len())
    }

    pub fn support(&self) -> &DMatrix<f64> {
        &self.support
    }

    pub fn draw_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> BootstrapWeights {
        let mut acc = 0.0;
        let cumulative = (0..self.support.nrows())
            .map(|_| {
                let e: f64 = Exp1.sample(rng);
                acc += e;
                acc
            })
            .collect();
        BootstrapWeights { cumulative }
    }

    fn rows_from_indices(&self, idx: impl Iterator<Item = usize>, count: usize) -> DMatrix<f64> {
        let d = self.support.ncols();
        let mut out = DMatrix::zeros(count, d);
        for (r, i) in idx.enumerate() {
            for k in 0..d {
                out[(r, k)] = self.support[(i, k)];
            }
        }
        out
    }
}

/// Unnormalized Dirichlet weights (normalized unit-rate exponentials) stored
/// as running sums.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapWeights {
    cumulative: Vec<f64>,
}

impl BootstrapWeights {
    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Normalized weights.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total();
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = (c - prev) / total;
                prev = c;
                p
            })
            .collect()
    }

    /// Support index whose cumulative-probability interval contains `q`.
    pub fn index_at(&self, q: f64) -> usize {
        let target = q * self.total();
        let i = self.cumulative.partition_point(|&c| c <= target);
        i.min(self.cumulative.len() - 1)
    }
}

/// `count` draws sharing one Dirichlet(1, ..., 1) weight vector; every row
/// is a copy of a support row.
pub fn bb_draw<R: Rng + ?Sized>(
    model: &BayesianBootstrapModel,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    let weights = model.draw_weights(rng);
    Ok(draw_with(model, &weights, count, rng))
}

fn draw_with<R: Rng + ?Sized>(
    model: &BayesianBootstrapModel,
    weights: &BootstrapWeights,
    count: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let idx: Vec<usize> = (0..count)
        .map(|_| weights.index_at(rng.random::<f64>()))
        .collect();
    model.rows_from_indices(idx.into_iter(), count)
}

impl ImputationModel for BayesianBootstrapModel {
    type Gamma = BootstrapWeights;

    fn missing_rows(&self) -> usize {
        self.missing
    }

    fn d_z(&self) -> usize {
        self.support.ncols()
    }

    fn draw_gamma<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BootstrapWeights> {
        Ok(self.draw_weights(rng))
    }

    fn impute<R: Rng + ?Sized>(&self, gamma: &BootstrapWeights, rng: &mut R) -> Result<DMatrix<f64>> {
        Ok(draw_with(self, gamma, self.missing, rng))
    }
}

/// Gaussian-copula inversion: the categorical draw for row `j` is the
/// weights' inverse CDF at `Phi(u_j)`.
impl NormalInversion for BayesianBootstrapModel {
    fn aux_shape(&self) -> (usize, usize) {
        (self.missing, 1)
    }

    fn invert(&self, gamma: &BootstrapWeights, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.shape() != self.aux_shape() {
            return Err(Error::Dimension {
                what: "bootstrap auxiliary normals",
                expected: self.missing,
                got: u.nrows(),
            });
        }
        let idx = u.iter().map(|&v| gamma.index_at(normal_cdf(v)));
        Ok(self.rows_from_indices(idx, self.missing))
    }
}
