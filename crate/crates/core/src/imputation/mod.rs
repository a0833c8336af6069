//! Restricted-posterior models for the missing expensive covariates.
//!
//! Both models are fitted on the selected subjects only. They draw a model
//! parameter `gamma` from its restricted posterior and then the missing rows
//! given `gamma`; [`NormalInversion`] additionally exposes the deterministic
//! map from standard normals to missing rows that the correlated samplers
//! need.

mod bootstrap;
mod conjugate;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math::sqrt;
use crate::Result;

pub use bootstrap::{bb_draw, BayesianBootstrapModel, BootstrapWeights};
pub use conjugate::{
    fit_restricted_posterior, phi_xi, phi_z, sample_sigma, ConjugateModel, GammaDraw,
    RestrictedPosterior,
};

/// A model for `Z | W, X, gamma` with a restricted posterior over `gamma`.
pub trait ImputationModel {
    type Gamma: Clone;

    /// Rows per imputed copy (the number of unselected subjects).
    fn missing_rows(&self) -> usize;

    fn d_z(&self) -> usize;

    /// One draw from the restricted posterior of `gamma`.
    fn draw_gamma<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self::Gamma>;

    /// Missing rows drawn from `p(z | w, x, gamma)`.
    fn impute<R: Rng + ?Sized>(&self, gamma: &Self::Gamma, rng: &mut R) -> Result<DMatrix<f64>>;

    /// One copy from the restricted posterior predictive.
    fn draw_missing<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DMatrix<f64>> {
        let gamma = self.draw_gamma(rng)?;
        self.impute(&gamma, rng)
    }
}

/// Models whose conditional draw is a deterministic function of `gamma` and
/// a matrix of independent standard normals.
pub trait NormalInversion: ImputationModel {
    /// Shape of the standard-normal matrix consumed by [`Self::invert`].
    fn aux_shape(&self) -> (usize, usize);

    fn invert(&self, gamma: &Self::Gamma, u: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// The standard-normal inputs of the conjugate model's inversion maps.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryNormals {
    /// `d_v x d_z`, drives the regression coefficients.
    pub u_xi: DMatrix<f64>,
    /// `|S-bar| x d_z`, drives the missing rows.
    pub u_z: DMatrix<f64>,
}

impl AuxiliaryNormals {
    pub fn standard<R: Rng + ?Sized>(d_v: usize, d_z: usize, missing: usize, rng: &mut R) -> Self {
        Self {
            u_xi: standard_normal_matrix(d_v, d_z, rng),
            u_z: standard_normal_matrix(missing, d_z, rng),
        }
    }
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Filled column by column so the stream order is fixed.
    let data: alloc::vec::Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Autoregressive refresh `rho * u + sqrt(1 - rho^2) * eps`.
pub fn correlate<R: Rng + ?Sized>(u: &DMatrix<f64>, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let scale = sqrt((1.0 - rho) * (1.0 + rho));
    let mut out = u.clone();
    for v in out.iter_mut() {
        let eps: f64 = StandardNormal.sample(rng);
        *v = rho * *v + scale * eps;
    }
    out
}
