use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{standard_normal_matrix, ImputationModel, NormalInversion};
use crate::linalg::{cholesky_lower, symmetrize};
use crate::math::sqrt;
use crate::{CohortData, Error, Result};

/// Sufficient statistics of the conjugate posterior for the regression
/// `Z | W, X ~ N(xi^T V, Sigma)` with `V = (1, W, X)` under the Jeffreys
/// prior `|Sigma|^{-(d_z + 1)/2}`:
/// `xi | Sigma ~ MN(xi_hat, (V^T V)^{-1}, Sigma)` and `Sigma ~ IW(Psi, n_S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedPosterior {
    pub xi_hat: DMatrix<f64>,
    pub c_matrix: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub n_s: usize,
    c_chol: DMatrix<f64>,
    psi_chol: DMatrix<f64>,
}

impl RestrictedPosterior {
    /// Builds the posterior from precomputed statistics, checking SPD-ness.
    pub fn new(
        xi_hat: DMatrix<f64>,
        mut c_matrix: DMatrix<f64>,
        mut psi: DMatrix<f64>,
        n_s: usize,
    ) -> Result<Self> {
        let (d_v, d_z) = xi_hat.shape();
        if c_matrix.shape() != (d_v, d_v) {
            return Err(Error::Dimension {
                what: "c_matrix",
                expected: d_v,
                got: c_matrix.nrows(),
            });
        }
        if psi.shape() != (d_z, d_z) {
            return Err(Error::Dimension {
                what: "psi",
                expected: d_z,
                got: psi.nrows(),
            });
        }
        if n_s <= d_z + 1 {
            return Err(Error::TooFew {
                what: "selected subjects (inverse-Wishart degrees of freedom)",
                need: d_z + 2,
                got: n_s,
            });
        }
        symmetrize(&mut c_matrix);
        symmetrize(&mut psi);
        let c_chol = cholesky_lower(&c_matrix, "(V^T V)^{-1}")?;
        let psi_chol = cholesky_lower(&psi, "residual sum of squares Psi")?;
        Ok(Self {
            xi_hat,
            c_matrix,
            psi,
            n_s,
            c_chol,
            psi_chol,
        })
    }

    pub fn d_v(&self) -> usize {
        self.xi_hat.nrows()
    }

    pub fn d_z(&self) -> usize {
        self.xi_hat.ncols()
    }

    /// Lower Cholesky factor of `c_matrix`.
    pub fn c_factor(&self) -> &DMatrix<f64> {
        &self.c_chol
    }
}

/// Least-squares fit of the selected subjects' `Z` on `(1, W, X)`.
pub fn fit_restricted_posterior(cohort: &CohortData) -> Result<RestrictedPosterior> {
    let d_v = 1 + cohort.d_w() + cohort.d_x();
    let d_z = cohort.d_z();
    let n_s = cohort.selected().len();
    if n_s < d_v + d_z + 2 {
        return Err(Error::TooFew {
            what: "selected subjects",
            need: d_v + d_z + 2,
            got: n_s,
        });
    }
    let v = cohort.design_matrix(cohort.selected());
    let z = cohort.observed_z_matrix();
    let mut vtv = v.tr_mul(&v);
    symmetrize(&mut vtv);
    let chol = vtv.cholesky().ok_or(Error::Singular("V^T V"))?;
    let xi_hat = chol.solve(&v.tr_mul(&z));
    let c_matrix = chol.inverse();
    let resid = &z - &v * &xi_hat;
    let psi = resid.tr_mul(&resid);
    // Residuals at rounding level mean Z is an exact linear function of V.
    let raw = z.tr_mul(&z);
    if (0..d_z).any(|j| !(psi[(j, j)] > 1e-12 * raw[(j, j)].max(f64::MIN_POSITIVE))) {
        return Err(Error::NotPositiveDefinite("residual sum of squares Psi"));
    }
    RestrictedPosterior::new(xi_hat, c_matrix, psi, n_s)
}

/// Inverse-Wishart draw with scale `Psi` and `n_S` degrees of freedom via the
/// Bartlett decomposition of the matching Wishart draw for `Sigma^{-1}`.
pub fn sample_sigma<R: Rng + ?Sized>(post: &RestrictedPosterior, rng: &mut R) -> Result<DMatrix<f64>> {
    let d = post.d_z();
    let nu = post.n_s as f64;
    let mut bartlett = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(nu - i as f64).map_err(|_| Error::invalid("degrees of freedom", "non-positive"))?;
        bartlett[(i, i)] = sqrt(chi.sample(rng));
        for j in 0..i {
            bartlett[(i, j)] = StandardNormal.sample(rng);
        }
    }
    // With Psi = L L^T and W = L^{-T} A A^T L^{-1}, Sigma = W^{-1} = X^T X for
    // X = A^{-1} L^T.
    let x = bartlett
        .solve_lower_triangular(&post.psi_chol.transpose())
        .ok_or(Error::Singular("Bartlett factor"))?;
    let mut sigma = x.tr_mul(&x);
    symmetrize(&mut sigma);
    Ok(sigma)
}

/// `xi_hat + L_C u L_Sigma^T`: a matrix-normal draw of the coefficients.
pub fn phi_xi(u_xi: &DMatrix<f64>, sigma: &DMatrix<f64>, post: &RestrictedPosterior) -> Result<DMatrix<f64>> {
    let l_sigma = cholesky_lower(sigma, "Sigma")?;
    phi_xi_factored(u_xi, &l_sigma, post)
}

fn phi_xi_factored(
    u_xi: &DMatrix<f64>,
    l_sigma: &DMatrix<f64>,
    post: &RestrictedPosterior,
) -> Result<DMatrix<f64>> {
    if u_xi.shape() != post.xi_hat.shape() {
        return Err(Error::Dimension {
            what: "u_xi",
            expected: post.d_v(),
            got: u_xi.nrows(),
        });
    }
    if l_sigma.nrows() != post.d_z() {
        return Err(Error::Dimension {
            what: "Sigma",
            expected: post.d_z(),
            got: l_sigma.nrows(),
        });
    }
    Ok(&post.xi_hat + &post.c_chol * u_xi * l_sigma.transpose())
}

/// A draw `(xi, Sigma)` from the restricted posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaDraw {
    pub xi: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    sigma_chol: DMatrix<f64>,
}

impl GammaDraw {
    pub fn new(xi: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if xi.ncols() != sigma.nrows() {
            return Err(Error::Dimension {
                what: "Sigma",
                expected: xi.ncols(),
                got: sigma.nrows(),
            });
        }
        let sigma_chol = cholesky_lower(&sigma, "Sigma")?;
        Ok(Self { xi, sigma, sigma_chol })
    }

    pub fn sigma_factor(&self) -> &DMatrix<f64> {
        &self.sigma_chol
    }
}

/// Missing rows `xi^T v_j + L_Sigma u_j` for the unselected subjects.
pub fn phi_z(u_z: &DMatrix<f64>, gamma: &GammaDraw, cohort: &CohortData) -> Result<DMatrix<f64>> {
    let v = cohort.design_matrix(cohort.unselected());
    phi_z_rows(&v, u_z, gamma)
}

fn phi_z_rows(v: &DMatrix<f64>, u_z: &DMatrix<f64>, gamma: &GammaDraw) -> Result<DMatrix<f64>> {
    if v.ncols() != gamma.xi.nrows() {
        return Err(Error::Dimension {
            what: "design columns",
            expected: gamma.xi.nrows(),
            got: v.ncols(),
        });
    }
    if u_z.shape() != (v.nrows(), gamma.xi.ncols()) {
        return Err(Error::Dimension {
            what: "u_z",
            expected: v.nrows(),
            got: u_z.nrows(),
        });
    }
    let mut out = v * &gamma.xi;
    out.gemm(1.0, u_z, &gamma.sigma_chol.transpose(), 1.0);
    Ok(out)
}

/// Conjugate normal regression model bound to a cohort's unselected rows.
#[derive(Debug, Clone)]
pub struct ConjugateModel {
    posterior: RestrictedPosterior,
    v_missing: DMatrix<f64>,
}

impl ConjugateModel {
    pub fn new(posterior: RestrictedPosterior, cohort: &CohortData) -> Result<Self> {
        let v_missing = cohort.design_matrix(cohort.unselected());
        if v_missing.ncols() != posterior.d_v() || cohort.d_z() != posterior.d_z() {
            return Err(Error::Dimension {
                what: "restricted posterior",
                expected: v_missing.ncols(),
                got: posterior.d_v(),
            });
        }
        Ok(Self { posterior, v_missing })
    }

    pub fn fit(cohort: &CohortData) -> Result<Self> {
        Self::new(fit_restricted_posterior(cohort)?, cohort)
    }

    pub fn posterior(&self) -> &RestrictedPosterior {
        &self.posterior
    }

    /// `(xi, Sigma)` with `xi` driven by the supplied normals.
    pub fn gamma_from<R: Rng + ?Sized>(&self, u_xi: &DMatrix<f64>, rng: &mut R) -> Result<GammaDraw> {
        let sigma = sample_sigma(&self.posterior, rng)?;
        let sigma_chol = cholesky_lower(&sigma, "Sigma")?;
        let xi = phi_xi_factored(u_xi, &sigma_chol, &self.posterior)?;
        Ok(GammaDraw { xi, sigma, sigma_chol })
    }

    pub fn missing_from(&self, u_z: &DMatrix<f64>, gamma: &GammaDraw) -> Result<DMatrix<f64>> {
        phi_z_rows(&self.v_missing, u_z, gamma)
    }
}

impl ImputationModel for ConjugateModel {
    type Gamma = GammaDraw;

    fn missing_rows(&self) -> usize {
        self.v_missing.nrows()
    }

    fn d_z(&self) -> usize {
        self.posterior.d_z()
    }

    fn draw_gamma<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GammaDraw> {
        let u_xi = standard_normal_matrix(self.posterior.d_v(), self.posterior.d_z(), rng);
        self.gamma_from(&u_xi, rng)
    }

    fn impute<R: Rng + ?Sized>(&self, gamma: &GammaDraw, rng: &mut R) -> Result<DMatrix<f64>> {
        let u_z = standard_normal_matrix(self.missing_rows(), self.d_z(), rng);
        self.missing_from(&u_z, gamma)
    }
}

impl NormalInversion for ConjugateModel {
    fn aux_shape(&self) -> (usize, usize) {
        (self.missing_rows(), self.d_z())
    }

    fn invert(&self, gamma: &GammaDraw, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.missing_from(u, gamma)
    }
}
