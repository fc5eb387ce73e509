//! Block Gibbs updates for the graphical-lasso layer `(tau, Omega, lambda)`
//! given the latent Gaussian rows `Z`.
//!
//! Column updates follow the data-augmented scheme: with row/column `i`
//! moved last, the off-diagonal block `beta = omega_12` is Gaussian and the
//! Schur complement `gamma = omega_22 - beta' Omega_11^-1 beta` is Gamma, so
//! every update stays positive definite.
//!
//! `lambda` is drawn from its conditional with the latent scales integrated
//! out. Since `tau` is redrawn from its own conditional before it is next
//! read, the pair `(lambda, tau)` is effectively a joint draw.

use nalgebra::{DMatrix, DVector};

use crate::dist::{sample_gamma, sample_inverse_gaussian, RngStream};
use crate::error::{validation, Error, Result};
use crate::linalg;
use crate::model::{omega_penalty_parts, ChainState, CountMatrix, Hyperparameters, PrecisionMatrix};

/// `Z'Z` and the number of rows that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMatrix {
    pub s: DMatrix<f64>,
    pub n: usize,
}

impl ScatterMatrix {
    pub fn from_rows(z: &DMatrix<f64>) -> Self {
        let mut s = z.transpose() * z;
        linalg::symmetrize(&mut s);
        Self { s, n: z.nrows() }
    }
}

/// Redraws every latent scale: `1/tau_ij ~ InverseGaussian(lambda/|omega_ij|, lambda^2)`.
///
/// `|omega_ij|` is clamped below at `h.omega_eps`.
pub fn update_tau(
    precision: &PrecisionMatrix,
    lambda: f64,
    h: &Hyperparameters,
    rng: &mut RngStream,
) -> Result<PrecisionMatrix> {
    if !(lambda > 0.0) {
        return validation(format!("lambda must be positive, got {lambda}"));
    }
    let a = precision.dim();
    let mut out = precision.clone();
    let shape = lambda * lambda;
    for i in 0..a {
        for j in (i + 1)..a {
            let w = precision.omega[(i, j)].abs().max(h.omega_eps);
            let u = sample_inverse_gaussian(lambda / w, shape, rng)?;
            let tau = 1.0 / u;
            out.tau[(i, j)] = tau;
            out.tau[(j, i)] = tau;
        }
    }
    Ok(out)
}

/// Gibbs update of row/column `i` (zero-based) of `Omega`.
pub fn update_omega_column(
    i: usize,
    scatter: &ScatterMatrix,
    precision: &PrecisionMatrix,
    lambda: f64,
    rng: &mut RngStream,
) -> Result<PrecisionMatrix> {
    let a = precision.dim();
    if i >= a {
        return validation(format!("column index {i} out of range for dimension {a}"));
    }
    if scatter.s.shape() != (a, a) {
        return validation("scatter matrix shape does not match precision");
    }
    if !(lambda > 0.0) {
        return validation(format!("lambda must be positive, got {lambda}"));
    }
    let mut sampler = ColumnSampler::new(precision)?;
    sampler.update(i, scatter, lambda, rng)?;
    Ok(sampler.into_precision())
}

/// Column sampler that carries `Sigma = Omega^-1` across consecutive column
/// updates, so `Omega_11^-1` costs O(A^2) per column.
struct ColumnSampler {
    omega: DMatrix<f64>,
    tau: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl ColumnSampler {
    fn new(precision: &PrecisionMatrix) -> Result<Self> {
        let chol = linalg::cholesky_lower(&precision.omega)
            .ok_or_else(|| Error::Numeric("precision matrix is not positive definite".into()))?;
        Ok(Self {
            omega: precision.omega.clone(),
            tau: precision.tau.clone(),
            sigma: linalg::cholesky_inverse(&chol),
        })
    }

    fn into_precision(self) -> PrecisionMatrix {
        PrecisionMatrix {
            omega: self.omega,
            tau: self.tau,
        }
    }

    fn update(&mut self, i: usize, scatter: &ScatterMatrix, lambda: f64, rng: &mut RngStream) -> Result<()> {
        let a = self.omega.nrows();
        let s_ii = scatter.s[(i, i)];
        let gamma_shape = 0.5 * scatter.n as f64 + 1.0;
        let gamma_rate = 0.5 * (s_ii + lambda);

        if a == 1 {
            let gamma = sample_gamma(gamma_shape, gamma_rate, rng)?;
            self.omega[(0, 0)] = gamma;
            self.sigma[(0, 0)] = 1.0 / gamma;
            return Ok(());
        }

        let rest: Vec<usize> = (0..a).filter(|&k| k != i).collect();
        let m = rest.len();
        let sigma_22 = self.sigma[(i, i)];
        let sigma_12 = DVector::from_iterator(m, rest.iter().map(|&k| self.sigma[(k, i)]));
        let mut omega11_inv = DMatrix::from_fn(m, m, |r, c| self.sigma[(rest[r], rest[c])]);
        omega11_inv -= &sigma_12 * sigma_12.transpose() / sigma_22;
        linalg::symmetrize(&mut omega11_inv);

        let s_12 = DVector::from_iterator(m, rest.iter().map(|&k| scatter.s[(k, i)]));
        let mut c_inv = &omega11_inv * (s_ii + lambda);
        for (r, &k) in rest.iter().enumerate() {
            c_inv[(r, r)] += 1.0 / self.tau[(k.min(i), k.max(i))];
        }
        let chol = linalg::cholesky_lower(&c_inv).ok_or_else(|| {
            Error::Numeric(format!("column {i}: conditional precision of the off-diagonal block is singular"))
        })?;
        let mean = -linalg::cholesky_solve(&chol, &s_12);
        let g = rng.normal_vector(m);
        let beta = mean + linalg::solve_lower_transpose(&chol, &g);
        let gamma = sample_gamma(gamma_shape, gamma_rate, rng)?;

        let c = &omega11_inv * &beta;
        for (r, &k) in rest.iter().enumerate() {
            self.omega[(k, i)] = beta[r];
            self.omega[(i, k)] = beta[r];
        }
        self.omega[(i, i)] = gamma + beta.dot(&c);

        let new11 = omega11_inv + &c * c.transpose() / gamma;
        for (r, &kr) in rest.iter().enumerate() {
            for (q, &kq) in rest.iter().enumerate() {
                self.sigma[(kr, kq)] = new11[(r, q)];
            }
            self.sigma[(kr, i)] = -c[r] / gamma;
            self.sigma[(i, kr)] = -c[r] / gamma;
        }
        self.sigma[(i, i)] = 1.0 / gamma;
        Ok(())
    }
}

/// Shape and rate of the Gamma conditional of `lambda` given `Omega`.
pub fn lambda_conditional(precision: &PrecisionMatrix, h: &Hyperparameters) -> (f64, f64) {
    let a = precision.dim();
    let (off, diag) = omega_penalty_parts(&precision.omega);
    (
        h.a_lambda + (a * (a + 1) / 2) as f64,
        h.b_lambda + off + 0.5 * diag,
    )
}

pub fn update_lambda(precision: &PrecisionMatrix, h: &Hyperparameters, rng: &mut RngStream) -> Result<f64> {
    let (shape, rate) = lambda_conditional(precision, h);
    sample_gamma(shape, rate, rng)
}

/// One block-Gibbs pass: latent scales, then columns `0..A` in order, then
/// `lambda`, using the current `Z` of `state`. The returned state has a
/// refreshed `log_post`.
pub fn bgl_sweep(
    y: &CountMatrix,
    state: &ChainState,
    h: &Hyperparameters,
    rng: &mut RngStream,
) -> Result<ChainState> {
    let scatter = ScatterMatrix::from_rows(&state.risk.z);
    let precision = update_tau(&state.precision, state.lambda, h, rng)?;
    let mut sampler = ColumnSampler::new(&precision)?;
    for i in 0..precision.dim() {
        sampler.update(i, &scatter, state.lambda, rng)?;
    }
    let precision = sampler.into_precision();
    let lambda = update_lambda(&precision, h, rng)?;
    ChainState::new(y, state.risk.clone(), precision, lambda, h)
}
