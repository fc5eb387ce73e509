//! Seeded random variates and log densities used by the samplers.
//!
//! Every sampler draws from an [`RngStream`], a ChaCha8 generator keyed by
//! `(seed, stream_id)`. Distinct stream ids give non-overlapping streams of
//! the same seed, so each chain owns one.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::error::{validation, Error, Result};
use crate::linalg;

/// Reproducible random stream: identical `(seed, stream_id)` replays
/// identical draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| self.standard_normal()))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `mean + L g` with `g` standard normal.
pub fn sample_mvn(
    mean: &DVector<f64>,
    covariance_factor: &DMatrix<f64>,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let n = mean.len();
    if covariance_factor.shape() != (n, n) {
        return validation(format!(
            "covariance factor is {}x{}, mean has length {n}",
            covariance_factor.nrows(),
            covariance_factor.ncols()
        ));
    }
    let g = rng.normal_vector(n);
    Ok(mean + covariance_factor * g)
}

/// Multivariate-t proposal. The Cholesky factor and log-determinant of the
/// scale are computed once at construction.
#[derive(Debug, Clone)]
pub struct MvtProposal {
    location: DVector<f64>,
    scale: DMatrix<f64>,
    dof: f64,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl MvtProposal {
    pub fn new(location: DVector<f64>, scale: DMatrix<f64>, dof: f64) -> Result<Self> {
        if !(dof > 0.0) {
            return validation(format!("degrees of freedom must be positive, got {dof}"));
        }
        let n = location.len();
        if scale.shape() != (n, n) {
            return validation("scale shape does not match location length");
        }
        let chol = linalg::cholesky_lower(&scale)
            .ok_or_else(|| Error::Numeric("multivariate-t scale is not positive definite".into()))?;
        let log_det = linalg::cholesky_log_det(&chol);
        Ok(Self {
            location,
            scale,
            dof,
            chol,
            log_det,
        })
    }

    pub fn location(&self) -> &DVector<f64> {
        &self.location
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    /// Deterministic map `location + L g / sqrt(w / dof)` from a standard
    /// normal vector and a chi-square mixing draw.
    pub fn transform(&self, g: &DVector<f64>, w: f64) -> DVector<f64> {
        &self.location + (&self.chol * g) / (w / self.dof).sqrt()
    }
}

pub fn sample_mvt(p: &MvtProposal, rng: &mut RngStream) -> Result<DVector<f64>> {
    let g = rng.normal_vector(p.dim());
    let w = sample_chi_square(p.dof, rng)?;
    Ok(p.transform(&g, w))
}

/// Multivariate-t log density with its normalizer.
pub fn logpdf_mvt(x: &DVector<f64>, p: &MvtProposal) -> f64 {
    let n = p.dim() as f64;
    let nu = p.dof;
    let d = x - &p.location;
    let u = linalg::solve_lower(&p.chol, &d);
    let maha = u.norm_squared();
    ln_gamma(0.5 * (nu + n)) - ln_gamma(0.5 * nu) - 0.5 * n * (nu * PI).ln() - 0.5 * p.log_det
        - 0.5 * (nu + n) * (maha / nu).ln_1p()
}

/// Gamma(shape, rate) by Marsaglia–Tsang squeeze; shapes below one are
/// boosted via `G(shape + 1) * U^(1/shape)`.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return validation(format!("gamma parameters must be positive, got shape={shape}, rate={rate}"));
    }
    Ok(standard_gamma(shape, rng) / rate)
}

fn standard_gamma(shape: f64, rng: &mut RngStream) -> f64 {
    if shape < 1.0 {
        let u = rng.uniform_open();
        return standard_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x = rng.standard_normal();
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u = rng.uniform_open();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Chi-square with `dof` degrees of freedom, as Gamma(dof/2, rate 1/2).
pub fn sample_chi_square(dof: f64, rng: &mut RngStream) -> Result<f64> {
    sample_gamma(0.5 * dof, 0.5, rng)
}

/// Inverse-Gaussian(mean, shape) by the Michael–Schucany–Haas
/// transformation: one normal and one uniform per draw.
pub fn sample_inverse_gaussian(mean: f64, shape: f64, rng: &mut RngStream) -> Result<f64> {
    if !(mean > 0.0 && mean.is_finite()) || !(shape > 0.0 && shape.is_finite()) {
        return validation(format!(
            "inverse-Gaussian parameters must be positive, got mean={mean}, shape={shape}"
        ));
    }
    let n = rng.standard_normal();
    let phi = mean * n * n / (2.0 * shape);
    // Smaller root of the quadratic, written without cancellation.
    let x = mean / (1.0 + phi + (phi * (phi + 2.0)).sqrt());
    let u = rng.uniform_open();
    let draw = if u * (mean + x) <= mean { x } else { mean * mean / x };
    Ok(draw.max(f64::MIN_POSITIVE))
}

/// Largest rate handed to the exact Poisson sampler; above it the count is
/// drawn from the normal approximation, which is exact to far below one
/// count's resolution at that scale.
pub const POISSON_EXACT_MAX: f64 = 1e15;

/// Poisson count. Errors when the rate is not finite or the draw would not
/// fit in a `u64`.
pub fn sample_poisson(rate: f64, rng: &mut RngStream) -> Result<u64> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::Numeric(format!("poisson rate {rate} is not finite and non-negative")));
    }
    if rate == 0.0 {
        return Ok(0);
    }
    if rate <= POISSON_EXACT_MAX {
        let d = rand_distr::Poisson::new(rate).map_err(|e| Error::Numeric(format!("poisson rate {rate}: {e}")))?;
        let v: f64 = rand_distr::Distribution::sample(&d, rng);
        return Ok(v as u64);
    }
    let v = (rate + rate.sqrt() * rng.standard_normal()).round();
    if v >= u64::MAX as f64 {
        return Err(Error::Numeric(format!("poisson rate {rate} exceeds the count range")));
    }
    Ok(v as u64)
}

/// Inverse-Gaussian CDF.
pub fn inverse_gaussian_cdf(x: f64, mean: f64, shape: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let r = (shape / x).sqrt();
    let phi = |v: f64| 0.5 * statrs::function::erf::erfc(-v / std::f64::consts::SQRT_2);
    phi(r * (x / mean - 1.0)) + (2.0 * shape / mean).exp() * phi(-r * (x / mean + 1.0))
}
