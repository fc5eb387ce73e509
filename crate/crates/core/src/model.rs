//! Domain types and the unnormalized log joint posterior.
//!
//! Constant convention for [`log_joint`]: every Gaussian and Gamma factor
//! carries its full normalizer, and the Poisson factor includes `-log(y!)`.
//! Two quantities are dropped: the truncation mass of the precision prior on
//! the positive-definite cone and the normalizer of the latent-scale
//! mixture. Neither is needed by any conditional used by the sampler. The
//! latent scales `tau` do not enter the value: the precision prior is
//! evaluated in its double-exponential form with the scales integrated out.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{validation, Error, Result};
use crate::linalg;

/// Relative tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// T×A matrix of non-negative event counts (rows are time steps).
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    values: DMatrix<u64>,
    as_f64: DMatrix<f64>,
}

impl CountMatrix {
    pub fn new(values: DMatrix<u64>) -> Result<Self> {
        if values.nrows() < 1 {
            return validation("count matrix needs at least one time step");
        }
        if values.ncols() < 1 {
            return validation("count matrix needs at least one area");
        }
        let as_f64 = values.map(|v| v as f64);
        Ok(Self { values, as_f64 })
    }

    /// Builds from signed rows, rejecting negative entries by position.
    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self> {
        let t = rows.len();
        if t == 0 {
            return Err(Error::Data("count matrix has no rows".into()));
        }
        let a = rows[0].len();
        let mut m = DMatrix::<u64>::zeros(t, a);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != a {
                return Err(Error::Data(format!(
                    "row {r} has {} columns, expected {a}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if v < 0 {
                    return Err(Error::Data(format!(
                        "negative count {v} at row {r}, column {c}"
                    )));
                }
                m[(r, c)] = v as u64;
            }
        }
        Self::new(m).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn time_steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn areas(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, t: usize, i: usize) -> u64 {
        self.values[(t, i)]
    }

    pub fn values(&self) -> &DMatrix<u64> {
        &self.values
    }

    pub fn as_f64(&self) -> &DMatrix<f64> {
        &self.as_f64
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }
}

/// Averaged potential risks `mu` (length A) and dispersities `z` (T×A).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskState {
    pub mu: DVector<f64>,
    pub z: DMatrix<f64>,
}

impl RiskState {
    pub fn validate(&self) -> Result<()> {
        if self.z.ncols() != self.mu.len() {
            return validation(format!(
                "z has {} columns but mu has length {}",
                self.z.ncols(),
                self.mu.len()
            ));
        }
        if self.mu.iter().chain(self.z.iter()).any(|v| !v.is_finite()) {
            return validation("risk state contains non-finite entries");
        }
        Ok(())
    }
}

/// Precision matrix with the latent off-diagonal scales.
///
/// `tau` is stored as a full symmetric A×A matrix with a zero diagonal;
/// only entries `i < j` are meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    pub omega: DMatrix<f64>,
    pub tau: DMatrix<f64>,
}

impl PrecisionMatrix {
    pub fn new(omega: DMatrix<f64>, tau: DMatrix<f64>) -> Result<Self> {
        let p = Self { omega, tau };
        p.validate()?;
        Ok(p)
    }

    /// Identity precision with unit latent scales.
    pub fn identity(a: usize) -> Self {
        let mut tau = DMatrix::from_element(a, a, 1.0);
        tau.fill_diagonal(0.0);
        Self {
            omega: DMatrix::identity(a, a),
            tau,
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.omega.nrows();
        if self.tau.shape() != (a, a) {
            return validation("tau shape does not match omega");
        }
        if !validate_positive_definite(&self.omega)? {
            return Err(Error::OutOfSupport("precision matrix is not positive definite".into()));
        }
        for i in 0..a {
            for j in (i + 1)..a {
                if !(self.tau[(i, j)] > 0.0) || self.tau[(i, j)] != self.tau[(j, i)] {
                    return validation(format!("tau[{i},{j}] must be positive and symmetric"));
                }
            }
        }
        Ok(())
    }
}

/// Prior and tuning constants shared by every sampler block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Gamma shape of the shrinkage-rate prior.
    pub a_lambda: f64,
    /// Gamma rate of the shrinkage-rate prior.
    pub b_lambda: f64,
    /// Prior variance of each `mu_i`.
    pub sigma2_mu: f64,
    /// Degrees of freedom of the multivariate-t proposals.
    pub nu: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Lower clamp on `|omega_ij|` when forming the latent-scale conditional.
    pub omega_eps: f64,
}

impl Hyperparameters {
    /// Production defaults for an A-dimensional problem: `a_lambda = A`,
    /// `b_lambda = 0.01` (a rate), `sigma2_mu = 0.05`, `nu = 5`.
    pub fn for_dimension(a: usize) -> Self {
        Self {
            a_lambda: a as f64,
            b_lambda: 0.01,
            sigma2_mu: 0.05,
            nu: 5.0,
            newton_tol: 1e-8,
            newton_max_iter: 100,
            omega_eps: 1e-8,
        }
    }

    /// The synthetic-study preset: `(a_lambda, sigma2_mu, nu) = (A, 0.05, 3)`.
    pub fn synthetic_study(a: usize) -> Self {
        Self {
            nu: 3.0,
            ..Self::for_dimension(a)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("a_lambda", self.a_lambda),
            ("b_lambda", self.b_lambda),
            ("sigma2_mu", self.sigma2_mu),
            ("nu", self.nu),
            ("newton_tol", self.newton_tol),
            ("omega_eps", self.omega_eps),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return validation(format!("hyperparameter {name} must be positive and finite, got {v}"));
            }
        }
        if self.newton_max_iter == 0 {
            return validation("hyperparameter newton_max_iter must be positive");
        }
        Ok(())
    }
}

/// One full sampler state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub risk: RiskState,
    pub precision: PrecisionMatrix,
    pub lambda: f64,
    /// Unnormalized log joint posterior of this state, see [`log_joint`].
    pub log_post: f64,
}

impl ChainState {
    /// Builds a state and computes its `log_post`.
    pub fn new(
        y: &CountMatrix,
        risk: RiskState,
        precision: PrecisionMatrix,
        lambda: f64,
        h: &Hyperparameters,
    ) -> Result<Self> {
        let mut s = Self {
            risk,
            precision,
            lambda,
            log_post: f64::NAN,
        };
        s.log_post = log_joint(y, &s, h)?;
        Ok(s)
    }

    /// Moment-matched start: `mu_i = log((1 + sum_t y_ti) / T)`, `Z = 0`,
    /// `Omega = I`, unit latent scales, `lambda = 1`.
    pub fn initial(y: &CountMatrix, h: &Hyperparameters) -> Result<Self> {
        let (t, a) = (y.time_steps(), y.areas());
        let mu = DVector::from_iterator(
            a,
            (0..a).map(|i| {
                let col: u64 = (0..t).map(|r| y.get(r, i)).sum();
                ((1.0 + col as f64) / t as f64).ln()
            }),
        );
        let risk = RiskState {
            mu,
            z: DMatrix::zeros(t, a),
        };
        Self::new(y, risk, PrecisionMatrix::identity(a), 1.0, h)
    }

    pub fn refresh_log_post(&mut self, y: &CountMatrix, h: &Hyperparameters) -> Result<()> {
        self.log_post = log_joint(y, self, h)?;
        Ok(())
    }
}

/// True iff `m` is symmetric positive definite (Cholesky pivots all above
/// [`linalg::PIVOT_TOL`]). Errors when `m` is not square or not symmetric.
pub fn validate_positive_definite(m: &DMatrix<f64>) -> Result<bool> {
    if m.nrows() != m.ncols() {
        return validation(format!("matrix is {}x{}, not square", m.nrows(), m.ncols()));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
            if !((a - b).abs() <= SYMMETRY_TOL * scale) {
                return validation(format!("matrix is not symmetric at entry ({i},{j}): {a} vs {b}"));
            }
        }
    }
    Ok(linalg::cholesky_lower(m).is_some())
}

/// Per-factor decomposition of the log joint posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogJointTerms {
    pub poisson: f64,
    pub mu_prior: f64,
    pub z_prior: f64,
    pub omega_prior: f64,
    pub lambda_prior: f64,
}

impl LogJointTerms {
    pub fn total(&self) -> f64 {
        self.poisson + self.mu_prior + self.z_prior + self.omega_prior + self.lambda_prior
    }
}

/// `log y!` via the log-gamma function.
pub fn log_factorial(y: u64) -> f64 {
    ln_gamma(y as f64 + 1.0)
}

pub fn log_joint_terms(
    y: &CountMatrix,
    risk: &RiskState,
    precision: &PrecisionMatrix,
    lambda: f64,
    h: &Hyperparameters,
) -> Result<LogJointTerms> {
    let (t, a) = (y.time_steps(), y.areas());
    if risk.mu.len() != a || risk.z.shape() != (t, a) || precision.dim() != a {
        return validation(format!(
            "dimension mismatch: counts {t}x{a}, mu {}, z {}x{}, omega {}",
            risk.mu.len(),
            risk.z.nrows(),
            risk.z.ncols(),
            precision.dim()
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::OutOfSupport(format!("lambda = {lambda} is not positive")));
    }
    validate_positive_definite(&precision.omega)?;
    let chol = linalg::cholesky_lower(&precision.omega)
        .ok_or_else(|| Error::OutOfSupport("precision matrix is not positive definite".into()))?;
    let omega = &precision.omega;

    let mut poisson = 0.0;
    for r in 0..t {
        for i in 0..a {
            let eta = risk.mu[i] + risk.z[(r, i)];
            let yv = y.get(r, i);
            poisson += yv as f64 * eta - eta.exp() - log_factorial(yv);
        }
    }

    let s2 = h.sigma2_mu;
    let mu_prior = -0.5 * a as f64 * (2.0 * PI * s2).ln() - risk.mu.norm_squared() / (2.0 * s2);

    let mut quad = 0.0;
    for r in 0..t {
        let zt = risk.z.row(r).transpose();
        quad += (omega * &zt).dot(&zt);
    }
    let z_prior = 0.5 * t as f64 * linalg::cholesky_log_det(&chol)
        - 0.5 * (t * a) as f64 * (2.0 * PI).ln()
        - 0.5 * quad;

    let (off_l1, diag_sum) = omega_penalty_parts(omega);
    let n_free = (a * (a + 1) / 2) as f64;
    let omega_prior = n_free * (lambda / 2.0).ln() - lambda * (off_l1 + 0.5 * diag_sum);

    let lambda_prior = h.a_lambda * h.b_lambda.ln() - ln_gamma(h.a_lambda)
        + (h.a_lambda - 1.0) * lambda.ln()
        - h.b_lambda * lambda;

    Ok(LogJointTerms {
        poisson,
        mu_prior,
        z_prior,
        omega_prior,
        lambda_prior,
    })
}

/// `(sum_{i<j} |omega_ij|, sum_i omega_ii)`.
pub fn omega_penalty_parts(omega: &DMatrix<f64>) -> (f64, f64) {
    let a = omega.nrows();
    let mut off = 0.0;
    let mut diag = 0.0;
    for i in 0..a {
        diag += omega[(i, i)];
        for j in (i + 1)..a {
            off += omega[(i, j)].abs();
        }
    }
    (off, diag)
}

/// Unnormalized log joint posterior of `(mu, Z, Omega, lambda)` given `y`.
///
/// Returns [`Error::OutOfSupport`] instead of `-inf` when `Omega` is not
/// positive definite or `lambda <= 0`.
pub fn log_joint(y: &CountMatrix, s: &ChainState, h: &Hyperparameters) -> Result<f64> {
    Ok(log_joint_terms(y, &s.risk, &s.precision, s.lambda, h)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(mu: Vec<f64>, z: DMatrix<f64>, omega: DMatrix<f64>, lambda: f64) -> ChainState {
        let a = mu.len();
        let mut p = PrecisionMatrix::identity(a);
        p.omega = omega;
        ChainState {
            risk: RiskState {
                mu: DVector::from_vec(mu),
                z,
            },
            precision: p,
            lambda,
            log_post: 0.0,
        }
    }

    #[test]
    fn pd_check_examples() {
        assert!(validate_positive_definite(&DMatrix::identity(3, 3)).unwrap());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(!validate_positive_definite(&m).unwrap());
    }

    #[test]
    fn pd_check_rejects_bad_shapes() {
        let err = validate_positive_definite(&DMatrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        let err = validate_positive_definite(&m).unwrap_err();
        assert!(err.to_string().contains("(0,1)"), "{err}");
    }

    #[test]
    fn pd_check_agrees_with_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen = [0usize; 2];
        for _ in 0..100 {
            let b = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let shift = rng.random_range(-0.5..2.5);
            let m = (&b + b.transpose()) * 0.5 + DMatrix::identity(6, 6) * shift;
            let min_eig: f64 = SymmetricEigen::new(m.clone()).eigenvalues.min();
            if min_eig.abs() < 1e-9 {
                continue;
            }
            let pd = validate_positive_definite(&m).unwrap();
            assert_eq!(pd, min_eig > 0.0);
            seen[pd as usize] += 1;
        }
        assert!(seen[0] > 10 && seen[1] > 10, "{seen:?}");
    }

    #[test]
    fn single_cell_poisson_term() {
        let y = CountMatrix::from_rows(&[vec![0]]).unwrap();
        let s = state(vec![0.0], DMatrix::zeros(1, 1), DMatrix::identity(1, 1), 1.0);
        let h = Hyperparameters::for_dimension(1);
        let terms = log_joint_terms(&y, &s.risk, &s.precision, s.lambda, &h).unwrap();
        assert!((terms.poisson + 1.0).abs() < 1e-14);
        assert!(log_joint(&y, &s, &h).unwrap().is_finite());
    }

    #[test]
    fn doubling_count_shifts_by_log_two() {
        let h = Hyperparameters::for_dimension(2);
        let s = state(vec![0.0, 0.3], DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 1.0);
        let y1 = CountMatrix::from_rows(&[vec![1, 4], vec![0, 2]]).unwrap();
        let y2 = CountMatrix::from_rows(&[vec![2, 4], vec![0, 2]]).unwrap();
        let d = log_joint(&y2, &s, &h).unwrap() - log_joint(&y1, &s, &h).unwrap();
        assert!((d + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_pd_is_out_of_support() {
        let y = CountMatrix::from_rows(&[vec![1, 1]]).unwrap();
        let s = state(
            vec![0.0, 0.0],
            DMatrix::zeros(1, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            1.0,
        );
        let err = log_joint(&y, &s, &Hyperparameters::for_dimension(2)).unwrap_err();
        assert!(matches!(err, Error::OutOfSupport(_)));
    }

    // Each factor coded from textbook densities, independent of log_joint_terms.
    fn oracle(y: &[Vec<i64>], s: &ChainState, h: &Hyperparameters) -> f64 {
        use statrs::distribution::{Continuous, Discrete, Gamma, MultivariateNormal, Normal, Poisson};
        let a = s.risk.mu.len();
        let mut total = 0.0;
        for (t, row) in y.iter().enumerate() {
            for i in 0..a {
                let rate = (s.risk.mu[i] + s.risk.z[(t, i)]).exp();
                total += Poisson::new(rate).unwrap().ln_pmf(row[i] as u64);
            }
        }
        let nmu = Normal::new(0.0, h.sigma2_mu.sqrt()).unwrap();
        total += s.risk.mu.iter().map(|&m| nmu.ln_pdf(m)).sum::<f64>();
        let cov = s.precision.omega.clone().try_inverse().unwrap();
        let cov = (&cov + cov.transpose()) * 0.5;
        let mvn = MultivariateNormal::new(vec![0.0; a], cov.as_slice().to_vec()).unwrap();
        for t in 0..y.len() {
            let zt: Vec<f64> = s.risk.z.row(t).iter().copied().collect();
            total += mvn.ln_pdf(&nalgebra::DVector::from_vec(zt));
        }
        let lam = s.lambda;
        for i in 0..a {
            // exponential with rate lambda/2
            total += (lam / 2.0).ln() - lam / 2.0 * s.precision.omega[(i, i)];
            for j in (i + 1)..a {
                // double exponential with rate lambda
                total += (lam / 2.0).ln() - lam * s.precision.omega[(i, j)].abs();
            }
        }
        total += Gamma::new(h.a_lambda, h.b_lambda).unwrap().ln_pdf(lam);
        total
    }

    #[test]
    fn log_joint_matches_per_factor_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (t, a) = (3, 4);
            let rows: Vec<Vec<i64>> = (0..t)
                .map(|_| (0..a).map(|_| rng.random_range(0..6)).collect())
                .collect();
            let y = CountMatrix::from_rows(&rows).unwrap();
            let b = DMatrix::from_fn(a, a, |_, _| rng.random_range(-0.5..0.5));
            let omega = &b * b.transpose() + DMatrix::identity(a, a);
            let s = state(
                (0..a).map(|_| rng.random_range(-1.0..1.0)).collect(),
                DMatrix::from_fn(t, a, |_, _| rng.random_range(-1.0..1.0)),
                omega,
                rng.random_range(0.2..3.0),
            );
            let h = Hyperparameters {
                a_lambda: 2.5,
                b_lambda: 0.7,
                ..Hyperparameters::for_dimension(a)
            };
            let got = log_joint(&y, &s, &h).unwrap();
            let want = oracle(&rows, &s, &h);
            assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn omega_prior_decreases_in_diagonal() {
        let y = CountMatrix::from_rows(&[vec![1, 2, 0]]).unwrap();
        let h = Hyperparameters::for_dimension(3);
        let base = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.5, -0.2, 0.0, -0.2, 1.0]);
        let s = state(vec![0.1, 0.0, -0.2], DMatrix::zeros(1, 3), base.clone(), 1.7);
        let t0 = log_joint_terms(&y, &s.risk, &s.precision, s.lambda, &h).unwrap();
        for i in 0..3 {
            let mut bumped = s.clone();
            bumped.precision.omega[(i, i)] += 0.25;
            let t1 = log_joint_terms(&y, &bumped.risk, &bumped.precision, bumped.lambda, &h).unwrap();
            assert!(t1.omega_prior < t0.omega_prior);
            assert_eq!(t1.poisson, t0.poisson);
            assert_eq!(t1.lambda_prior, t0.lambda_prior);
        }
    }

    #[test]
    fn negative_count_is_rejected_with_position() {
        let err = CountMatrix::from_rows(&[vec![1, 2], vec![3, -1]]).unwrap_err();
        assert!(err.to_string().contains("row 1, column 1"), "{err}");
    }

    #[test]
    fn initial_state_is_moment_matched() {
        let y = CountMatrix::from_rows(&[vec![1, 0], vec![3, 0]]).unwrap();
        let s = ChainState::initial(&y, &Hyperparameters::for_dimension(2)).unwrap();
        assert!((s.risk.mu[0] - (5.0f64 / 2.0).ln()).abs() < 1e-15);
        assert!((s.risk.mu[1] - (0.5f64).ln()).abs() < 1e-15);
        assert_eq!(s.lambda, 1.0);
        assert!(s.log_post.is_finite());
    }

    proptest::proptest! {
        #[test]
        fn changing_one_count_changes_one_poisson_term(
            t in 0usize..3, i in 0usize..3, old in 0i64..20, new in 0i64..20, eta in -2.0f64..2.0
        ) {
            let mut rows = vec![vec![1i64, 2, 3]; 3];
            rows[t][i] = old;
            let y0 = CountMatrix::from_rows(&rows).unwrap();
            rows[t][i] = new;
            let y1 = CountMatrix::from_rows(&rows).unwrap();
            let mut z = DMatrix::zeros(3, 3);
            z[(t, i)] = eta;
            let s = state(vec![0.0; 3], z, DMatrix::identity(3, 3), 1.0);
            let h = Hyperparameters::for_dimension(3);
            let d = log_joint(&y1, &s, &h).unwrap() - log_joint(&y0, &s, &h).unwrap();
            let expect = (new - old) as f64 * eta - log_factorial(new as u64) + log_factorial(old as u64);
            proptest::prop_assert!((d - expect).abs() < 1e-9);
        }
    }
}
