//! Full MCMC runs and the Geweke joint-distribution check.
//!
//! Each sweep runs the risk block (`mu`, then every `z_t`) followed by the
//! graphical-lasso block (`tau`, columns of `Omega`, `lambda`).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bgl::{bgl_sweep, update_tau};
use crate::dist::{sample_gamma, sample_mvn, sample_poisson, RngStream};
use crate::error::{validation, Error, Result};
use crate::linalg;
use crate::model::{ChainState, CountMatrix, Hyperparameters, PrecisionMatrix, RiskState};
use crate::posterior::{AcceptCounts, Trace};
use crate::risk::{risk_sweep, BlockOutcome};

/// Sweeps per window of the Newton-failure guard.
pub const FAILURE_WINDOW: usize = 100;
/// Largest tolerated fraction of failed blocks within one window.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub hyper: Hyperparameters,
    /// Keep `Z` in retained states.
    pub keep_z: bool,
}

impl RunConfig {
    /// 15000 sweeps, 5000 burn-in, thinning 10, one chain.
    pub fn new(hyper: Hyperparameters) -> Self {
        Self {
            iterations: 15_000,
            burn_in: 5_000,
            thin: 10,
            chains: 1,
            seed: 0,
            hyper,
            keep_z: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return validation(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 {
            return validation("thin must be at least 1");
        }
        if self.chains == 0 {
            return validation("chains must be at least 1");
        }
        self.hyper.validate()
    }

    pub fn retained_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn retains(&self, sweep: usize) -> bool {
        sweep > self.burn_in && (sweep - self.burn_in) % self.thin == 0
    }
}

/// Runs `cfg.chains` chains in parallel; chain `k` draws from stream
/// `(cfg.seed, k)`.
pub fn fit(y: &CountMatrix, cfg: &RunConfig) -> Result<Vec<Trace>> {
    cfg.validate()?;
    (0..cfg.chains as u64)
        .into_par_iter()
        .map(|chain| fit_chain(y, cfg, chain))
        .collect()
}

pub fn fit_chain(y: &CountMatrix, cfg: &RunConfig, chain: u64) -> Result<Trace> {
    cfg.validate()?;
    let h = &cfg.hyper;
    let mut rng = RngStream::new(cfg.seed, chain);
    let mut state = ChainState::initial(y, h)?;
    let mut accept = AcceptCounts::new(y.time_steps());
    let mut samples = Vec::with_capacity(cfg.retained_count());
    let (mut window_failures, mut window_blocks) = (0usize, 0usize);

    for sweep in 1..=cfg.iterations {
        let (next, stats) = risk_sweep(y, &state, h, &mut rng)?;
        for (k, b) in stats.blocks.iter().enumerate() {
            let (acc, att) = if k == 0 {
                (&mut accept.mu_accepted, &mut accept.mu_attempted)
            } else {
                (&mut accept.z_accepted[k - 1], &mut accept.z_attempted[k - 1])
            };
            *att += 1;
            match b {
                BlockOutcome::Accepted => *acc += 1,
                BlockOutcome::Rejected => {}
                BlockOutcome::NewtonFailed => accept.newton_failures += 1,
            }
        }
        window_failures += stats.newton_failures();
        window_blocks += stats.blocks.len();
        if sweep % FAILURE_WINDOW == 0 {
            if window_failures as f64 > MAX_FAILURE_FRACTION * window_blocks as f64 {
                return Err(Error::Numeric(format!(
                    "chain {chain}: Newton failed on {window_failures} of {window_blocks} blocks in sweeps {}..{sweep}; \
                     try a smaller nu or a better initialization",
                    sweep + 1 - FAILURE_WINDOW
                )));
            }
            window_failures = 0;
            window_blocks = 0;
        }

        state = bgl_sweep(y, &next, h, &mut rng)?;
        if cfg.retains(sweep) {
            let mut kept = state.clone();
            if !cfg.keep_z {
                kept.risk.z = DMatrix::zeros(0, y.areas());
            }
            samples.push(kept);
        }
    }
    Ok(Trace {
        samples,
        accept,
        config: *cfg,
        chain,
        z_retained: cfg.keep_z,
    })
}

/// Transition kernel used by the successive-conditional simulator.
pub type Kernel<'a> = dyn Fn(&CountMatrix, &ChainState, &Hyperparameters, &mut RngStream) -> Result<ChainState> + Sync + 'a;

/// The production kernel: risk sweep then block-Gibbs sweep.
pub fn default_kernel(y: &CountMatrix, s: &ChainState, h: &Hyperparameters, rng: &mut RngStream) -> Result<ChainState> {
    let (next, _) = risk_sweep(y, s, h, rng)?;
    bgl_sweep(y, &next, h, rng)
}

/// Draws `(lambda, Omega, tau, mu, Z)` from the prior. `Omega` is drawn by
/// rejection from the untruncated exponential/double-exponential product.
pub fn sample_prior(areas: usize, time_steps: usize, h: &Hyperparameters, rng: &mut RngStream) -> Result<(RiskState, PrecisionMatrix, f64)> {
    let lambda = sample_gamma(h.a_lambda, h.b_lambda, rng)?;
    let omega = loop {
        let mut m = DMatrix::zeros(areas, areas);
        for i in 0..areas {
            m[(i, i)] = sample_gamma(1.0, 0.5 * lambda, rng)?;
            for j in (i + 1)..areas {
                let mag = sample_gamma(1.0, lambda, rng)?;
                let v = if rng.uniform_open() < 0.5 { -mag } else { mag };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        if linalg::cholesky_lower(&m).is_some() {
            break m;
        }
    };
    let mut precision = PrecisionMatrix::identity(areas);
    precision.omega = omega;
    let precision = update_tau(&precision, lambda, h, rng)?;

    let mu = DVector::from_iterator(areas, (0..areas).map(|_| h.sigma2_mu.sqrt() * rng.standard_normal()));
    let chol = linalg::cholesky_lower(&precision.omega).ok_or_else(|| Error::Numeric("prior precision not PD".into()))?;
    let cov_chol = linalg::cholesky_lower(&linalg::cholesky_inverse(&chol))
        .ok_or_else(|| Error::Numeric("prior covariance not PD".into()))?;
    let zero = DVector::zeros(areas);
    let mut z = DMatrix::zeros(time_steps, areas);
    for t in 0..time_steps {
        z.set_row(t, &sample_mvn(&zero, &cov_chol, rng)?.transpose());
    }
    Ok((RiskState { mu, z }, precision, lambda))
}

/// `y_ti ~ Poisson(exp(mu_i + z_ti))`.
pub fn sample_counts(risk: &RiskState, rng: &mut RngStream) -> Result<CountMatrix> {
    let (t, a) = (risk.z.nrows(), risk.z.ncols());
    let mut y = DMatrix::<u64>::zeros(t, a);
    for r in 0..t {
        for i in 0..a {
            y[(r, i)] = sample_poisson((risk.mu[i] + risk.z[(r, i)]).exp(), rng)?;
        }
    }
    CountMatrix::new(y)
}

/// Statistic recorded by the Geweke check.
pub const GEWEKE_STATISTICS: [&str; 5] = ["omega_11", "omega_12", "lambda", "mu_1", "z_11"];

fn geweke_statistics(risk: &RiskState, precision: &PrecisionMatrix, lambda: f64) -> [f64; 5] {
    [
        precision.omega[(0, 0)],
        precision.omega[(0, 1)],
        lambda,
        risk.mu[0],
        risk.z[(0, 0)],
    ]
}

/// Batches used for the successive-conditional standard error.
pub const GEWEKE_BATCHES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GewekeStat {
    pub name: String,
    /// 1 for the mean, 2 for the raw second moment.
    pub moment: u32,
    pub marginal_mean: f64,
    pub successive_mean: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GewekeReport {
    pub draws: usize,
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().fold(0.0, |m, s| m.max(s.z_score.abs()))
    }
}

/// Geweke check with the production kernel.
pub fn geweke_check(cfg: &RunConfig, areas: usize, time_steps: usize, draws: usize) -> Result<GewekeReport> {
    geweke_check_with(cfg, areas, time_steps, draws, &default_kernel)
}

/// Compares the marginal-conditional simulator (fresh prior and data each
/// draw) with the successive-conditional simulator (one kernel transition,
/// then fresh data) on the mean and second moment of each statistic in
/// [`GEWEKE_STATISTICS`].
///
/// The marginal side uses the iid standard error; the successive side uses
/// batch means over [`GEWEKE_BATCHES`] batches.
pub fn geweke_check_with(
    cfg: &RunConfig,
    areas: usize,
    time_steps: usize,
    draws: usize,
    kernel: &Kernel<'_>,
) -> Result<GewekeReport> {
    cfg.hyper.validate()?;
    if areas < 2 || time_steps < 1 {
        return validation("geweke check needs A >= 2 and T >= 1");
    }
    if draws < 2 * GEWEKE_BATCHES {
        return validation(format!("geweke check needs at least {} draws", 2 * GEWEKE_BATCHES));
    }
    let h = &cfg.hyper;
    let (marginal, successive) = rayon::join(
        || -> Result<Vec<[f64; 5]>> {
            let mut rng = RngStream::new(cfg.seed, 0);
            (0..draws)
                .map(|_| {
                    let (risk, precision, lambda) = sample_prior(areas, time_steps, h, &mut rng)?;
                    sample_counts(&risk, &mut rng)?;
                    Ok(geweke_statistics(&risk, &precision, lambda))
                })
                .collect()
        },
        || -> Result<Vec<[f64; 5]>> {
            let mut rng = RngStream::new(cfg.seed, 1);
            let (risk, precision, lambda) = sample_prior(areas, time_steps, h, &mut rng)?;
            let mut y = sample_counts(&risk, &mut rng)?;
            let mut state = ChainState::new(&y, risk, precision, lambda, h)?;
            let mut out = Vec::with_capacity(draws);
            for _ in 0..draws {
                state = kernel(&y, &state, h, &mut rng)?;
                out.push(geweke_statistics(&state.risk, &state.precision, state.lambda));
                y = sample_counts(&state.risk, &mut rng)?;
            }
            Ok(out)
        },
    );
    let (marginal, successive) = (marginal?, successive?);

    let mut stats = Vec::with_capacity(10);
    for (k, name) in GEWEKE_STATISTICS.iter().enumerate() {
        for moment in [1u32, 2] {
            let f = |row: &[f64; 5]| row[k].powi(moment as i32);
            let a: Vec<f64> = marginal.iter().map(f).collect();
            let b: Vec<f64> = successive.iter().map(f).collect();
            let (ma, va) = mean_var(&a);
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let se2 = va / a.len() as f64 + batch_means_var(&b, GEWEKE_BATCHES);
            stats.push(GewekeStat {
                name: name.to_string(),
                moment,
                marginal_mean: ma,
                successive_mean: mb,
                z_score: (ma - mb) / se2.sqrt(),
            });
        }
    }
    Ok(GewekeReport { draws, stats })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Variance of the overall mean estimated from `batches` batch means.
pub fn batch_means_var(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs[..size * batches]
        .chunks(size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    mean_var(&means).1 / batches as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SynthConfig};

    fn small() -> (CountMatrix, RunConfig) {
        let d = generate_dataset(&SynthConfig::new(4, 8, 1)).unwrap();
        let mut cfg = RunConfig::new(Hyperparameters::for_dimension(4));
        cfg.iterations = 10;
        cfg.burn_in = 4;
        cfg.thin = 2;
        (d.y, cfg)
    }

    #[test]
    fn retained_count_formula() {
        let (y, cfg) = small();
        assert_eq!(cfg.retained_count(), 3);
        let tr = fit(&y, &cfg).unwrap();
        assert_eq!(tr[0].samples.len(), 3);
    }

    #[test]
    fn config_validation() {
        let (_, cfg) = small();
        assert!(RunConfig { burn_in: 10, ..cfg }.validate().is_err());
        assert!(RunConfig { thin: 0, ..cfg }.validate().is_err());
        assert!(RunConfig { chains: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn chains_replay_and_differ() {
        let (y, mut cfg) = small();
        cfg.chains = 2;
        let a = fit(&y, &cfg).unwrap();
        let b = fit(&y, &cfg).unwrap();
        for k in 0..2 {
            assert_eq!(a[k].samples, b[k].samples);
            assert_eq!(a[k].accept, b[k].accept);
        }
        assert_ne!(a[0].samples, a[1].samples);
    }

    #[test]
    fn recorded_log_post_matches_recomputation() {
        let (y, cfg) = small();
        let tr = fit_chain(&y, &cfg, 0).unwrap();
        for s in &tr.samples {
            let again = crate::model::log_joint(&y, s, &cfg.hyper).unwrap();
            assert!((again - s.log_post).abs() <= 1e-9 * again.abs());
        }
    }

    #[test]
    fn dropping_z_keeps_shape_census() {
        let (y, mut cfg) = small();
        cfg.keep_z = false;
        let tr = fit_chain(&y, &cfg, 0).unwrap();
        assert!(!tr.z_retained);
        assert_eq!(tr.samples[0].risk.z.shape(), (0, 4));
    }

    #[test]
    fn batch_means_of_iid_matches_naive() {
        let mut rng = RngStream::new(3, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.standard_normal()).collect();
        let v = batch_means_var(&xs, 100);
        assert!((v * 1e5 - 1.0).abs() < 0.35, "{v}");
    }

    #[test]
    fn geweke_report_shape() {
        let mut cfg = RunConfig::new(Hyperparameters::for_dimension(2));
        cfg.hyper.a_lambda = 10.0;
        cfg.hyper.b_lambda = 100.0;
        let r = geweke_check(&cfg, 2, 3, 400).unwrap();
        assert_eq!(r.stats.len(), 10);
        assert!(r.stats.iter().all(|s| s.z_score.is_finite()));
    }
}
