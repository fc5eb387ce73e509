//! Python bindings for `count-glasso`.
//!
//! Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use count_glasso::fit::{self as sampler, RunConfig};
use count_glasso::model::{validate_positive_definite, CountMatrix, Hyperparameters};
use count_glasso::posterior::{self, IntervalKind};
use count_glasso::synth::{generate_dataset, SynthConfig};
use count_glasso::{persist, Error};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) | Error::NewtonNonConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn interval_kind(name: &str) -> PyResult<IntervalKind> {
    match name {
        "equal-tailed" | "equal_tailed" => Ok(IntervalKind::EqualTailed),
        "hpd" => Ok(IntervalKind::Hpd),
        _ => Err(PyValueError::new_err(format!("unknown interval kind {name:?}"))),
    }
}

/// Synthetic dataset with known truth.
#[pyclass(frozen, module = "count_glasso_py")]
struct Dataset {
    #[pyo3(get)]
    y: Vec<Vec<u64>>,
    #[pyo3(get)]
    z_true: Vec<Vec<f64>>,
    #[pyo3(get)]
    omega_true: Vec<Vec<f64>>,
    #[pyo3(get)]
    mu_true: Vec<f64>,
}

#[pyfunction]
#[pyo3(signature = (areas=10, time_steps=30, seed=0, mu=0.2, c1=1.0, c2=0.5, preset=None))]
fn simulate(
    areas: usize,
    time_steps: usize,
    seed: u64,
    mu: f64,
    c1: f64,
    c2: f64,
    preset: Option<&str>,
) -> PyResult<Dataset> {
    let mut cfg = match preset {
        Some(p) => SynthConfig::preset(p, seed).map_err(py_err)?,
        None => SynthConfig::new(areas, time_steps, seed),
    };
    cfg.mu_true = mu;
    cfg.c1 = c1;
    cfg.c2 = c2;
    cfg.validate().map_err(py_err)?;
    let d = generate_dataset(&cfg).map_err(py_err)?;
    let y = d.y.values();
    Ok(Dataset {
        y: (0..y.nrows()).map(|t| y.row(t).iter().copied().collect()).collect(),
        z_true: to_rows(&d.z_true),
        omega_true: to_rows(&d.omega_true.omega),
        mu_true: d.mu_true.iter().copied().collect(),
    })
}

/// Posterior draws of one chain (or several pooled).
#[pyclass(frozen, module = "count_glasso_py")]
struct Trace {
    inner: posterior::Trace,
}

#[pymethods]
impl Trace {
    #[getter]
    fn chain(&self) -> u64 {
        self.inner.chain
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    #[getter]
    fn areas(&self) -> usize {
        self.inner.areas()
    }

    #[getter]
    fn mu(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.risk.mu.iter().copied().collect()).collect()
    }

    #[getter]
    fn omega(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.samples.iter().map(|s| to_rows(&s.precision.omega)).collect()
    }

    /// Latent risks per draw, or None when they were not kept.
    #[getter]
    fn z(&self) -> Option<Vec<Vec<Vec<f64>>>> {
        self.inner
            .z_retained
            .then(|| self.inner.samples.iter().map(|s| to_rows(&s.risk.z)).collect())
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.lambda).collect()
    }

    #[getter]
    fn log_post(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.log_post).collect()
    }

    #[getter]
    fn mu_acceptance(&self) -> f64 {
        self.inner.accept.mu_rate()
    }

    #[getter]
    fn z_acceptance(&self) -> f64 {
        self.inner.accept.z_rate()
    }

    #[getter]
    fn newton_failures(&self) -> u64 {
        self.inner.accept.newton_failures
    }

    /// `(index, mu, omega, lambda)` of the highest-posterior draw.
    fn map(&self) -> PyResult<(usize, Vec<f64>, Vec<Vec<f64>>, f64)> {
        let (k, s) = posterior::map_sample(&self.inner).map_err(py_err)?;
        Ok((k, s.risk.mu.iter().copied().collect(), to_rows(&s.precision.omega), s.lambda))
    }

    /// Rows `(param, index, map, mean, lo, hi, ess)`.
    #[pyo3(signature = (level=0.95, interval="equal-tailed"))]
    fn summary(&self, level: f64, interval: &str) -> PyResult<Vec<(String, String, f64, f64, f64, f64, f64)>> {
        let s = posterior::summarize(&self.inner, level, interval_kind(interval)?).map_err(py_err)?;
        Ok(s.rows
            .into_iter()
            .map(|r| (r.param, r.index, r.map, r.mean, r.lo, r.hi, r.ess))
            .collect())
    }

    /// Strongest MAP partial correlations as `(i, j, weight)`.
    #[pyo3(signature = (top_q=0.02))]
    fn edges(&self, top_q: f64) -> PyResult<Vec<(usize, usize, f64)>> {
        let (_, s) = posterior::map_sample(&self.inner).map_err(py_err)?;
        let set = posterior::threshold_top_q(&posterior::partial_correlation(&s.precision.omega), top_q)
            .map_err(py_err)?;
        Ok(set.edges.iter().map(|e| (e.i, e.j, e.weight)).collect())
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        persist::write_trace(&self.inner, &dir).map_err(py_err)
    }

    /// Every chain stored under `dir`.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Vec<Trace>> {
        let traces = persist::read_fit(&dir).map_err(py_err)?;
        Ok(traces.into_iter().map(|inner| Trace { inner }).collect())
    }

    #[staticmethod]
    fn pool(traces: Vec<PyRef<'_, Trace>>) -> PyResult<Trace> {
        let inner: Vec<posterior::Trace> = traces.iter().map(|t| t.inner.clone()).collect();
        Ok(Trace {
            inner: posterior::pool_traces(&inner).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(chain={}, draws={}, areas={})",
            self.inner.chain,
            self.inner.samples.len(),
            self.inner.areas()
        )
    }
}

/// Runs the sampler; returns one trace per chain.
#[pyfunction]
#[pyo3(signature = (
    counts, iterations=15000, burn_in=5000, thin=10, chains=1, seed=0,
    a_lambda=None, b_lambda=0.01, sigma2_mu=0.05, nu=5.0, keep_z=true
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    counts: Vec<Vec<i64>>,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    chains: usize,
    seed: u64,
    a_lambda: Option<f64>,
    b_lambda: f64,
    sigma2_mu: f64,
    nu: f64,
    keep_z: bool,
) -> PyResult<Vec<Trace>> {
    let y = CountMatrix::from_rows(&counts).map_err(py_err)?;
    let mut hyper = Hyperparameters::for_dimension(y.areas());
    hyper.a_lambda = a_lambda.unwrap_or(hyper.a_lambda);
    hyper.b_lambda = b_lambda;
    hyper.sigma2_mu = sigma2_mu;
    hyper.nu = nu;
    let cfg = RunConfig {
        iterations,
        burn_in,
        thin,
        chains,
        seed,
        hyper,
        keep_z,
    };
    cfg.validate().map_err(py_err)?;
    let traces = py.detach(|| sampler::fit(&y, &cfg)).map_err(py_err)?;
    Ok(traces.into_iter().map(|inner| Trace { inner }).collect())
}

#[pyfunction]
fn partial_correlation(omega: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&posterior::partial_correlation(&to_matrix(&omega)?)))
}

/// `(i, j, weight)` for the strongest `ceil(q A(A-1)/2)` entries.
#[pyfunction]
fn threshold_top_q(pcorr: Vec<Vec<f64>>, q: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let set = posterior::threshold_top_q(&to_matrix(&pcorr)?, q).map_err(py_err)?;
    Ok(set.edges.iter().map(|e| (e.i, e.j, e.weight)).collect())
}

#[pyfunction]
#[pyo3(signature = (values, level=0.95, interval="equal-tailed"))]
fn credible_interval(values: Vec<f64>, level: f64, interval: &str) -> PyResult<(f64, f64)> {
    posterior::interval(&values, level, interval_kind(interval)?).map_err(py_err)
}

#[pyfunction]
fn is_positive_definite(m: Vec<Vec<f64>>) -> PyResult<bool> {
    validate_positive_definite(&to_matrix(&m)?).map_err(py_err)
}

/// Rows `(statistic, moment, marginal_mean, successive_mean, z)`.
#[pyfunction]
#[pyo3(signature = (areas=2, time_steps=3, draws=100_000, seed=0, a_lambda=10.0, b_lambda=1e4))]
fn geweke_check(
    py: Python<'_>,
    areas: usize,
    time_steps: usize,
    draws: usize,
    seed: u64,
    a_lambda: f64,
    b_lambda: f64,
) -> PyResult<Vec<(String, u32, f64, f64, f64)>> {
    let mut cfg = RunConfig::new(Hyperparameters::for_dimension(areas));
    cfg.seed = seed;
    cfg.hyper.a_lambda = a_lambda;
    cfg.hyper.b_lambda = b_lambda;
    let report = py
        .detach(|| sampler::geweke_check(&cfg, areas, time_steps, draws))
        .map_err(py_err)?;
    Ok(report
        .stats
        .into_iter()
        .map(|s| (s.name, s.moment, s.marginal_mean, s.successive_mean, s.z_score))
        .collect())
}

#[pymodule]
pub fn count_glasso_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Trace>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(partial_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_top_q, m)?)?;
    m.add_function(wrap_pyfunction!(credible_interval, m)?)?;
    m.add_function(wrap_pyfunction!(is_positive_definite, m)?)?;
    m.add_function(wrap_pyfunction!(geweke_check, m)?)?;
    Ok(())
}
