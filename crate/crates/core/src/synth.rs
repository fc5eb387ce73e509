//! Synthetic datasets with a paired sparse precision structure.
//!
//! `Omega` has `C1` on the diagonal and `C2` linking area `k` with area
//! `k + A/2`; all other entries are zero. The true partial correlation of a
//! linked pair is therefore `-C2 / C1`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{sample_mvn, sample_poisson, RngStream};
use crate::error::{validation, Error, Result};
use crate::io::{write_matrix_csv, write_count_csv};
use crate::linalg;
use crate::model::{CountMatrix, PrecisionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub areas: usize,
    pub time_steps: usize,
    pub mu_true: f64,
    pub c1: f64,
    pub c2: f64,
    pub seed: u64,
}

/// Named dataset sizes `(A, T)`.
pub const PRESETS: [(&str, usize, usize); 4] = [
    ("A10T30", 10, 30),
    ("A50T60", 50, 60),
    ("A100T60", 100, 60),
    ("A200T60", 200, 60),
];

impl SynthConfig {
    pub fn new(areas: usize, time_steps: usize, seed: u64) -> Self {
        Self {
            areas,
            time_steps,
            mu_true: 0.2,
            c1: 1.0,
            c2: 0.5,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        PRESETS
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .map(|&(_, a, t)| Self::new(a, t, seed))
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                Error::Validation(format!("unknown preset {name}; expected one of {}", names.join(", ")))
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_steps < 1 || self.areas < 1 {
            return validation("synthetic dataset needs A >= 1 and T >= 1");
        }
        if !self.mu_true.is_finite() {
            return validation("mu_true must be finite");
        }
        Ok(())
    }
}

/// Paired precision matrix; errors unless `|C2| < C1` (and `A` even when
/// `C2 != 0`).
pub fn make_true_precision(areas: usize, c1: f64, c2: f64) -> Result<PrecisionMatrix> {
    if !(c1 > 0.0) {
        return validation(format!("C1 must be positive, got {c1}"));
    }
    if !(c2.abs() < c1) {
        return validation(format!(
            "|C2| < C1 is required for a positive-definite precision (C1={c1}, C2={c2})"
        ));
    }
    if c2 != 0.0 && areas % 2 != 0 {
        return validation(format!("A must be even to pair areas, got {areas}"));
    }
    let mut omega = DMatrix::identity(areas, areas) * c1;
    if c2 != 0.0 {
        let half = areas / 2;
        for k in 0..half {
            omega[(k, k + half)] = c2;
            omega[(k + half, k)] = c2;
        }
    }
    let mut tau = DMatrix::from_element(areas, areas, 1.0);
    tau.fill_diagonal(0.0);
    PrecisionMatrix::new(omega, tau)
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub y: CountMatrix,
    pub z_true: DMatrix<f64>,
    pub mu_true: DVector<f64>,
    pub omega_true: PrecisionMatrix,
}

/// Draws `z_t ~ N(0, Omega^-1)` and `y_ti ~ Poisson(exp(mu_i + z_ti))`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let (a, t) = (cfg.areas, cfg.time_steps);
    let omega_true = make_true_precision(a, cfg.c1, cfg.c2)?;
    let chol = linalg::cholesky_lower(&omega_true.omega)
        .ok_or_else(|| Error::Numeric("true precision is not positive definite".into()))?;
    let cov_chol = linalg::cholesky_lower(&linalg::cholesky_inverse(&chol))
        .ok_or_else(|| Error::Numeric("true covariance is not positive definite".into()))?;
    let mut rng = RngStream::new(cfg.seed, 0);
    let zero = DVector::zeros(a);
    let mut z_true = DMatrix::zeros(t, a);
    for r in 0..t {
        let zt = sample_mvn(&zero, &cov_chol, &mut rng)?;
        z_true.set_row(r, &zt.transpose());
    }
    let mu_true = DVector::from_element(a, cfg.mu_true);
    let mut counts = DMatrix::<u64>::zeros(t, a);
    for r in 0..t {
        for i in 0..a {
            counts[(r, i)] = sample_poisson((mu_true[i] + z_true[(r, i)]).exp(), &mut rng)?;
        }
    }
    Ok(SynthDataset {
        y: CountMatrix::new(counts)?,
        z_true,
        mu_true,
        omega_true,
    })
}

/// Truth echo written next to a synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthMeta {
    pub config: SynthConfig,
    pub mu_true: Vec<f64>,
}

impl SynthDataset {
    /// Writes `y.csv`, `z_true.csv`, `omega_true.csv` and `meta.json`.
    pub fn write_dir(&self, cfg: &SynthConfig, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_count_csv(&self.y, &dir.join("y.csv"))?;
        write_matrix_csv(&self.z_true, &dir.join("z_true.csv"))?;
        write_matrix_csv(&self.omega_true.omega, &dir.join("omega_true.csv"))?;
        let meta = SynthMeta {
            config: *cfg,
            mu_true: self.mu_true.iter().copied().collect(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }
}
