//! Trace directories.
//!
//! ```text
//! manifest.json   format version, shapes, run config, Newton failures
//! mu.csv          mu_0..mu_{A-1}
//! lambda.csv      lambda
//! log_post.csv    log_post
//! omega.csv       w_i_j for i <= j, row-major
//! z.csv           z_t_i, t-major (only when z is retained)
//! accept.csv      block,accepted,attempted
//! ```
//!
//! A multi-chain fit writes one such directory per chain under `chain_<k>`.
//! `tau` is not stored; loaded states carry `tau = 1` off the diagonal.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::RunConfig;
use crate::model::{ChainState, PrecisionMatrix, RiskState};
use crate::posterior::{AcceptCounts, Trace};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub chain: u64,
    pub areas: usize,
    pub time_steps: usize,
    pub samples: usize,
    pub z_retained: bool,
    pub newton_failures: u64,
    pub config: RunConfig,
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Data(format!(
                "{}: row {k} has {} fields, expected {width}",
                path.display(),
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| Error::Data(format!("{}: bad number {c:?} in row {k}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

fn upper_pairs(a: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..a).flat_map(move |i| (i..a).map(move |j| (i, j)))
}

pub fn write_trace(trace: &Trace, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let a = trace.areas();
    let t = trace.accept.z_attempted.len();
    let s = &trace.samples;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        chain: trace.chain,
        areas: a,
        time_steps: t,
        samples: s.len(),
        z_retained: trace.z_retained,
        newton_failures: trace.accept.newton_failures,
        config: trace.config,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;

    let mu_head: Vec<String> = (0..a).map(|i| format!("mu_{i}")).collect();
    write_rows(&dir.join("mu.csv"), &mu_head, s.iter().map(|x| x.risk.mu.iter().copied().collect()))?;
    write_rows(&dir.join("lambda.csv"), &["lambda".into()], s.iter().map(|x| vec![x.lambda]))?;
    write_rows(&dir.join("log_post.csv"), &["log_post".into()], s.iter().map(|x| vec![x.log_post]))?;
    let w_head: Vec<String> = upper_pairs(a).map(|(i, j)| format!("w_{i}_{j}")).collect();
    write_rows(
        &dir.join("omega.csv"),
        &w_head,
        s.iter().map(|x| upper_pairs(a).map(|(i, j)| x.precision.omega[(i, j)]).collect()),
    )?;
    if trace.z_retained {
        let z_head: Vec<String> = (0..t).flat_map(|r| (0..a).map(move |i| format!("z_{r}_{i}"))).collect();
        write_rows(
            &dir.join("z.csv"),
            &z_head,
            s.iter().map(|x| (0..t).flat_map(|r| (0..a).map(move |i| x.risk.z[(r, i)])).collect()),
        )?;
    }

    let mut w = BufWriter::new(File::create(dir.join("accept.csv"))?);
    writeln!(w, "block,accepted,attempted")?;
    writeln!(w, "mu,{},{}", trace.accept.mu_accepted, trace.accept.mu_attempted)?;
    for r in 0..t {
        writeln!(w, "z_{r},{},{}", trace.accept.z_accepted[r], trace.accept.z_attempted[r])?;
    }
    w.flush()?;
    Ok(())
}

fn read_accept(path: &Path, manifest: &Manifest) -> Result<AcceptCounts> {
    let mut acc = AcceptCounts::new(manifest.time_steps);
    acc.newton_failures = manifest.newton_failures;
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for rec in r.records() {
        let rec = rec?;
        let bad = || Error::Data(format!("{}: bad row {:?}", path.display(), rec));
        if rec.len() != 3 {
            return Err(bad());
        }
        let accepted: u64 = rec[1].parse().map_err(|_| bad())?;
        let attempted: u64 = rec[2].parse().map_err(|_| bad())?;
        if &rec[0] == "mu" {
            acc.mu_accepted = accepted;
            acc.mu_attempted = attempted;
        } else {
            let r: usize = rec[0].strip_prefix("z_").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if r >= manifest.time_steps {
                return Err(bad());
            }
            acc.z_accepted[r] = accepted;
            acc.z_attempted[r] = attempted;
        }
    }
    Ok(acc)
}

pub fn read_trace(dir: &Path) -> Result<Trace> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::Data(format!("{}: {e}", mpath.display())))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported format version {}",
            mpath.display(),
            m.format_version
        )));
    }
    let (a, t, n) = (m.areas, m.time_steps, m.samples);
    let npairs = a * (a + 1) / 2;
    let check_len = |name: &str, rows: &Vec<Vec<f64>>| {
        if rows.len() != n {
            Err(Error::Data(format!("{name}: {} rows, manifest says {n}", rows.len())))
        } else {
            Ok(())
        }
    };
    let mu = read_rows(&dir.join("mu.csv"), a)?;
    check_len("mu.csv", &mu)?;
    let lambda = read_rows(&dir.join("lambda.csv"), 1)?;
    check_len("lambda.csv", &lambda)?;
    let log_post = read_rows(&dir.join("log_post.csv"), 1)?;
    check_len("log_post.csv", &log_post)?;
    let omega = read_rows(&dir.join("omega.csv"), npairs)?;
    check_len("omega.csv", &omega)?;
    let z = if m.z_retained {
        let z = read_rows(&dir.join("z.csv"), t * a)?;
        check_len("z.csv", &z)?;
        Some(z)
    } else {
        None
    };

    let mut tau = DMatrix::from_element(a, a, 1.0);
    tau.fill_diagonal(0.0);
    let samples = (0..n)
        .map(|k| {
            let mut om = DMatrix::zeros(a, a);
            for (v, (i, j)) in omega[k].iter().zip(upper_pairs(a)) {
                om[(i, j)] = *v;
                om[(j, i)] = *v;
            }
            let zk = match &z {
                Some(z) => DMatrix::from_row_slice(t, a, &z[k]),
                None => DMatrix::zeros(0, a),
            };
            ChainState {
                risk: RiskState {
                    mu: DVector::from_vec(mu[k].clone()),
                    z: zk,
                },
                precision: PrecisionMatrix {
                    omega: om,
                    tau: tau.clone(),
                },
                lambda: lambda[k][0],
                log_post: log_post[k][0],
            }
        })
        .collect();
    Ok(Trace {
        samples,
        accept: read_accept(&dir.join("accept.csv"), &m)?,
        config: m.config,
        chain: m.chain,
        z_retained: m.z_retained,
    })
}

pub fn chain_dir(dir: &Path, chain: u64) -> PathBuf {
    dir.join(format!("chain_{chain}"))
}

/// One chain is written directly into `dir`; several go to `chain_<k>`.
pub fn write_fit(traces: &[Trace], dir: &Path) -> Result<()> {
    match traces {
        [one] => write_trace(one, dir),
        many => many.iter().try_for_each(|tr| write_trace(tr, &chain_dir(dir, tr.chain))),
    }
}

pub fn read_fit(dir: &Path) -> Result<Vec<Trace>> {
    if dir.join("manifest.json").is_file() {
        return Ok(vec![read_trace(dir)?]);
    }
    let mut out = Vec::new();
    for k in 0.. {
        let d = chain_dir(dir, k);
        if !d.is_dir() {
            break;
        }
        out.push(read_trace(&d)?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no manifest.json or chain_0 directory", dir.display())));
    }
    Ok(out)
}
