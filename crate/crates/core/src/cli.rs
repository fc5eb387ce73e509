//! `count-glasso` command line.
//!
//! Values come from flags, then the optional `--config` JSON file, then
//! defaults. The seed additionally falls back to `COUNT_GLASSO_SEED`.
//! Exit codes: 0 success, 2 usage or configuration, 3 data, 4 numeric.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit, geweke_check, RunConfig};
use crate::ingest::{export_geojson, ingest, AreasFile, ColumnMap};
use crate::io::{read_count_csv, read_matrix_csv};
use crate::model::Hyperparameters;
use crate::persist::{read_fit, write_fit};
use crate::posterior::{map_sample, partial_correlation, pool_traces, summarize, threshold_top_q, IntervalKind};
use crate::synth::{generate_dataset, SynthConfig, SynthMeta};

pub const SEED_ENV: &str = "COUNT_GLASSO_SEED";

#[derive(Debug, Parser)]
#[command(name = "count-glasso", version, about = "Sparse dependence networks for correlated count data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with paired precision structure.
    Simulate(SimulateArgs),
    /// Run the MCMC sampler on a count matrix.
    Fit(FitArgs),
    /// Posterior summary table (and coverage against known truth).
    Summarize(SummarizeArgs),
    /// Export the strongest MAP partial correlations as edges.
    Export(ExportArgs),
    /// Aggregate point events into a weekly count matrix.
    Ingest(IngestArgs),
    /// Geweke joint-distribution check of the sampler.
    Check(CheckArgs),
}

/// Every field is optional; flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    // run
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
    pub keep_z: Option<bool>,
    // hyperparameters
    pub a_lambda: Option<f64>,
    pub b_lambda: Option<f64>,
    pub sigma2_mu: Option<f64>,
    pub nu: Option<f64>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub omega_eps: Option<f64>,
    // synthetic data
    pub preset: Option<String>,
    pub areas: Option<usize>,
    pub time_steps: Option<usize>,
    pub mu_true: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    // ingestion
    pub year: Option<i32>,
    pub n_areas: Option<usize>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub col_time: Option<String>,
    pub col_x: Option<String>,
    pub col_y: Option<String>,
    pub col_category: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64> {
    if let Some(s) = flag.or(file.seed) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named size (A10T30, A50T60, A100T60, A200T60).
    #[arg(long)]
    pub preset: Option<String>,
    /// Number of areas [default: 10].
    #[arg(long = "A", visible_alias = "areas")]
    pub areas: Option<usize>,
    /// Number of time steps [default: 30].
    #[arg(long = "T", visible_alias = "time-steps")]
    pub time_steps: Option<usize>,
    /// Common baseline risk mu [default: 0.2].
    #[arg(long = "mu")]
    pub mu_true: Option<f64>,
    /// Diagonal of the true precision [default: 1.0].
    #[arg(long = "C1")]
    pub c1: Option<f64>,
    /// Coupling of paired areas [default: 0.5].
    #[arg(long = "C2", allow_hyphen_values = true)]
    pub c2: Option<f64>,
    /// Seed [default: $COUNT_GLASSO_SEED or 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "synthetic")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ALambda {
    Auto,
    Value(f64),
}

fn parse_a_lambda(s: &str) -> std::result::Result<ALambda, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(ALambda::Auto);
    }
    s.parse::<f64>()
        .map(ALambda::Value)
        .map_err(|_| format!("expected a number or 'auto', got {s:?}"))
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    /// Gamma shape of the shrinkage prior, or 'auto' for A [default: auto].
    #[arg(long, value_parser = parse_a_lambda)]
    pub a_lambda: Option<ALambda>,
    /// Gamma rate of the shrinkage prior [default: 0.01].
    #[arg(long)]
    pub b_lambda: Option<f64>,
    /// Prior variance of mu [default: 0.05].
    #[arg(long = "sigma2-mu")]
    pub sigma2_mu: Option<f64>,
    /// Degrees of freedom of the t proposals [default: 5].
    #[arg(long)]
    pub nu: Option<f64>,
    /// Newton gradient tolerance [default: 1e-8].
    #[arg(long)]
    pub newton_tol: Option<f64>,
    /// Newton iteration cap [default: 100].
    #[arg(long)]
    pub newton_max_iter: Option<usize>,
    /// Lower clamp on |omega_ij| in the latent-scale update [default: 1e-8].
    #[arg(long)]
    pub omega_eps: Option<f64>,
}

impl HyperArgs {
    fn resolve(&self, areas: usize, file: &FileConfig) -> Hyperparameters {
        let d = Hyperparameters::for_dimension(areas);
        let a_lambda = match self.a_lambda {
            Some(ALambda::Value(v)) => v,
            Some(ALambda::Auto) => d.a_lambda,
            None => file.a_lambda.unwrap_or(d.a_lambda),
        };
        Hyperparameters {
            a_lambda,
            b_lambda: self.b_lambda.or(file.b_lambda).unwrap_or(d.b_lambda),
            sigma2_mu: self.sigma2_mu.or(file.sigma2_mu).unwrap_or(d.sigma2_mu),
            nu: self.nu.or(file.nu).unwrap_or(d.nu),
            newton_tol: self.newton_tol.or(file.newton_tol).unwrap_or(d.newton_tol),
            newton_max_iter: self.newton_max_iter.or(file.newton_max_iter).unwrap_or(d.newton_max_iter),
            omega_eps: self.omega_eps.or(file.omega_eps).unwrap_or(d.omega_eps),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Headerless T×A count CSV.
    #[arg(long)]
    pub counts: PathBuf,
    /// Trace output directory.
    #[arg(long, default_value = "trace")]
    pub out: PathBuf,
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Total sweeps [default: 15000].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Discarded sweeps [default: 5000].
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Keep every n-th sweep [default: 10].
    #[arg(long)]
    pub thin: Option<usize>,
    /// Independent chains [default: 1].
    #[arg(long)]
    pub chains: Option<usize>,
    /// Seed [default: $COUNT_GLASSO_SEED or 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Do not store z.
    #[arg(long)]
    pub no_z: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntervalArg {
    EqualTailed,
    Hpd,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Trace directory written by `fit`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Credible level.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = IntervalArg::EqualTailed)]
    pub interval: IntervalArg,
    /// Summary CSV [default: <trace>/summary.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory written by `simulate`; adds a coverage report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Geojson,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Trace directory written by `fit`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Fraction of area pairs kept, by |partial correlation|.
    #[arg(long, default_value_t = 0.02)]
    pub top_q: f64,
    #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
    pub format: ExportFormat,
    /// areas.json written by `ingest`; required for geojson.
    #[arg(long)]
    pub areas: Option<PathBuf>,
    /// Centroids are lon/lat degrees.
    #[arg(long)]
    pub lonlat: bool,
    /// Output file [default: <trace>/edges.csv or edges.geojson].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Event CSV with a header row.
    #[arg(long)]
    pub events: PathBuf,
    /// Output directory for counts.csv and areas.json.
    #[arg(long, default_value = "ingested")]
    pub out: PathBuf,
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Calendar year to aggregate [required here or in the config].
    #[arg(long)]
    pub year: Option<i32>,
    /// Number of grid cells kept as areas [default: 60].
    #[arg(long)]
    pub areas: Option<usize>,
    /// Grid columns [default: 20].
    #[arg(long)]
    pub nx: Option<usize>,
    /// Grid rows [default: 20].
    #[arg(long)]
    pub ny: Option<usize>,
    /// Timestamp column [default: occ_date].
    #[arg(long)]
    pub col_time: Option<String>,
    /// Easting column [default: x_coordinate].
    #[arg(long)]
    pub col_x: Option<String>,
    /// Northing column [default: y_coordinate].
    #[arg(long)]
    pub col_y: Option<String>,
    /// Optional category column echoed through parsing.
    #[arg(long)]
    pub col_category: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of areas.
    #[arg(long = "A", visible_alias = "areas", default_value_t = 2)]
    pub areas: usize,
    /// Number of time steps.
    #[arg(long = "T", visible_alias = "time-steps", default_value_t = 3)]
    pub time_steps: usize,
    /// Draws per simulator.
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    /// Seed [default: $COUNT_GLASSO_SEED or 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Shrinkage prior used by `check` unless overridden. It keeps `lambda`
/// near 1e-3, where the sampler mixes quickly, while prior draws of the
/// latent risks stay small enough for Poisson sampling.
pub const CHECK_A_LAMBDA: f64 = 10.0;
pub const CHECK_B_LAMBDA: f64 = 1e4;

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &file)?;
    let mut cfg = match args.preset.as_ref().or(file.preset.as_ref()) {
        Some(p) => SynthConfig::preset(p, seed)?,
        None => SynthConfig::new(10, 30, seed),
    };
    cfg.areas = args.areas.or(file.areas).unwrap_or(cfg.areas);
    cfg.time_steps = args.time_steps.or(file.time_steps).unwrap_or(cfg.time_steps);
    cfg.mu_true = args.mu_true.or(file.mu_true).unwrap_or(cfg.mu_true);
    cfg.c1 = args.c1.or(file.c1).unwrap_or(cfg.c1);
    cfg.c2 = args.c2.or(file.c2).unwrap_or(cfg.c2);
    cfg.validate()?;
    let d = generate_dataset(&cfg)?;
    d.write_dir(&cfg, &args.out)?;
    println!(
        "wrote {}x{} counts to {}",
        cfg.time_steps,
        cfg.areas,
        args.out.join("y.csv").display()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &file)?;
    let y = read_count_csv(&args.counts)?;
    let d = RunConfig::new(Hyperparameters::for_dimension(y.areas()));
    let cfg = RunConfig {
        iterations: args.iterations.or(file.iterations).unwrap_or(d.iterations),
        burn_in: args.burn_in.or(file.burn_in).unwrap_or(d.burn_in),
        thin: args.thin.or(file.thin).unwrap_or(d.thin),
        chains: args.chains.or(file.chains).unwrap_or(d.chains),
        seed,
        hyper: args.hyper.resolve(y.areas(), &file),
        keep_z: !args.no_z && file.keep_z.unwrap_or(true),
    };
    cfg.validate()?;
    let traces = fit(&y, &cfg)?;
    write_fit(&traces, &args.out)?;
    for tr in &traces {
        println!(
            "chain {}: {} samples, mu acceptance {:.3}, z acceptance {:.3}, newton failures {}",
            tr.chain,
            tr.samples.len(),
            tr.accept.mu_rate(),
            tr.accept.z_rate(),
            tr.accept.newton_failures
        );
    }
    println!("wrote trace to {}", args.out.display());
    Ok(())
}

/// Fraction of truth values inside their intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub level: f64,
    pub mu_inside: usize,
    pub mu_total: usize,
    pub omega_inside: usize,
    pub omega_total: usize,
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Error::Validation(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    let kind = match args.interval {
        IntervalArg::EqualTailed => IntervalKind::EqualTailed,
        IntervalArg::Hpd => IntervalKind::Hpd,
    };
    let trace = pool_traces(&read_fit(&args.trace)?)?;
    let summary = summarize(&trace, args.level, kind)?;
    let out = args.out.clone().unwrap_or_else(|| args.trace.join("summary.csv"));
    summary.write_csv(fs::File::create(&out)?)?;
    println!(
        "{} rows at level {}; MAP sample {}; mu acceptance {:.3}; z acceptance {:.3}; newton failures {}",
        summary.rows.len(),
        summary.level,
        summary.map_index,
        summary.mu_accept_rate,
        summary.z_accept_rate,
        summary.newton_failures
    );
    println!("wrote {}", out.display());

    if let Some(truth) = &args.truth {
        let meta: SynthMeta = serde_json::from_str(
            &fs::read_to_string(truth.join("meta.json"))
                .map_err(|e| Error::Data(format!("{}: {e}", truth.join("meta.json").display())))?,
        )?;
        let omega = read_matrix_csv(&truth.join("omega_true.csv"))?;
        let inside = |r: &crate::posterior::SummaryRow, v: f64| r.lo <= v && v <= r.hi;
        let mut cov = Coverage {
            level: args.level,
            mu_inside: 0,
            mu_total: 0,
            omega_inside: 0,
            omega_total: 0,
        };
        for r in summary.rows_for("mu") {
            let i: usize = r.index.parse().map_err(|_| Error::Data(format!("bad index {}", r.index)))?;
            let v = *meta
                .mu_true
                .get(i)
                .ok_or_else(|| Error::Data(format!("truth has no mu_{i}")))?;
            cov.mu_total += 1;
            cov.mu_inside += inside(r, v) as usize;
        }
        for r in summary.rows_for("omega") {
            let (i, j) = r
                .index
                .split_once(':')
                .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
                .ok_or_else(|| Error::Data(format!("bad index {}", r.index)))?;
            if i >= omega.nrows() || j >= omega.ncols() {
                return Err(Error::Data("truth omega is smaller than the fitted one".into()));
            }
            cov.omega_total += 1;
            cov.omega_inside += inside(r, omega[(i, j)]) as usize;
        }
        let path = out.with_file_name("coverage.json");
        fs::write(&path, serde_json::to_string_pretty(&cov)? + "\n")?;
        println!(
            "mu coverage {}/{}; omega coverage {}/{}",
            cov.mu_inside, cov.mu_total, cov.omega_inside, cov.omega_total
        );
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    if !(args.top_q > 0.0 && args.top_q <= 1.0) {
        return Err(Error::Validation(format!("--top-q must lie in (0, 1], got {}", args.top_q)));
    }
    let grid = match (args.format, &args.areas) {
        (ExportFormat::Geojson, None) => {
            return Err(Error::Config("--format geojson needs --areas areas.json".into()))
        }
        (_, Some(p)) => Some(AreasFile::read(p)?.grid),
        (_, None) => None,
    };
    let trace = pool_traces(&read_fit(&args.trace)?)?;
    let (_, map) = map_sample(&trace)?;
    let edges = threshold_top_q(&partial_correlation(&map.precision.omega), args.top_q)?;
    if let Some(g) = &grid {
        if g.selected.len() != trace.areas() {
            return Err(Error::Config(format!(
                "areas file lists {} areas but the trace has {}",
                g.selected.len(),
                trace.areas()
            )));
        }
    }
    let out = match (&args.out, args.format) {
        (Some(p), _) => p.clone(),
        (None, ExportFormat::Csv) => args.trace.join("edges.csv"),
        (None, ExportFormat::Geojson) => args.trace.join("edges.geojson"),
    };
    match (args.format, grid) {
        (ExportFormat::Geojson, Some(g)) => export_geojson(&edges, &g, &out, args.lonlat)?,
        _ => edges.write_csv(&out)?,
    }
    println!("wrote {} edges to {}", edges.edges.len(), out.display());
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let d = ColumnMap::default();
    let columns = ColumnMap {
        time: args.col_time.clone().or(file.col_time.clone()).unwrap_or(d.time),
        x: args.col_x.clone().or(file.col_x.clone()).unwrap_or(d.x),
        y: args.col_y.clone().or(file.col_y.clone()).unwrap_or(d.y),
        category: args.col_category.clone().or(file.col_category.clone()),
    };
    let year = args
        .year
        .or(file.year)
        .ok_or_else(|| Error::Config("--year is required".into()))?;
    let areas = args.areas.or(file.n_areas).unwrap_or(60);
    let nx = args.nx.or(file.nx).unwrap_or(20);
    let ny = args.ny.or(file.ny).unwrap_or(20);
    if areas == 0 || nx == 0 || ny == 0 {
        return Err(Error::Validation("--areas, --nx and --ny must be positive".into()));
    }
    let r = ingest(&args.events, &columns, year, nx, ny, areas)?;
    fs::create_dir_all(&args.out)?;
    crate::io::write_count_csv(&r.counts, &args.out.join("counts.csv"))?;
    AreasFile {
        year,
        grid: r.grid,
        tallies: r.tallies,
    }
    .write(&args.out.join("areas.json"))?;
    let t = r.tallies;
    println!(
        "rows {} = skipped {} + out of year {} + outside areas {} + counted {} ({})",
        t.rows,
        t.skipped,
        t.out_of_year,
        t.outside_areas,
        t.counted,
        if t.reconciles() { "reconciled" } else { "MISMATCH" }
    );
    println!(
        "wrote {}x{} counts to {}",
        r.counts.time_steps(),
        r.counts.areas(),
        args.out.join("counts.csv").display()
    );
    if !t.reconciles() {
        return Err(Error::Data("ingest tallies do not reconcile".into()));
    }
    Ok(())
}

fn cmd_check(args: &CheckArgs) -> Result<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    file.a_lambda = file.a_lambda.or(Some(CHECK_A_LAMBDA));
    file.b_lambda = file.b_lambda.or(Some(CHECK_B_LAMBDA));
    let mut cfg = RunConfig::new(args.hyper.resolve(args.areas, &file));
    cfg.seed = resolve_seed(args.seed, &file)?;
    cfg.hyper.validate()?;
    let report = geweke_check(&cfg, args.areas, args.time_steps, args.draws)?;
    println!("{:<10} {:>6} {:>14} {:>14} {:>8}", "statistic", "moment", "marginal", "successive", "z");
    for s in &report.stats {
        println!(
            "{:<10} {:>6} {:>14.6} {:>14.6} {:>8.3}",
            s.name, s.moment, s.marginal_mean, s.successive_mean, s.z_score
        );
    }
    println!("max |z| = {:.3} over {} draws", report.max_abs_z(), report.draws);
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Export(a) => cmd_export(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Check(a) => cmd_check(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn a_lambda_parsing() {
        assert_eq!(parse_a_lambda("auto"), Ok(ALambda::Auto));
        assert_eq!(parse_a_lambda("2.5"), Ok(ALambda::Value(2.5)));
        assert!(parse_a_lambda("x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = FileConfig {
            nu: Some(7.0),
            b_lambda: Some(0.5),
            a_lambda: Some(3.0),
            ..Default::default()
        };
        let args = HyperArgs {
            a_lambda: Some(ALambda::Auto),
            b_lambda: None,
            sigma2_mu: None,
            nu: Some(3.0),
            newton_tol: None,
            newton_max_iter: None,
            omega_eps: None,
        };
        let h = args.resolve(12, &file);
        assert_eq!((h.a_lambda, h.b_lambda, h.nu), (12.0, 0.5, 3.0));
    }

    #[test]
    fn file_config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"iterations": 10, "bogus": 1}"#).unwrap();
        assert!(matches!(FileConfig::load(Some(&p)), Err(Error::Config(_))));
        fs::write(&p, r#"{"iterations": 10}"#).unwrap();
        assert_eq!(FileConfig::load(Some(&p)).unwrap().iterations, Some(10));
    }
}
