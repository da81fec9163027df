//! The `lpsmc` command line: `fit`, `intervals`, `simulate` and `km`.
//!
//! Exit codes: 0 success, 2 configuration or input error (including usage
//! errors), 3 numerical failure, 4 I/O failure.

pub mod csv_io;
pub mod fit_file;
pub mod km;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{LpsmcError, Result};
use crate::intervals::{CredibleInterval, IncidenceTarget, IntervalEngine, QuantileProfile};
use crate::laplace::{fit, profile_for_fit, FitOptions, Hyperparameters};
use crate::simulation::{run_study, ScenarioConfig, StudyOptions, SURVIVAL_QUANTILES};

pub use csv_io::{load_csv, read_csv, ColumnMapping, LoadedData};
pub use fit_file::FitFile;
pub use km::{kaplan_meier, product_limit, KaplanMeierCurve};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "lpsmc", version, about = "Bayesian mixture cure models with penalized B-splines and Laplace approximations")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a mixture cure model to a CSV file.
    Fit(FitArgs),
    /// Evaluate credible intervals from a saved fit file.
    Intervals(IntervalsArgs),
    /// Run a replication study on a preset scenario.
    Simulate(SimulateArgs),
    /// Kaplan-Meier curve of a CSV file.
    Km(KmArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "status")]
    pub status_col: String,
    #[arg(long, value_delimiter = ',')]
    pub incidence_cols: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub latency_cols: Vec<String>,
    /// Covariates to center at their sample mean.
    #[arg(long, value_delimiter = ',')]
    pub center: Vec<String>,
}

impl DataArgs {
    pub fn mapping(&self) -> ColumnMapping {
        ColumnMapping {
            time: self.time_col.clone(),
            status: self.status_col.clone(),
            incidence: self.incidence_cols.clone(),
            latency: self.latency_cols.clone(),
            center: self.center.clone(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Number of cubic B-splines.
    #[arg(long = "K", default_value_t = 15)]
    pub num_basis: usize,
    /// Number of bins of the midpoint rule.
    #[arg(long = "J", default_value_t = 300)]
    pub num_bins: usize,
    #[arg(long, default_value_t = 3)]
    pub penalty_order: usize,
    #[arg(long, default_value_t = 0.2)]
    pub delta_v: f64,
    /// Upper end of the spline domain (default: largest follow-up time).
    #[arg(long)]
    pub t_upper: Option<f64>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub constrain_last_theta: bool,
}

impl ModelArgs {
    pub fn hyper(&self) -> Hyperparameters {
        Hyperparameters {
            num_basis: self.num_basis,
            num_bins: self.num_bins,
            penalty_order: self.penalty_order,
            delta_v: self.delta_v,
            ..Hyperparameters::default()
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            constrain_last_theta: self.constrain_last_theta,
            profile_grid: None,
            t_upper: self.t_upper,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Credible levels as alpha values; the first one drives the survival bands.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub alpha: Vec<f64>,
    /// Recorded in the fit file; the fit itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "lpsmc-out")]
    pub out_dir: PathBuf,
    /// Include the spline coefficients in the coefficient table.
    #[arg(long)]
    pub show_spline: bool,
    /// Write the normalized posterior of v on a grid around v*.
    #[arg(long)]
    pub profile: bool,
    #[arg(long, default_value_t = 0.05)]
    pub profile_step: f64,
    #[arg(long, default_value_t = 4.0)]
    pub profile_half_width: f64,
}

#[derive(Debug, Clone, Args)]
pub struct IntervalsArgs {
    #[arg(long)]
    pub fit_file: PathBuf,
    /// Targets such as "latent h=16", "incidence x=1,0.5", "cure x=1,80",
    /// "S0 t=2.5", "S0 q=0.5", "Su z=0,0.4 t=3" or "Su q=0.5" (mean profile).
    #[arg(long = "target", required = true)]
    pub targets: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value = "lpsmc-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "scenario1")]
    pub scenario: String,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub replications: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Measure survival coverage at the standard quantiles.
    #[arg(long)]
    pub coverage: bool,
    /// Write every replication's fitted baseline survival curve.
    #[arg(long)]
    pub dump_curves: bool,
    #[arg(long, default_value = "lpsmc-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct KmArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "status")]
    pub status_col: String,
    #[arg(long, default_value = "lpsmc-out")]
    pub out_dir: PathBuf,
}

/// Row of the coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub model: String,
    pub parameter: String,
    pub estimate: f64,
    pub sd: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Point of a survival curve with its pointwise band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub v: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub target: String,
    pub time: Option<f64>,
    pub level: f64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn exit_code(error: &LpsmcError) -> i32 {
    if error.is_numerical() {
        EXIT_NUMERICAL
    } else if matches!(error, LpsmcError::Io(_)) {
        EXIT_IO
    } else {
        EXIT_CONFIG
    }
}

/// Parse arguments, run the command and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(config) => config,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&config) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            exit_code(&e)
        }
    }
}

pub fn execute(config: &RunConfig) -> Result<()> {
    match &config.command {
        Command::Fit(args) => cmd_fit(args).map(|report| println!("{report}")),
        Command::Intervals(args) => cmd_intervals(args).map(|rows| {
            for row in rows {
                println!(
                    "{:<28} {:>5.1}% {:>9.4} [{:.4}; {:.4}]",
                    row.target,
                    100.0 * row.level,
                    row.point,
                    row.lower,
                    row.upper
                );
            }
        }),
        Command::Simulate(args) => cmd_simulate(args).map(|text| print!("{text}")),
        Command::Km(args) => cmd_km(args).map(|curve| println!("plateau height {:.4}", curve.plateau)),
    }
}

fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(LpsmcError::Config("at least one alpha level is required".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(LpsmcError::Config(format!("alpha must lie in (0, 1), got {a}")));
    }
    Ok(())
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv_rows<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<D>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<D>, _>>()
        .map_err(Into::into)
}

fn format_ci(lower: f64, upper: f64) -> String {
    format!("[{lower:.3}; {upper:.3}]")
}

pub fn coefficient_rows(file: &FitFile, alphas: &[f64], show_spline: bool) -> Result<Vec<CoefficientRow>> {
    let fit = &file.fit;
    let engine = IntervalEngine::new(fit)?;
    let layout = fit.layout;
    let mut entries: Vec<(String, String, usize)> = Vec::new();
    if show_spline {
        for k in layout.theta() {
            entries.push(("Spline".into(), format!("theta{}", k + 1), k));
        }
    }
    for (m, idx) in layout.beta().enumerate() {
        let label = if m == 0 {
            "beta0 (Intercept)".to_string()
        } else {
            format!("beta{m} ({})", file.incidence_names[m - 1])
        };
        entries.push(("Incidence".into(), label, idx));
    }
    for (s, idx) in layout.gamma().enumerate() {
        entries.push((
            "Latency".into(),
            format!("gamma{} ({})", s + 1, file.latency_names[s]),
            idx,
        ));
    }
    let mut rows = Vec::new();
    for (model, parameter, idx) in entries {
        for &alpha in alphas {
            let (lower, upper) = if fit.constrained_index == Some(idx) {
                (fit.mean()[idx], fit.mean()[idx])
            } else {
                let ci = engine.latent(idx, alpha)?;
                (ci.lower, ci.upper)
            };
            rows.push(CoefficientRow {
                model: model.clone(),
                parameter: parameter.clone(),
                estimate: fit.mean()[idx],
                sd: fit.sd(idx),
                level: 1.0 - alpha,
                lower,
                upper,
            });
        }
    }
    Ok(rows)
}

pub fn coefficient_text(rows: &[CoefficientRow]) -> String {
    let mut out = format!(
        "{:<10} {:<22} {:>9} {:>8} {:>7} {}\n",
        "Model", "Parameter", "Estimate", "Sd", "Level", "CI"
    );
    for row in rows {
        out.push_str(&format!(
            "{:<10} {:<22} {:>9.3} {:>8.3} {:>6.0}% {}\n",
            row.model,
            row.parameter,
            row.estimate,
            row.sd,
            100.0 * row.level,
            format_ci(row.lower, row.upper)
        ));
    }
    out
}

pub fn survival_curve(engine: &IntervalEngine<'_>, z: Option<&[f64]>, alpha: f64) -> Result<Vec<CurvePoint>> {
    let bins = engine.fit().bins;
    (1..=bins.num_bins())
        .map(|m| {
            let ci = match z {
                None => engine.baseline_survival_at_bin(m, alpha)?,
                Some(z) => engine.latency_survival_at_bin(z, m, alpha)?,
            };
            Ok(CurvePoint {
                t: bins.left_edge(m),
                estimate: ci.point,
                lower: ci.lower,
                upper: ci.upper,
            })
        })
        .collect()
}

/// Fit the CSV, write all artifacts, return a short report.
pub fn cmd_fit(args: &FitArgs) -> Result<String> {
    validate_alphas(&args.alpha)?;
    let loaded = load_csv(&args.data.input, &args.data.mapping())?;
    let hyper = args.model.hyper();
    let fitted = fit(&loaded.dataset, &hyper, &args.model.fit_options())?;
    let z = loaded.dataset.z();
    let latency_mean: Vec<f64> = (0..z.ncols()).map(|j| z.column(j).mean()).collect();
    let mut fitted = fitted;
    if args.profile {
        if !(args.profile_step > 0.0 && args.profile_half_width > 0.0) {
            return Err(LpsmcError::Config("profile step and half width must be positive".into()));
        }
        let steps = (args.profile_half_width / args.profile_step).round() as i64;
        let grid: Vec<f64> = (-steps..=steps)
            .map(|i| fitted.v_star + i as f64 * args.profile_step)
            .collect();
        fitted.v_profile = Some(profile_for_fit(&loaded.dataset, &fitted, &grid)?);
    }
    let file = FitFile::new(
        fitted,
        loaded.incidence_names.clone(),
        loaded.latency_names.clone(),
        loaded.centers.clone(),
        latency_mean.clone(),
        args.seed,
    );

    fs::create_dir_all(&args.out_dir)?;
    file.write(&args.out_dir.join("fit.json"))?;
    let rows = coefficient_rows(&file, &args.alpha, args.show_spline)?;
    write_csv(&args.out_dir.join("coefficients.csv"), &rows)?;
    let table = coefficient_text(&rows);
    fs::write(args.out_dir.join("coefficients.txt"), &table)?;

    let engine = IntervalEngine::new(&file.fit)?;
    let alpha = args.alpha[0];
    write_csv(&args.out_dir.join("baseline_survival.csv"), &survival_curve(&engine, None, alpha)?)?;
    write_csv(
        &args.out_dir.join("latency_survival.csv"),
        &survival_curve(&engine, Some(&latency_mean), alpha)?,
    )?;
    if let Some(profile) = &file.fit.v_profile {
        let points: Vec<ProfilePoint> = profile.iter().map(|&(v, density)| ProfilePoint { v, density }).collect();
        write_csv(&args.out_dir.join("v_profile.csv"), &points)?;
    }
    Ok(format!(
        "n = {}, events = {}, rejected rows = {}, v* = {:.3}\n{}",
        loaded.dataset.n(),
        loaded.dataset.num_events(),
        loaded.rejected,
        file.fit.v_star,
        table
    ))
}

fn parse_list(value: &str) -> Result<Vec<f64>> {
    let inner = value.trim();
    let inner = inner
        .strip_prefix('(')
        .and_then(|v| v.strip_suffix(')'))
        .unwrap_or(inner);
    inner
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| LpsmcError::Config(format!("'{v}' is not a number")))
        })
        .collect()
}

/// Parsed `intervals` target.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Latent(usize),
    Incidence(Vec<f64>, IncidenceTarget),
    Baseline(TimeSpec),
    Latency(Option<Vec<f64>>, TimeSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSpec {
    At(f64),
    Quantile(f64),
}

pub fn parse_target(text: &str) -> Result<Target> {
    let mut parts = text.split_whitespace();
    let kind = parts
        .next()
        .ok_or_else(|| LpsmcError::Config("empty target".into()))?;
    let mut h = None;
    let mut x = None;
    let mut z = None;
    let mut time = None;
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| LpsmcError::Config(format!("expected key=value in target, got '{part}'")))?;
        match key {
            "h" => {
                h = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| LpsmcError::Config(format!("bad coordinate '{value}'")))?,
                )
            }
            "x" => x = Some(parse_list(value)?),
            "z" => z = Some(parse_list(value)?),
            "t" => time = Some(TimeSpec::At(parse_list(value)?[0])),
            "q" => time = Some(TimeSpec::Quantile(parse_list(value)?[0])),
            other => return Err(LpsmcError::Config(format!("unknown target key '{other}'"))),
        }
    }
    let need_time = || time.ok_or_else(|| LpsmcError::Config(format!("target '{text}' needs t= or q=")));
    match kind {
        "latent" => h
            .map(Target::Latent)
            .ok_or_else(|| LpsmcError::Config("latent target needs h=<index>".into())),
        "incidence" | "cure" => {
            let x = x.ok_or_else(|| LpsmcError::Config(format!("target '{text}' needs x=")))?;
            let which = if kind == "cure" {
                IncidenceTarget::Cured
            } else {
                IncidenceTarget::Uncured
            };
            Ok(Target::Incidence(x, which))
        }
        "S0" => Ok(Target::Baseline(need_time()?)),
        "Su" => Ok(Target::Latency(z, need_time()?)),
        other => Err(LpsmcError::Config(format!(
            "unknown target '{other}' (expected latent, incidence, cure, S0 or Su)"
        ))),
    }
}

/// Evaluate one target at one level; returns the evaluation time when relevant.
pub fn evaluate_target(
    engine: &IntervalEngine<'_>,
    latency_mean: &[f64],
    target: &Target,
    alpha: f64,
) -> Result<(Option<f64>, CredibleInterval)> {
    let bins = engine.fit().bins;
    match target {
        Target::Latent(h) => Ok((None, engine.latent(*h, alpha)?)),
        Target::Incidence(x, which) => Ok((None, engine.incidence(x, alpha, *which)?)),
        Target::Baseline(spec) => {
            let bin = match spec {
                TimeSpec::At(t) => bins.bin_index(*t)?,
                TimeSpec::Quantile(q) => engine.quantile(*q, &QuantileProfile::Baseline)?.bin,
            };
            Ok((Some(bins.left_edge(bin)), engine.baseline_survival_at_bin(bin, alpha)?))
        }
        Target::Latency(z, spec) => {
            let z = z.clone().unwrap_or_else(|| latency_mean.to_vec());
            let bin = match spec {
                TimeSpec::At(t) => bins.bin_index(*t)?,
                TimeSpec::Quantile(q) => engine.quantile(*q, &QuantileProfile::Latency(z.clone()))?.bin,
            };
            Ok((Some(bins.left_edge(bin)), engine.latency_survival_at_bin(&z, bin, alpha)?))
        }
    }
}

pub fn interval_rows(file: &FitFile, targets: &[String], alphas: &[f64]) -> Result<Vec<IntervalRow>> {
    validate_alphas(alphas)?;
    let parsed = targets.iter().map(|t| parse_target(t)).collect::<Result<Vec<_>>>()?;
    let engine = IntervalEngine::new(&file.fit)?;
    let mut rows = Vec::new();
    for (text, target) in targets.iter().zip(&parsed) {
        for &alpha in alphas {
            let (time, ci) = evaluate_target(&engine, &file.latency_mean, target, alpha)?;
            rows.push(IntervalRow {
                target: text.clone(),
                time,
                level: ci.level,
                point: ci.point,
                lower: ci.lower,
                upper: ci.upper,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_intervals(args: &IntervalsArgs) -> Result<Vec<IntervalRow>> {
    let file = FitFile::read(&args.fit_file)?;
    let rows = interval_rows(&file, &args.targets, &args.alpha)?;
    fs::create_dir_all(&args.out_dir)?;
    write_csv(&args.out_dir.join("intervals.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AseRow {
    replication: usize,
    ase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CoverageRow {
    quantile: f64,
    baseline90: f64,
    baseline95: f64,
    uncured90: f64,
    uncured95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StudyCurvePoint {
    t: f64,
    survival: f64,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let scenario = ScenarioConfig::preset(&args.scenario, args.n)?;
    let hyper = args.model.hyper();
    let options = StudyOptions {
        survival_quantiles: if args.coverage { SURVIVAL_QUANTILES.to_vec() } else { Vec::new() },
        keep_curves: args.dump_curves,
        fit: args.model.fit_options(),
        ..StudyOptions::default()
    };
    let summary = run_study(&scenario, args.replications, args.seed, &hyper, &options)?;
    fs::create_dir_all(&args.out_dir)?;
    write_csv(&args.out_dir.join("study.csv"), &summary.rows)?;
    let text = summary.text_table();
    fs::write(args.out_dir.join("study.txt"), &text)?;
    fs::write(args.out_dir.join("study.json"), serde_json::to_string_pretty(&summary)?)?;
    let ase: Vec<AseRow> = summary
        .ase
        .iter()
        .enumerate()
        .map(|(replication, &ase)| AseRow { replication: replication + 1, ase })
        .collect();
    write_csv(&args.out_dir.join("ase.csv"), &ase)?;
    if let Some(cov) = &summary.coverage {
        let rows: Vec<CoverageRow> = (0..cov.quantiles.len())
            .map(|k| CoverageRow {
                quantile: cov.quantiles[k],
                baseline90: cov.baseline90[k],
                baseline95: cov.baseline95[k],
                uncured90: cov.uncured90[k],
                uncured95: cov.uncured95[k],
            })
            .collect();
        write_csv(&args.out_dir.join("coverage.csv"), &rows)?;
    }
    if args.dump_curves {
        let dir = args.out_dir.join("curves");
        fs::create_dir_all(&dir)?;
        let t_upper = args.model.t_upper.unwrap_or(scenario.tau1);
        let width = t_upper / hyper.num_bins as f64;
        for (r, outcome) in summary.outcomes.iter().enumerate() {
            if let Some(curve) = &outcome.curve {
                let points: Vec<StudyCurvePoint> = curve
                    .iter()
                    .enumerate()
                    .map(|(j, &survival)| StudyCurvePoint { t: j as f64 * width, survival })
                    .collect();
                write_csv(&dir.join(format!("replication_{:04}.csv", r + 1)), &points)?;
            }
        }
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmRow {
    pub time: f64,
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
    pub censored: usize,
}

pub fn cmd_km(args: &KmArgs) -> Result<KaplanMeierCurve> {
    let mapping = ColumnMapping {
        time: args.time_col.clone(),
        status: args.status_col.clone(),
        ..ColumnMapping::default()
    };
    let loaded = load_csv(&args.input, &mapping)?;
    let curve = kaplan_meier(&loaded.dataset);
    fs::create_dir_all(&args.out_dir)?;
    let rows: Vec<KmRow> = curve
        .steps
        .iter()
        .map(|s| KmRow {
            time: s.time,
            survival: s.survival,
            at_risk: s.at_risk,
            events: s.events,
            censored: s.censored,
        })
        .collect();
    write_csv(&args.out_dir.join("km.csv"), &rows)?;
    fs::write(args.out_dir.join("km_plateau.txt"), format!("{}\n", curve.plateau))?;
    Ok(curve)
}
