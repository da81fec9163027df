//! Data-generating scenarios, replication studies and their metrics.
//!
//! Each replication `r` draws from `ChaCha8Rng::seed_from_u64(base_seed)` on
//! stream `r`, so results do not depend on the number of worker threads.
//! Replications run on a rayon pool bounded by `LPSMC_THREADS` when set.

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LpsmcError, Result};
use crate::intervals::{IncidenceTarget, IntervalEngine};
use crate::laplace::{fit, FitOptions, FitResult, Hyperparameters};
use crate::model::{logistic, SurvivalDataset};

/// How the Weibull latency is restricted to `[0, tau0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatencyTruncation {
    /// Draw from the Weibull conditioned on `T <= tau0`.
    Conditioned,
    /// Draw from the Weibull and cap at `tau0`.
    Capped,
}

/// How the exponential censoring time is restricted to `[0, tau1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CensoringTruncation {
    /// `C = min(Exp(mu_c), tau1)`: administrative end of follow-up at `tau1`.
    Capped,
    /// Draw from the exponential conditioned on `C <= tau1`.
    Conditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub beta: [f64; 3],
    pub gamma: [f64; 2],
    pub nu: f64,
    pub rho: f64,
    pub mu_c: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub cured_time: f64,
    pub n: usize,
    pub latency: LatencyTruncation,
    pub censoring: CensoringTruncation,
}

impl ScenarioConfig {
    pub fn scenario1(n: usize) -> Self {
        Self {
            name: "scenario1".into(),
            beta: [0.70, -1.15, 0.95],
            gamma: [-0.10, 0.25],
            mu_c: 0.16,
            ..Self::template(n)
        }
    }

    pub fn scenario2(n: usize) -> Self {
        Self {
            name: "scenario2".into(),
            beta: [1.25, -0.75, 0.45],
            gamma: [-0.10, 0.20],
            mu_c: 0.05,
            ..Self::template(n)
        }
    }

    pub fn preset(name: &str, n: usize) -> Result<Self> {
        match name {
            "scenario1" => Ok(Self::scenario1(n)),
            "scenario2" => Ok(Self::scenario2(n)),
            other => Err(LpsmcError::Config(format!(
                "unknown scenario '{other}' (expected scenario1 or scenario2)"
            ))),
        }
    }

    fn template(n: usize) -> Self {
        Self {
            name: String::new(),
            beta: [0.0; 3],
            gamma: [0.0; 2],
            nu: 0.25,
            rho: 1.45,
            mu_c: 1.0,
            tau0: 8.0,
            tau1: 11.0,
            cured_time: 20000.0,
            n,
            latency: LatencyTruncation::Conditioned,
            censoring: CensoringTruncation::Capped,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.rho > 0.0 && self.mu_c > 0.0) {
            return Err(LpsmcError::Config("nu, rho and mu_c must be positive".into()));
        }
        if !(0.0 < self.tau0 && self.tau0 < self.tau1 && self.tau1 < self.cured_time) {
            return Err(LpsmcError::Config(
                "need 0 < tau0 < tau1 < cured_time".into(),
            ));
        }
        if self.n == 0 {
            return Err(LpsmcError::Config("sample size must be positive".into()));
        }
        Ok(())
    }

    /// True incidence at `(1, x1, x2)`.
    pub fn incidence(&self, x1: f64, x2: f64) -> f64 {
        logistic(self.beta[0] + self.beta[1] * x1 + self.beta[2] * x2)
    }

    /// Survival of the susceptibles at `z` under the generating mechanism.
    pub fn latency_survival(&self, t: f64, z: [f64; 2]) -> f64 {
        let risk = (self.gamma[0] * z[0] + self.gamma[1] * z[1]).exp();
        let weibull = |s: f64| (-self.nu * s.powf(self.rho) * risk).exp();
        match self.latency {
            LatencyTruncation::Conditioned => {
                if t >= self.tau0 {
                    0.0
                } else {
                    let end = weibull(self.tau0);
                    (weibull(t) - end) / (1.0 - end)
                }
            }
            LatencyTruncation::Capped => {
                if t >= self.tau0 {
                    0.0
                } else {
                    weibull(t)
                }
            }
        }
    }

    /// Time `t_q` with generating latency survival `1 - q` at `z`.
    pub fn latency_quantile(&self, q: f64, z: [f64; 2]) -> f64 {
        let risk = (self.gamma[0] * z[0] + self.gamma[1] * z[1]).exp();
        let target = match self.latency {
            LatencyTruncation::Conditioned => {
                let end = (-self.nu * self.tau0.powf(self.rho) * risk).exp();
                (1.0 - q) * (1.0 - end) + end
            }
            LatencyTruncation::Capped => 1.0 - q,
        };
        let t = (-target.ln() / (self.nu * risk)).powf(1.0 / self.rho);
        t.min(self.tau0)
    }
}

/// Simulated dataset with its hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub data: SurvivalDataset,
    pub cured: Vec<bool>,
    pub event_times: Vec<f64>,
    pub censoring_times: Vec<f64>,
}

impl SimulatedDataset {
    pub fn cure_fraction(&self) -> f64 {
        self.cured.iter().filter(|&&c| c).count() as f64 / self.cured.len() as f64
    }

    pub fn censoring_fraction(&self) -> f64 {
        let events = self.data.num_events();
        1.0 - events as f64 / self.data.n() as f64
    }

    pub fn plateau_fraction(&self) -> f64 {
        plateau_fraction(&self.data)
    }
}

/// Share of observations followed strictly beyond the last event time.
pub fn plateau_fraction(data: &SurvivalDataset) -> f64 {
    let last_event = data
        .times()
        .iter()
        .zip(data.events())
        .filter(|(_, &e)| e)
        .map(|(&t, _)| t)
        .fold(f64::NEG_INFINITY, f64::max);
    let beyond = data.times().iter().filter(|&&t| t > last_event).count();
    beyond as f64 / data.n() as f64
}

/// Inverse of the Weibull survival conditioned on `T <= tau0`.
pub fn truncated_weibull_inverse(u: f64, risk: f64, nu: f64, rho: f64, tau0: f64) -> f64 {
    let mass = -(-nu * tau0.powf(rho) * risk).exp_m1();
    let t = (-(-u * mass).ln_1p() / (nu * risk)).powf(1.0 / rho);
    t.min(tau0)
}

/// One latency draw for a susceptible unit, conditioned on `T <= tau0`.
pub fn weibull_latency_draw<R: Rng + ?Sized>(
    rng: &mut R,
    gamma: &[f64],
    z_row: &[f64],
    nu: f64,
    rho: f64,
    tau0: f64,
) -> f64 {
    let risk = gamma.iter().zip(z_row).map(|(g, z)| g * z).sum::<f64>().exp();
    let u: f64 = rng.random();
    truncated_weibull_inverse(u, risk, nu, rho, tau0)
}

fn capped_weibull_draw<R: Rng + ?Sized>(rng: &mut R, risk: f64, nu: f64, rho: f64, tau0: f64) -> f64 {
    let u: f64 = rng.random();
    let t = (-(-u).ln_1p() / (nu * risk)).powf(1.0 / rho);
    t.min(tau0)
}

pub fn censoring_draw<R: Rng + ?Sized>(rng: &mut R, mu_c: f64, tau1: f64, scheme: CensoringTruncation) -> f64 {
    match scheme {
        CensoringTruncation::Capped => {
            let exp = Exp::new(mu_c).expect("positive rate");
            exp.sample(rng).min(tau1)
        }
        CensoringTruncation::Conditioned => {
            let u: f64 = rng.random();
            let mass = -(-mu_c * tau1).exp_m1();
            (-(-u * mass).ln_1p() / mu_c).min(tau1)
        }
    }
}

/// CDF of the censoring time under `scheme`.
pub fn censoring_cdf(c: f64, mu_c: f64, tau1: f64, scheme: CensoringTruncation) -> f64 {
    if c >= tau1 {
        return 1.0;
    }
    let base = -(-mu_c * c.max(0.0)).exp_m1();
    match scheme {
        CensoringTruncation::Capped => base,
        CensoringTruncation::Conditioned => base / -(-mu_c * tau1).exp_m1(),
    }
}

/// Draw one dataset from `rng`.
pub fn generate_with_rng<R: Rng + ?Sized>(scenario: &ScenarioConfig, rng: &mut R) -> Result<SimulatedDataset> {
    scenario.validate()?;
    let n = scenario.n;
    let mut x = DMatrix::zeros(n, 3);
    let mut z = DMatrix::zeros(n, 2);
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    let mut cured = Vec::with_capacity(n);
    let mut event_times = Vec::with_capacity(n);
    let mut censoring_times = Vec::with_capacity(n);
    let half = Bernoulli::new(0.5).expect("valid probability");
    let forty = Bernoulli::new(0.4).expect("valid probability");
    for i in 0..n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2 = f64::from(u8::from(half.sample(rng)));
        let z1: f64 = rng.sample(StandardNormal);
        let z2 = f64::from(u8::from(forty.sample(rng)));
        let p = scenario.incidence(x1, x2);
        let uncured = Bernoulli::new(p).expect("probability in [0, 1]").sample(rng);
        let t = if uncured {
            let risk = (scenario.gamma[0] * z1 + scenario.gamma[1] * z2).exp();
            match scenario.latency {
                LatencyTruncation::Conditioned => {
                    let u: f64 = rng.random();
                    truncated_weibull_inverse(u, risk, scenario.nu, scenario.rho, scenario.tau0)
                }
                LatencyTruncation::Capped => capped_weibull_draw(rng, risk, scenario.nu, scenario.rho, scenario.tau0),
            }
        } else {
            scenario.cured_time
        };
        let c = censoring_draw(rng, scenario.mu_c, scenario.tau1, scenario.censoring);
        x[(i, 0)] = 1.0;
        x[(i, 1)] = x1;
        x[(i, 2)] = x2;
        z[(i, 0)] = z1;
        z[(i, 1)] = z2;
        times.push(t.min(c));
        events.push(t <= c);
        cured.push(!uncured);
        event_times.push(t);
        censoring_times.push(c);
    }
    let data = SurvivalDataset::new(times, events, x, z)?;
    Ok(SimulatedDataset {
        data,
        cured,
        event_times,
        censoring_times,
    })
}

pub fn replication_rng(base_seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replication);
    rng
}

/// Deterministic dataset for `seed` (stream 0).
pub fn generate_dataset(scenario: &ScenarioConfig, seed: u64) -> Result<SimulatedDataset> {
    generate_with_rng(scenario, &mut replication_rng(seed, 0))
}

/// Grid of `(1, x1, x2)` profiles with `x1` in `[-1.5, 1.5]` (step 0.001) and `x2` in `{0, 1}`.
pub fn ase_grid() -> Vec<[f64; 2]> {
    let mut grid = Vec::with_capacity(6002);
    for x2 in [0.0, 1.0] {
        for i in 0..=3000 {
            grid.push([-1.5 + i as f64 * 0.001, x2]);
        }
    }
    grid
}

/// Average squared error of an incidence estimate `p_hat` over the ASE grid.
pub fn ase_incidence_with<F: Fn(f64, f64) -> f64>(p_hat: F, scenario: &ScenarioConfig) -> f64 {
    let grid = ase_grid();
    let total: f64 = grid
        .iter()
        .map(|&[x1, x2]| {
            let d = p_hat(x1, x2) - scenario.incidence(x1, x2);
            d * d
        })
        .sum();
    total / grid.len() as f64
}

pub fn ase_incidence(fit: &FitResult, scenario: &ScenarioConfig) -> f64 {
    let beta = fit.latent().beta;
    ase_incidence_with(|x1, x2| logistic(beta[0] + beta[1] * x1 + beta[2] * x2), scenario)
}

/// Extra per-replication outputs of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    /// Quantile levels `q` at which survival coverage is measured (empty: skip).
    pub survival_quantiles: Vec<f64>,
    /// Latency profile for the `S_u` coverage.
    pub latency_profile: [f64; 2],
    /// Incidence profile `(x1, x2)` for the incidence coverage.
    pub incidence_profile: [f64; 2],
    /// Keep the fitted baseline survival on the bin grid of every replication.
    pub keep_curves: bool,
    /// Reuse stream 0 for every replication.
    pub identical_streams: bool,
    pub fit: FitOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            survival_quantiles: Vec::new(),
            latency_profile: [0.0, 0.4],
            incidence_profile: [0.0, 0.5],
            keep_curves: false,
            identical_streams: false,
            fit: FitOptions::default(),
        }
    }
}

pub const PARAMETER_NAMES: [&str; 5] = ["beta0", "beta1", "beta2", "gamma1", "gamma2"];
pub const SURVIVAL_QUANTILES: [f64; 9] = [0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub estimates: [f64; 5],
    pub covered90: [bool; 5],
    pub covered95: [bool; 5],
    pub ase: f64,
    pub incidence_covered: [bool; 2],
    /// Per quantile: `(S0 at 90, S0 at 95, S_u at 90, S_u at 95)`.
    pub survival_covered: Vec<[bool; 4]>,
    pub v_star: f64,
    pub curve: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub ese: f64,
    pub rmse: f64,
    pub cp90: f64,
    pub cp95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub quantiles: Vec<f64>,
    pub baseline90: Vec<f64>,
    pub baseline95: Vec<f64>,
    pub uncured90: Vec<f64>,
    pub uncured95: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub scenario: String,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub rows: Vec<ParameterRow>,
    /// Coverage of the 90% and 95% intervals for `p(x)` at the incidence profile.
    pub incidence_cp: [f64; 2],
    pub ase: Vec<f64>,
    pub coverage: Option<CoverageTable>,
    pub outcomes: Vec<ReplicationOutcome>,
}

fn replicate(
    scenario: &ScenarioConfig,
    hyper: &Hyperparameters,
    options: &StudyOptions,
    rng: &mut ChaCha8Rng,
) -> Result<ReplicationOutcome> {
    let sim = generate_with_rng(scenario, rng)?;
    let fit_options = FitOptions {
        t_upper: options.fit.t_upper.or(Some(scenario.tau1)),
        ..options.fit.clone()
    };
    let fitted = fit(&sim.data, hyper, &fit_options)?;
    let engine = IntervalEngine::new(&fitted)?;
    let layout = fitted.layout;
    let truth = [
        scenario.beta[0],
        scenario.beta[1],
        scenario.beta[2],
        scenario.gamma[0],
        scenario.gamma[1],
    ];
    let indices: Vec<usize> = layout.beta().chain(layout.gamma()).collect();
    let mut estimates = [0.0; 5];
    let mut covered90 = [false; 5];
    let mut covered95 = [false; 5];
    for (j, &h) in indices.iter().enumerate() {
        estimates[j] = fitted.mean()[h];
        let c90 = engine.latent(h, 0.10)?;
        let c95 = engine.latent(h, 0.05)?;
        covered90[j] = c90.lower <= truth[j] && truth[j] <= c90.upper;
        covered95[j] = c95.lower <= truth[j] && truth[j] <= c95.upper;
    }
    let [px1, px2] = options.incidence_profile;
    let p_true = scenario.incidence(px1, px2);
    let mut incidence_covered = [false; 2];
    for (slot, alpha) in [0.10, 0.05].into_iter().enumerate() {
        let ci = engine.incidence(&[1.0, px1, px2], alpha, IncidenceTarget::Uncured)?;
        incidence_covered[slot] = ci.lower <= p_true && p_true <= ci.upper;
    }
    let mut survival_covered = Vec::with_capacity(options.survival_quantiles.len());
    for &q in &options.survival_quantiles {
        let target = 1.0 - q;
        let t0 = scenario.latency_quantile(q, [0.0, 0.0]);
        let tz = scenario.latency_quantile(q, options.latency_profile);
        let mut cell = [false; 4];
        for (slot, alpha) in [0.10, 0.05].into_iter().enumerate() {
            let s0 = engine.baseline_survival(t0, alpha)?;
            let su = engine.latency_survival(&options.latency_profile, tz, alpha)?;
            cell[slot] = s0.lower <= target && target <= s0.upper;
            cell[2 + slot] = su.lower <= target && target <= su.upper;
        }
        survival_covered.push(cell);
    }
    let curve = if options.keep_curves {
        Some(engine.survival_by_bin(&crate::intervals::QuantileProfile::Baseline)?)
    } else {
        None
    };
    Ok(ReplicationOutcome {
        estimates,
        covered90,
        covered95,
        ase: ase_incidence(&fitted, scenario),
        incidence_covered,
        survival_covered,
        v_star: fitted.v_star,
        curve,
    })
}

fn worker_pool() -> Option<rayon::ThreadPool> {
    let threads = std::env::var("LPSMC_THREADS").ok()?.parse::<usize>().ok()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .ok()
}

fn percent(hits: impl Iterator<Item = bool>, total: usize) -> f64 {
    100.0 * hits.filter(|&h| h).count() as f64 / total as f64
}

/// Fit `replications` simulated datasets and aggregate the metrics.
pub fn run_study(
    scenario: &ScenarioConfig,
    replications: usize,
    base_seed: u64,
    hyper: &Hyperparameters,
    options: &StudyOptions,
) -> Result<StudySummary> {
    if replications < 2 {
        return Err(LpsmcError::Config("a study needs at least 2 replications".into()));
    }
    scenario.validate()?;
    hyper.validate()?;
    let run = || {
        (0..replications)
            .into_par_iter()
            .map(|r| {
                let stream = if options.identical_streams { 0 } else { r as u64 };
                let mut rng = replication_rng(base_seed, stream);
                replicate(scenario, hyper, options, &mut rng)
            })
            .collect::<Vec<_>>()
    };
    let results = match worker_pool() {
        Some(pool) => pool.install(run),
        None => run(),
    };
    let mut outcomes = Vec::with_capacity(replications);
    let mut failures = 0;
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(outcome) => outcomes.push(outcome),
            Err(e) => {
                warn!("replication {r} failed: {e}");
                failures += 1;
            }
        }
    }
    if failures * 10 > replications {
        return Err(LpsmcError::StudyFailure {
            failed: failures,
            total: replications,
        });
    }
    Ok(summarize(scenario, replications, failures, outcomes, &options.survival_quantiles))
}

fn summarize(
    scenario: &ScenarioConfig,
    replications: usize,
    failures: usize,
    outcomes: Vec<ReplicationOutcome>,
    quantiles: &[f64],
) -> StudySummary {
    let s = outcomes.len();
    let truth = [
        scenario.beta[0],
        scenario.beta[1],
        scenario.beta[2],
        scenario.gamma[0],
        scenario.gamma[1],
    ];
    let rows = (0..5)
        .map(|j| {
            let values: Vec<f64> = outcomes.iter().map(|o| o.estimates[j]).collect();
            let mean = values.iter().sum::<f64>() / s as f64;
            let ese = if s > 1 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (s - 1) as f64).sqrt()
            } else {
                0.0
            };
            let rmse = (values.iter().map(|v| (v - truth[j]) * (v - truth[j])).sum::<f64>() / s as f64).sqrt();
            ParameterRow {
                parameter: PARAMETER_NAMES[j].to_string(),
                truth: truth[j],
                mean,
                bias: mean - truth[j],
                ese,
                rmse,
                cp90: percent(outcomes.iter().map(|o| o.covered90[j]), s),
                cp95: percent(outcomes.iter().map(|o| o.covered95[j]), s),
            }
        })
        .collect();
    let incidence_cp = [
        percent(outcomes.iter().map(|o| o.incidence_covered[0]), s),
        percent(outcomes.iter().map(|o| o.incidence_covered[1]), s),
    ];
    let coverage = (!quantiles.is_empty()).then(|| {
        let column = |slot: usize| {
            (0..quantiles.len())
                .map(|k| percent(outcomes.iter().map(|o| o.survival_covered[k][slot]), s))
                .collect::<Vec<_>>()
        };
        CoverageTable {
            quantiles: quantiles.to_vec(),
            baseline90: column(0),
            baseline95: column(1),
            uncured90: column(2),
            uncured95: column(3),
        }
    });
    StudySummary {
        scenario: scenario.name.clone(),
        n: scenario.n,
        replications,
        failures,
        rows,
        incidence_cp,
        ase: outcomes.iter().map(|o| o.ase).collect(),
        coverage,
        outcomes,
    }
}

/// Coverage of the `S0` and `S_u(. | z)` intervals at the generating `t_q`,
/// with `num_basis` B-splines (30 by default in the reference study).
pub fn coverage_survival(
    scenario: &ScenarioConfig,
    replications: usize,
    base_seed: u64,
    num_basis: usize,
    quantiles: &[f64],
) -> Result<CoverageTable> {
    let hyper = Hyperparameters {
        num_basis,
        ..Hyperparameters::default()
    };
    let options = StudyOptions {
        survival_quantiles: quantiles.to_vec(),
        ..StudyOptions::default()
    };
    let summary = run_study(scenario, replications, base_seed, &hyper, &options)?;
    Ok(summary.coverage.expect("quantiles requested"))
}

impl StudySummary {
    pub fn median_ase(&self) -> f64 {
        let mut sorted = self.ase.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        if m == 0 {
            return f64::NAN;
        }
        if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        }
    }

    pub fn row(&self, parameter: &str) -> Option<&ParameterRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }

    pub fn rows_to_csv(&self) -> Result<String> {
        write_rows(&self.rows)
    }

    /// Plain-text table with the columns Parameters, Mean, Bias, ESE, RMSE, CP90, CP95.
    pub fn text_table(&self) -> String {
        let mut out = format!(
            "{} (n = {}, S = {}, failures = {})\n",
            self.scenario, self.n, self.replications, self.failures
        );
        out.push_str(&format!(
            "{:<18} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7}\n",
            "Parameters", "Mean", "Bias", "ESE", "RMSE", "CP90", "CP95"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<18} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>7.1} {:>7.1}\n",
                format!("{} = {:.2}", row.parameter, row.truth),
                row.mean,
                row.bias,
                row.ese,
                row.rmse,
                row.cp90,
                row.cp95
            ));
        }
        out.push_str(&format!(
            "incidence at profile: CP90 {:.1}, CP95 {:.1}; median ASE {:.5}\n",
            self.incidence_cp[0],
            self.incidence_cp[1],
            self.median_ase()
        ));
        if let Some(cov) = &self.coverage {
            out.push_str(&format!("{:<14}", "quantile"));
            for q in &cov.quantiles {
                out.push_str(&format!(" {:>6}", format!("t{:.2}", q)));
            }
            out.push('\n');
            for (label, values) in [
                ("S0 90", &cov.baseline90),
                ("S0 95", &cov.baseline95),
                ("Su 90", &cov.uncured90),
                ("Su 95", &cov.uncured95),
            ] {
                out.push_str(&format!("{label:<14}"));
                for v in values {
                    out.push_str(&format!(" {v:>6.1}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn write_rows(rows: &[ParameterRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| LpsmcError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_rows(text: &str) -> Result<Vec<ParameterRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<ParameterRow>, _>>()
        .map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_reference_values() {
        let s1 = ScenarioConfig::scenario1(300);
        assert_eq!(s1.beta, [0.70, -1.15, 0.95]);
        assert_eq!(s1.gamma, [-0.10, 0.25]);
        assert_eq!(s1.mu_c, 0.16);
        let s2 = ScenarioConfig::scenario2(300);
        assert_eq!(s2.beta, [1.25, -0.75, 0.45]);
        assert_eq!(s2.gamma, [-0.10, 0.20]);
        assert_eq!(s2.mu_c, 0.05);
        for s in [s1, s2] {
            assert_eq!((s.nu, s.rho, s.tau0, s.tau1, s.cured_time), (0.25, 1.45, 8.0, 11.0, 20000.0));
        }
        assert!(ScenarioConfig::preset("scenario3", 10).is_err());
    }

    #[test]
    fn inversion_limits() {
        assert_eq!(truncated_weibull_inverse(0.0, 1.0, 0.25, 1.45, 8.0), 0.0);
        let top = truncated_weibull_inverse(1.0 - 1e-15, 1.0, 0.25, 1.45, 8.0);
        assert!((top - 8.0).abs() < 1e-6, "{top}");
    }

    #[test]
    fn latency_quantile_inverts_survival() {
        let s = ScenarioConfig::scenario1(10);
        for q in SURVIVAL_QUANTILES {
            for z in [[0.0, 0.0], [0.0, 0.4], [1.2, 1.0]] {
                let t = s.latency_quantile(q, z);
                assert!((s.latency_survival(t, z) - (1.0 - q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cured_units_are_censored() {
        let sim = generate_dataset(&ScenarioConfig::scenario1(2000), 9).unwrap();
        for i in 0..2000 {
            if sim.cured[i] {
                assert!(!sim.data.events()[i]);
                assert!(sim.data.times()[i] <= 11.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = ScenarioConfig::scenario2(50);
        assert_eq!(generate_dataset(&s, 4).unwrap(), generate_dataset(&s, 4).unwrap());
        assert_ne!(
            generate_dataset(&s, 4).unwrap().data.times(),
            generate_dataset(&s, 5).unwrap().data.times()
        );
    }

    #[test]
    fn ase_of_truth_and_shift() {
        let s = ScenarioConfig::scenario1(10);
        assert_eq!(ase_incidence_with(|a, b| s.incidence(a, b), &s), 0.0);
        let shifted = ase_incidence_with(|a, b| s.incidence(a, b) + 0.1, &s);
        assert!((shifted - 0.01).abs() < 1e-12);
        assert_eq!(ase_grid().len(), 6002);
    }

    #[test]
    fn censoring_cdf_schemes() {
        assert_eq!(censoring_cdf(11.0, 0.16, 11.0, CensoringTruncation::Capped), 1.0);
        let below = censoring_cdf(10.999, 0.16, 11.0, CensoringTruncation::Capped);
        assert!(below < 0.9);
        let cond = censoring_cdf(10.999999, 0.16, 11.0, CensoringTruncation::Conditioned);
        assert!((cond - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rows_csv_round_trip() {
        let rows = vec![ParameterRow {
            parameter: "beta1".into(),
            truth: -1.15,
            mean: -1.1801234567890123,
            bias: -0.030123456789012345,
            ese: 0.24,
            rmse: 0.2421,
            cp90: 91.0,
            cp95: 95.0,
        }];
        let text = write_rows(&rows).unwrap();
        let back = read_rows(&text).unwrap();
        assert_eq!(back, rows);
        assert_eq!(write_rows(&back).unwrap(), text);
    }
}
