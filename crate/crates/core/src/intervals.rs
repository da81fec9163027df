//! Delta-method credible intervals on the `log(-log)` scale and survival
//! quantiles on the bin grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LpsmcError, Result};
use crate::laplace::FitResult;
use crate::model::{logistic, softplus, LatentLayout, SplineHazard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    LogMinusLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub transform: Transform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IncidenceTarget {
    /// `p(x)`, the probability of being susceptible.
    Uncured,
    /// `1 - p(x)`, the cure probability.
    Cured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QuantileProfile {
    Baseline,
    Latency(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalQuantile {
    /// Left edge of the first bin where the survival is at most `1 - q`.
    pub time: f64,
    /// 1-based bin index of `time`.
    pub bin: usize,
    pub attained: bool,
}

/// Standard normal quantile `z_{alpha/2}` for a `(1 - alpha)` interval.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(LpsmcError::Config(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(0.0);
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

fn quadratic_form(grad: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    grad.dot(&(cov * grad)).max(0.0)
}

/// Interval for `exp(-exp(g))` given the `g`-scale center and gradient.
fn log_minus_log_interval(g: f64, grad: &DVector<f64>, cov: &DMatrix<f64>, alpha: f64) -> Result<CredibleInterval> {
    let half = normal_quantile(alpha)? * quadratic_form(grad, cov).sqrt();
    let map = |x: f64| (-x.exp()).exp();
    let (a, b) = (map(g - half), map(g + half));
    Ok(CredibleInterval {
        point: map(g),
        lower: a.min(b),
        upper: a.max(b),
        level: 1.0 - alpha,
        transform: Transform::LogMinusLog,
    })
}

/// Cached spline quantities of a fit for repeated interval calls.
#[derive(Debug, Clone)]
pub struct IntervalEngine<'a> {
    fit: &'a FitResult,
    hazard: SplineHazard,
    /// `omega(m)` for `m = 1..=J`.
    omega: Vec<f64>,
    /// `omega^k(m)` as rows.
    omega_grad: DMatrix<f64>,
}

impl<'a> IntervalEngine<'a> {
    pub fn new(fit: &'a FitResult) -> Result<Self> {
        let hazard = SplineHazard::new(fit.knots, fit.bins)?;
        let theta = fit.latent().theta;
        let h = hazard.hazard_at_midpoints(&theta);
        let width = fit.bins.width();
        let k = fit.layout.num_basis;
        let mut omega = Vec::with_capacity(h.len());
        let mut omega_grad = DMatrix::zeros(h.len(), k);
        let mut acc = 0.0;
        let mut acc_grad = DVector::<f64>::zeros(k);
        for j in 0..h.len() {
            let w = h[j] * width;
            acc += w;
            acc_grad.axpy(w, &hazard.mid_basis().row(j).transpose(), 1.0);
            omega.push(acc);
            omega_grad.set_row(j, &acc_grad.transpose());
        }
        Ok(Self {
            fit,
            hazard,
            omega,
            omega_grad,
        })
    }

    pub fn fit(&self) -> &FitResult {
        self.fit
    }

    fn layout(&self) -> LatentLayout {
        self.fit.layout
    }

    pub fn latent(&self, h: usize, alpha: f64) -> Result<CredibleInterval> {
        let dim = self.layout().dim();
        if h >= dim {
            return Err(LpsmcError::CoordinateOutOfRange { index: h, dim });
        }
        if self.fit.constrained_index == Some(h) {
            return Err(LpsmcError::ConstrainedCoordinate(h));
        }
        let point = self.fit.mean()[h];
        let half = normal_quantile(alpha)? * self.fit.sd(h);
        Ok(CredibleInterval {
            point,
            lower: point - half,
            upper: point + half,
            level: 1.0 - alpha,
            transform: Transform::Identity,
        })
    }

    pub fn incidence(&self, x_row: &[f64], alpha: f64, target: IncidenceTarget) -> Result<CredibleInterval> {
        let layout = self.layout();
        if x_row.len() != layout.num_incidence {
            return Err(LpsmcError::Config(format!(
                "incidence profile needs {} entries (leading 1), got {}",
                layout.num_incidence,
                x_row.len()
            )));
        }
        let beta = self.fit.mean().rows(layout.beta().start, layout.num_incidence);
        let lp: f64 = beta.iter().zip(x_row).map(|(b, x)| b * x).sum();
        let p = logistic(lp);
        if p == 0.0 || p == 1.0 {
            return Err(LpsmcError::TransformSingularity(p));
        }
        // value = exp(-s) with s = softplus(-lp) (uncured) or softplus(lp) (cured)
        let (s, slope) = match target {
            IncidenceTarget::Uncured => (softplus(-lp), -(1.0 - p)),
            IncidenceTarget::Cured => (softplus(lp), p),
        };
        let mut grad = DVector::zeros(layout.dim());
        for (m, x) in x_row.iter().enumerate() {
            grad[layout.beta().start + m] = slope / s * x;
        }
        log_minus_log_interval(s.ln(), &grad, self.fit.covariance(), alpha)
    }

    pub fn baseline_survival_at_bin(&self, bin: usize, alpha: f64) -> Result<CredibleInterval> {
        self.latency_survival_at_bin(&vec![0.0; self.layout().num_latency], bin, alpha)
    }

    pub fn latency_survival_at_bin(&self, z_row: &[f64], bin: usize, alpha: f64) -> Result<CredibleInterval> {
        let layout = self.layout();
        if z_row.len() != layout.num_latency {
            return Err(LpsmcError::Config(format!(
                "latency profile needs {} entries, got {}",
                layout.num_latency,
                z_row.len()
            )));
        }
        let omega = self.omega[bin - 1];
        let gamma = self.fit.mean().rows(layout.gamma().start, layout.num_latency);
        let eta: f64 = gamma.iter().zip(z_row).map(|(g, z)| g * z).sum();
        let mut grad = DVector::zeros(layout.dim());
        for k in layout.theta() {
            grad[k] = self.omega_grad[(bin - 1, k)] / omega;
        }
        for (s, z) in z_row.iter().enumerate() {
            grad[layout.gamma().start + s] = *z;
        }
        log_minus_log_interval(eta + omega.ln(), &grad, self.fit.covariance(), alpha)
    }

    pub fn baseline_survival(&self, t: f64, alpha: f64) -> Result<CredibleInterval> {
        self.baseline_survival_at_bin(self.fit.bins.bin_index(t)?, alpha)
    }

    pub fn latency_survival(&self, z_row: &[f64], t: f64, alpha: f64) -> Result<CredibleInterval> {
        self.latency_survival_at_bin(z_row, self.fit.bins.bin_index(t)?, alpha)
    }

    /// Fitted `S0` or `S_u(. | z)` at the end of bin `m` (index `m - 1`).
    pub fn survival_by_bin(&self, profile: &QuantileProfile) -> Result<Vec<f64>> {
        let risk = match profile {
            QuantileProfile::Baseline => 1.0,
            QuantileProfile::Latency(z) => {
                let layout = self.layout();
                if z.len() != layout.num_latency {
                    return Err(LpsmcError::Config(format!(
                        "latency profile needs {} entries, got {}",
                        layout.num_latency,
                        z.len()
                    )));
                }
                let gamma = self.fit.mean().rows(layout.gamma().start, layout.num_latency);
                gamma.iter().zip(z).map(|(g, zi)| g * zi).sum::<f64>().exp()
            }
        };
        Ok(self.omega.iter().map(|w| (-risk * w).exp()).collect())
    }

    pub fn quantile(&self, q: f64, profile: &QuantileProfile) -> Result<SurvivalQuantile> {
        if !(q > 0.0 && q < 1.0) {
            return Err(LpsmcError::Config(format!("quantile level must lie in (0, 1), got {q}")));
        }
        let survival = self.survival_by_bin(profile)?;
        let bins = self.hazard.bins();
        Ok(match survival.iter().position(|&s| s <= 1.0 - q) {
            Some(idx) => SurvivalQuantile {
                time: bins.left_edge(idx + 1),
                bin: idx + 1,
                attained: true,
            },
            None => SurvivalQuantile {
                time: bins.t_upper(),
                bin: bins.num_bins(),
                attained: false,
            },
        })
    }
}

pub fn ci_latent(fit: &FitResult, h: usize, alpha: f64) -> Result<CredibleInterval> {
    IntervalEngine::new(fit)?.latent(h, alpha)
}

pub fn ci_incidence(fit: &FitResult, x_row: &[f64], alpha: f64, target: IncidenceTarget) -> Result<CredibleInterval> {
    IntervalEngine::new(fit)?.incidence(x_row, alpha, target)
}

pub fn ci_baseline_survival(fit: &FitResult, t: f64, alpha: f64) -> Result<CredibleInterval> {
    IntervalEngine::new(fit)?.baseline_survival(t, alpha)
}

pub fn ci_latency_survival(fit: &FitResult, z_row: &[f64], t: f64, alpha: f64) -> Result<CredibleInterval> {
    IntervalEngine::new(fit)?.latency_survival(z_row, t, alpha)
}

pub fn survival_quantile(fit: &FitResult, q: f64, profile: &QuantileProfile) -> Result<SurvivalQuantile> {
    IntervalEngine::new(fit)?.quantile(q, profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::{BracketOutcome, ConditionalPosterior, DatasetSummary, Hyperparameters};
    use crate::model::BinGrid;
    use crate::spline::KnotGrid;
    use approx::assert_relative_eq;

    fn synthetic_fit(mean: DVector<f64>, covariance: DMatrix<f64>) -> FitResult {
        let layout = LatentLayout::new(6, 1, 2);
        FitResult {
            v_star: 2.0,
            posterior: ConditionalPosterior {
                mean,
                covariance,
                lambda: 2f64.exp(),
                converged: true,
                iterations: 3,
                grad_norm: 0.0,
                loglik: 0.0,
                log_det_curvature: 0.0,
            },
            constrained_index: Some(5),
            hyper: Hyperparameters::default(),
            knots: KnotGrid::new(6.0, 6).unwrap(),
            bins: BinGrid::new(6.0, 120).unwrap(),
            layout,
            summary: DatasetSummary {
                n: 10,
                p: 1,
                q: 2,
                events: 5,
            },
            bracket: BracketOutcome {
                v_star: 2.0,
                evaluations: vec![],
                hit_lower_bound: false,
            },
            v_profile: None,
        }
    }

    fn mean10() -> DVector<f64> {
        DVector::from_vec(vec![-0.5, -0.3, 0.0, 0.2, 0.4, 1.0, 0.8, -0.6, 0.3, -0.2])
    }

    fn cov10() -> DMatrix<f64> {
        let a = DMatrix::from_fn(10, 10, |i, j| ((i * 7 + j * 3) % 11) as f64 / 40.0 - 0.1);
        let mut cov = &a * a.transpose() * 0.2;
        for i in 0..10 {
            cov[(5, i)] = 0.0;
            cov[(i, 5)] = 0.0;
        }
        cov
    }

    #[test]
    fn latent_interval_arithmetic() {
        let mut mean = mean10();
        mean[6] = 1.0;
        let mut cov = DMatrix::zeros(10, 10);
        cov[(6, 6)] = 0.04;
        let fit = synthetic_fit(mean, cov);
        let ci = ci_latent(&fit, 6, 0.05).unwrap();
        assert_relative_eq!(ci.lower, 1.0 - 1.959964 * 0.2, epsilon = 1e-6);
        assert_relative_eq!(ci.upper, 1.0 + 1.959964 * 0.2, epsilon = 1e-6);
        assert!((ci.lower - 0.608).abs() < 5e-4 && (ci.upper - 1.392).abs() < 5e-4);
        let degenerate = ci_latent(&fit, 6, 1.0).unwrap();
        assert_eq!((degenerate.lower, degenerate.upper), (1.0, 1.0));
        assert!(matches!(ci_latent(&fit, 5, 0.05), Err(LpsmcError::ConstrainedCoordinate(5))));
        assert!(ci_latent(&fit, 10, 0.05).is_err());
    }

    #[test]
    fn zero_covariance_collapses() {
        let fit = synthetic_fit(mean10(), DMatrix::zeros(10, 10));
        let engine = IntervalEngine::new(&fit).unwrap();
        let inc = engine.incidence(&[1.0, 0.4], 0.05, IncidenceTarget::Uncured).unwrap();
        assert_relative_eq!(inc.lower, inc.point, epsilon = 1e-15);
        assert_relative_eq!(inc.upper, inc.point, epsilon = 1e-15);
        assert_relative_eq!(inc.point, logistic(0.8 - 0.6 * 0.4), max_relative = 1e-12);
        let s0 = engine.baseline_survival(2.0, 0.05).unwrap();
        assert_eq!(s0.lower, s0.point);
        assert_eq!(s0.upper, s0.point);
    }

    #[test]
    fn cured_is_complement() {
        let fit = synthetic_fit(mean10(), cov10());
        let engine = IntervalEngine::new(&fit).unwrap();
        let uncured = engine.incidence(&[1.0, -1.0], 0.1, IncidenceTarget::Uncured).unwrap();
        let cured = engine.incidence(&[1.0, -1.0], 0.1, IncidenceTarget::Cured).unwrap();
        assert_relative_eq!(uncured.point + cured.point, 1.0, epsilon = 1e-12);
        assert!(cured.lower <= cured.point && cured.point <= cured.upper);
    }

    #[test]
    fn baseline_gradient_matches_finite_differences() {
        let fit = synthetic_fit(mean10(), cov10());
        let engine = IntervalEngine::new(&fit).unwrap();
        let hazard = SplineHazard::new(fit.knots, fit.bins).unwrap();
        let bin = 77;
        let theta = fit.latent().theta;
        let g = |th: &DVector<f64>| hazard.cumulative_hazard(th)[bin - 1].ln();
        for k in 0..6 {
            let h = 1e-6;
            let mut up = theta.clone();
            up[k] += h;
            let mut down = theta.clone();
            down[k] -= h;
            let fd = (g(&up) - g(&down)) / (2.0 * h);
            let analytic = engine.omega_grad[(bin - 1, k)] / engine.omega[bin - 1];
            assert!((fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3), "{k}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn zero_profile_latency_equals_baseline() {
        let fit = synthetic_fit(mean10(), cov10());
        let engine = IntervalEngine::new(&fit).unwrap();
        let a = engine.baseline_survival(3.1, 0.05).unwrap();
        let b = engine.latency_survival(&[0.0, 0.0], 3.1, 0.05).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nesting_and_ordering() {
        let fit = synthetic_fit(mean10(), cov10());
        let engine = IntervalEngine::new(&fit).unwrap();
        for t in [0.0, 0.5, 2.0, 5.9, 6.0] {
            let c90 = engine.latency_survival(&[0.5, 1.0], t, 0.10).unwrap();
            let c95 = engine.latency_survival(&[0.5, 1.0], t, 0.05).unwrap();
            assert!(c95.lower <= c90.lower && c90.upper <= c95.upper);
            assert!(0.0 <= c95.lower && c95.lower <= c95.point && c95.point <= c95.upper && c95.upper <= 1.0);
        }
    }

    #[test]
    fn quantile_of_unit_exponential() {
        let mut mean = DVector::zeros(10);
        mean[5] = 0.0;
        let fit = synthetic_fit(mean, DMatrix::zeros(10, 10));
        let q = 1.0 - (-1.0f64).exp();
        let found = survival_quantile(&fit, q, &QuantileProfile::Baseline).unwrap();
        assert!(found.attained);
        assert!((found.time - 1.0).abs() <= fit.bins.width());
        assert_eq!(fit.bins.bin_index(found.time).unwrap(), found.bin);
        let first = survival_quantile(&fit, 1e-9, &QuantileProfile::Baseline).unwrap();
        assert_eq!((first.time, first.bin), (0.0, 1));
        let never = survival_quantile(&fit, 1.0 - 1e-6, &QuantileProfile::Baseline).unwrap();
        assert!(!never.attained);
        assert_eq!(never.time, 6.0);
    }

    #[test]
    fn singular_incidence_is_reported() {
        let mut mean = mean10();
        mean[6] = 800.0;
        let fit = synthetic_fit(mean, cov10());
        assert!(matches!(
            ci_incidence(&fit, &[1.0, 0.0], 0.05, IncidenceTarget::Uncured),
            Err(LpsmcError::TransformSingularity(_))
        ));
    }
}
