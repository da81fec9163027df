//! Priors, the Newton-Raphson Laplace approximation of the conditional latent
//! posterior, the approximate posterior of `v = log(lambda)`, the bracketing
//! walk for its mode and the end-to-end fit.

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{LpsmcError, Result};
use crate::model::{logistic, BinGrid, LatentLayout, LatentVector, MixtureCureModel, SurvivalDataset};
use crate::spline::{penalty_matrix, KnotGrid, PenaltyMatrix};

/// Prior and algorithm settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub a_lambda: f64,
    pub b_lambda: f64,
    pub zeta: f64,
    pub epsilon: f64,
    pub penalty_order: usize,
    pub num_basis: usize,
    pub num_bins: usize,
    pub v0: f64,
    pub delta_v: f64,
    pub v_min: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            a_lambda: 1.0,
            b_lambda: 1e-5,
            zeta: 1e-6,
            epsilon: 1e-6,
            penalty_order: 3,
            num_basis: 15,
            num_bins: 300,
            v0: 15.0,
            delta_v: 0.2,
            v_min: -10.0,
            newton_tol: 1e-8,
            newton_max_iter: 100,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_lambda", self.a_lambda),
            ("b_lambda", self.b_lambda),
            ("zeta", self.zeta),
            ("epsilon", self.epsilon),
            ("delta_v", self.delta_v),
            ("newton_tol", self.newton_tol),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(LpsmcError::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if self.penalty_order == 0 || self.penalty_order >= self.num_basis {
            return Err(LpsmcError::InvalidOrder {
                order: self.penalty_order,
                num_basis: self.num_basis,
            });
        }
        if self.num_bins == 0 || self.newton_max_iter == 0 {
            return Err(LpsmcError::Config("num_bins and newton_max_iter must be positive".into()));
        }
        if !(self.v_min < self.v0) {
            return Err(LpsmcError::Config(format!(
                "v_min ({}) must lie below v0 ({})",
                self.v_min, self.v0
            )));
        }
        Ok(())
    }
}

/// Block-diagonal prior precision `blockdiag(lambda P, zeta I)`.
pub fn prior_precision(lambda: f64, penalty: &PenaltyMatrix, p: usize, q: usize, zeta: f64) -> DMatrix<f64> {
    let k = penalty.dim();
    let dim = k + p + 1 + q;
    let mut out = DMatrix::zeros(dim, dim);
    out.view_mut((0, 0), (k, k)).copy_from(&(penalty.matrix() * lambda));
    for i in k..dim {
        out[(i, i)] = zeta;
    }
    out
}

/// Prior of the latent vector with cached `log det P`.
#[derive(Debug, Clone)]
pub struct LatentPrior {
    penalty: PenaltyMatrix,
    num_regression: usize,
    zeta: f64,
    log_det_penalty: f64,
}

impl LatentPrior {
    /// `num_regression` counts all non-spline coordinates, `(p + 1) + q`.
    pub fn new(penalty: PenaltyMatrix, num_regression: usize, zeta: f64) -> Result<Self> {
        let chol = Cholesky::new(penalty.matrix().clone()).ok_or_else(|| {
            LpsmcError::Config("penalty matrix is not positive definite; use a positive ridge".into())
        })?;
        let log_det_penalty = log_det_from_cholesky(&chol);
        Ok(Self {
            penalty,
            num_regression,
            zeta,
            log_det_penalty,
        })
    }

    pub fn for_layout(layout: LatentLayout, hyper: &Hyperparameters) -> Result<Self> {
        let penalty = penalty_matrix(layout.num_basis, hyper.penalty_order, hyper.epsilon)?;
        Self::new(penalty, layout.num_incidence + layout.num_latency, hyper.zeta)
    }

    pub fn penalty(&self) -> &PenaltyMatrix {
        &self.penalty
    }

    pub fn dim(&self) -> usize {
        self.penalty.dim() + self.num_regression
    }

    pub fn precision(&self, lambda: f64) -> DMatrix<f64> {
        let k = self.penalty.dim();
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        out.view_mut((0, 0), (k, k))
            .copy_from(&(self.penalty.matrix() * lambda));
        for i in k..self.dim() {
            out[(i, i)] = self.zeta;
        }
        out
    }

    /// `log det Q(exp(v))`.
    pub fn log_det(&self, v: f64) -> f64 {
        self.penalty.dim() as f64 * v + self.log_det_penalty + self.num_regression as f64 * self.zeta.ln()
    }
}

/// A twice-differentiable log-likelihood over a flat latent vector.
pub trait LogLikelihood {
    fn dim(&self) -> usize;
    fn value(&self, xi: &DVector<f64>) -> Result<f64>;
    fn gradient_hessian(&self, xi: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

impl LogLikelihood for MixtureCureModel<'_> {
    fn dim(&self) -> usize {
        self.layout().dim()
    }

    fn value(&self, xi: &DVector<f64>) -> Result<f64> {
        self.loglik(&LatentVector::from_flat(self.layout(), xi))
    }

    fn gradient_hessian(&self, xi: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let latent = LatentVector::from_flat(self.layout(), xi);
        let cache = self.omega_cache(&latent.theta);
        Ok((self.gradient(&latent, &cache), self.hessian(&latent, &cache)))
    }
}

/// Gaussian log-density kernel `-(xi - m)' A (xi - m) / 2`.
#[derive(Debug, Clone)]
pub struct QuadraticLikelihood {
    pub precision: DMatrix<f64>,
    pub center: DVector<f64>,
}

impl LogLikelihood for QuadraticLikelihood {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, xi: &DVector<f64>) -> Result<f64> {
        let d = xi - &self.center;
        Ok(-0.5 * d.dot(&(&self.precision * &d)))
    }

    fn gradient_hessian(&self, xi: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = xi - &self.center;
        Ok((-(&self.precision * d), -self.precision.clone()))
    }
}

/// Gaussian approximation `N(mean, covariance)` of the conditional posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPosterior {
    pub mean: DVector<f64>,
    /// Zero rows and columns at fixed coordinates.
    pub covariance: DMatrix<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Log-likelihood at the mean.
    pub loglik: f64,
    /// `log det (Q - H)` over the free coordinates.
    pub log_det_curvature: f64,
}

fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn restrict(m: &DMatrix<f64>, free: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(free.len(), free.len(), |i, j| m[(free[i], free[j])])
}

/// Cholesky factor of `m`, adding `jitter I` (1e-6, x10 escalation) on failure.
fn factor_with_jitter(m: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok((chol, 0.0));
    }
    let scale = m.diagonal().amax().max(1.0);
    let mut jitter = 1e-6;
    while jitter <= 1e12 * scale {
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(LpsmcError::NonConvergence {
        iterations: 0,
        grad_norm: f64::NAN,
        last: Vec::new(),
    })
}

fn objective<L: LogLikelihood>(lik: &L, q: &DMatrix<f64>, xi: &DVector<f64>) -> Result<(f64, f64)> {
    let ll = lik.value(xi)?;
    Ok((ll - 0.5 * xi.dot(&(q * xi)), ll))
}

/// Newton-Raphson maximization of `loglik(xi) - xi' Q xi / 2` over the
/// coordinates not listed in `fixed`, which keep their values from `init`.
pub fn laplace_approx<L: LogLikelihood>(
    lik: &L,
    q: &DMatrix<f64>,
    init: &DVector<f64>,
    fixed: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<ConditionalPosterior> {
    let dim = lik.dim();
    if init.len() != dim || q.nrows() != dim {
        return Err(LpsmcError::Config(format!(
            "dimension mismatch: likelihood {dim}, init {}, precision {}",
            init.len(),
            q.nrows()
        )));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(LpsmcError::Config("initial latent vector is not finite".into()));
    }
    let free: Vec<usize> = (0..dim).filter(|i| !fixed.contains(i)).collect();
    let mut xi = init.clone();
    let (mut f, mut ll) = objective(lik, q, &xi)?;
    let mut iterations = 0;

    loop {
        let (grad, hess) = lik.gradient_hessian(&xi)?;
        let post_grad = &grad - q * &xi;
        let grad_free = DVector::from_fn(free.len(), |i, _| post_grad[free[i]]);
        let grad_norm = grad_free.amax();
        let curvature = restrict(&(q - &hess), &free);

        if grad_norm < tol.max(gradient_floor(q, &xi, &grad))
            || (iterations > 0 && stalled(&xi, &grad_free, &curvature))
        {
            let (chol, jitter) = factor_with_jitter(curvature)?;
            if jitter > 0.0 {
                warn!("curvature at the mode needed a ridge of {jitter:e}");
            }
            let inverse = chol.inverse();
            let mut covariance = DMatrix::zeros(dim, dim);
            for (a, &i) in free.iter().enumerate() {
                for (b, &j) in free.iter().enumerate() {
                    covariance[(i, j)] = inverse[(a, b)];
                }
            }
            covariance = (&covariance + covariance.transpose()) * 0.5;
            return Ok(ConditionalPosterior {
                lambda: f64::NAN,
                log_det_curvature: log_det_from_cholesky(&chol),
                mean: xi,
                covariance,
                converged: true,
                iterations,
                grad_norm,
                loglik: ll,
            });
        }
        if iterations >= max_iter {
            return Err(LpsmcError::NonConvergence {
                iterations,
                grad_norm,
                last: xi.as_slice().to_vec(),
            });
        }

        let (chol, _) = factor_with_jitter(curvature)?;
        let step = chol.solve(&grad_free);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=30 {
            let mut trial = xi.clone();
            for (a, &i) in free.iter().enumerate() {
                trial[i] += scale * step[a];
            }
            if let Ok((f_trial, ll_trial)) = objective(lik, q, &trial) {
                if f_trial.is_finite() && f_trial >= f - 1e-10 * (1.0 + f.abs()) {
                    accepted = Some((trial, f_trial, ll_trial));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((trial, f_trial, ll_trial)) = accepted else {
            return Err(LpsmcError::NonConvergence {
                iterations,
                grad_norm,
                last: xi.as_slice().to_vec(),
            });
        };
        xi = trial;
        f = f_trial;
        ll = ll_trial;
        iterations += 1;
    }
}

/// Size of the rounding error in `grad - Q xi`; dominates `tol` for large `lambda`.
fn gradient_floor(q: &DMatrix<f64>, xi: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    let abs_xi = xi.abs();
    let prior_scale = (q.abs() * abs_xi).amax();
    1e-14 * (prior_scale + grad.amax())
}

/// True when the next full Newton step is below the rounding floor of `xi`.
fn stalled(xi: &DVector<f64>, grad_free: &DVector<f64>, curvature: &DMatrix<f64>) -> bool {
    let Some(chol) = Cholesky::new(curvature.clone()) else {
        return false;
    };
    let step = chol.solve(grad_free);
    step.amax() < 1e-14 * (1.0 + xi.amax())
}

/// Unnormalized `log p(v | D)` for a generic likelihood; returns the inner
/// Laplace posterior for warm starts.
pub fn log_posterior_v_with<L: LogLikelihood>(
    lik: &L,
    prior: &LatentPrior,
    hyper: &Hyperparameters,
    v: f64,
    warm_start: &DVector<f64>,
) -> Result<(f64, ConditionalPosterior)> {
    let lambda = v.exp();
    let q = prior.precision(lambda);
    let mut post = laplace_approx(lik, &q, warm_start, &[], hyper.newton_tol, hyper.newton_max_iter)
        .map_err(|e| LpsmcError::Objective {
            v,
            source: Box::new(e),
        })?;
    post.lambda = lambda;
    let quad = post.mean.dot(&(&q * &post.mean));
    let value = post.loglik - 0.5 * quad + 0.5 * (prior.log_det(v) - post.log_det_curvature)
        + hyper.a_lambda * v
        - hyper.b_lambda * v.exp();
    Ok((value, post))
}

/// `log p(v | D)` for the mixture cure model on a `(K, J)` grid over `[0, t_upper]`.
pub fn log_posterior_v(
    v: f64,
    data: &SurvivalDataset,
    grid: &KnotGrid,
    bins: &BinGrid,
    hyper: &Hyperparameters,
    warm_start: &LatentVector,
) -> Result<(f64, ConditionalPosterior)> {
    let model = MixtureCureModel::new(data, *grid, *bins)?;
    let prior = LatentPrior::for_layout(model.layout(), hyper)?;
    log_posterior_v_with(&model, &prior, hyper, v, &warm_start.flatten())
}

/// Result of the leftward bracketing walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketOutcome {
    pub v_star: f64,
    /// Every `(v, objective)` evaluated, in walk order.
    pub evaluations: Vec<(f64, f64)>,
    pub hit_lower_bound: bool,
}

/// Walk left from `v0` in steps of `delta` until the objective decreases, then
/// return the midpoint of the last step. Stops at `v_min` with a warning.
pub fn bracket_mode<F>(mut objective: F, v0: f64, delta: f64, v_min: f64) -> Result<BracketOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(delta > 0.0) || !(v_min < v0) {
        return Err(LpsmcError::Config(format!(
            "bracketing needs delta > 0 and v_min < v0, got delta = {delta}, v_min = {v_min}, v0 = {v0}"
        )));
    }
    let mut eval = |v: f64| {
        objective(v).map_err(|e| match e {
            e @ LpsmcError::Objective { .. } => e,
            e => LpsmcError::Objective { v, source: Box::new(e) },
        })
    };
    let mut previous = eval(v0)?;
    let mut evaluations = vec![(v0, previous)];
    let mut m = 1usize;
    loop {
        let v = v0 - m as f64 * delta;
        if v < v_min {
            warn!("penalty posterior kept increasing down to v_min = {v_min}; returning the boundary");
            return Ok(BracketOutcome {
                v_star: v_min,
                evaluations,
                hit_lower_bound: true,
            });
        }
        let current = eval(v)?;
        evaluations.push((v, current));
        if current < previous {
            return Ok(BracketOutcome {
                v_star: v + 0.5 * delta,
                evaluations,
                hit_lower_bound: false,
            });
        }
        previous = current;
        m += 1;
    }
}

/// Options of the end-to-end fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub constrain_last_theta: bool,
    /// Grid of `v` values on which to tabulate the normalized `p(v | D)`.
    pub profile_grid: Option<Vec<f64>>,
    /// Upper end of the spline domain; defaults to the largest follow-up time.
    pub t_upper: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            constrain_last_theta: true,
            profile_grid: None,
            t_upper: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub events: usize,
}

/// Fitted model: modal log penalty and the Gaussian posterior at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub v_star: f64,
    pub posterior: ConditionalPosterior,
    pub constrained_index: Option<usize>,
    pub hyper: Hyperparameters,
    pub knots: KnotGrid,
    pub bins: BinGrid,
    pub layout: LatentLayout,
    pub summary: DatasetSummary,
    pub bracket: BracketOutcome,
    /// `(v, density)` pairs normalized by the trapezoid rule.
    pub v_profile: Option<Vec<(f64, f64)>>,
}

impl FitResult {
    pub fn mean(&self) -> &DVector<f64> {
        &self.posterior.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.posterior.covariance
    }

    pub fn latent(&self) -> LatentVector {
        LatentVector::from_flat(self.layout, &self.posterior.mean)
    }

    pub fn sd(&self, index: usize) -> f64 {
        self.posterior.covariance[(index, index)].max(0.0).sqrt()
    }
}

/// Starting point: constant log hazard at the crude event rate, a short
/// logistic regression of the event indicator on X, and zero latency effects.
pub fn initial_latent(data: &SurvivalDataset, layout: LatentLayout) -> LatentVector {
    let total_time: f64 = data.times().iter().sum();
    let rate = data.num_events() as f64 / total_time;
    let log_rate = if rate.is_finite() && rate > 0.0 { rate.ln() } else { 0.0 };
    let mut init = LatentVector::zeros(layout);
    init.theta.fill(log_rate);
    if let Some(beta) = logistic_start(data) {
        init.beta = beta;
    }
    init
}

fn logistic_start(data: &SurvivalDataset) -> Option<DVector<f64>> {
    let x = data.x();
    let y = DVector::from_iterator(data.n(), data.events().iter().map(|&e| f64::from(u8::from(e))));
    let mut beta = DVector::zeros(x.ncols());
    for _ in 0..5 {
        let lp = x * &beta;
        let p = lp.map(logistic);
        let w = p.map(|pi| pi * (1.0 - pi));
        let grad = x.transpose() * (&y - &p);
        let mut info = x.transpose() * DMatrix::from_diagonal(&w) * x;
        for i in 0..info.nrows() {
            info[(i, i)] += 1e-6;
        }
        let step = Cholesky::new(info)?.solve(&grad);
        beta += step;
        if beta.iter().any(|b| !b.is_finite() || b.abs() > 20.0) {
            return None;
        }
    }
    debug!("logistic start {:?}", beta.as_slice());
    Some(beta)
}

fn walk(
    model: &MixtureCureModel<'_>,
    prior: &LatentPrior,
    hyper: &Hyperparameters,
    start: &DVector<f64>,
) -> Result<(BracketOutcome, DVector<f64>)> {
    let mut warm = start.clone();
    let mut best = (f64::NEG_INFINITY, start.clone());
    let outcome = bracket_mode(
        |v| {
            let (value, post) = log_posterior_v_with(model, prior, hyper, v, &warm)?;
            warm = post.mean;
            if value > best.0 {
                best = (value, warm.clone());
            }
            Ok(value)
        },
        hyper.v0,
        hyper.delta_v,
        hyper.v_min,
    )?;
    Ok((outcome, best.1))
}

/// Normalized `p(v | D)` on a grid (trapezoid rule), warm-starting along it.
pub fn v_profile<L: LogLikelihood>(
    lik: &L,
    prior: &LatentPrior,
    hyper: &Hyperparameters,
    grid: &[f64],
    start: &DVector<f64>,
) -> Result<Vec<(f64, f64)>> {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut values = vec![0.0; grid.len()];
    let mut warm = start.clone();
    for &i in &order {
        let (value, post) = log_posterior_v_with(lik, prior, hyper, grid[i], &warm)?;
        values[i] = value;
        warm = post.mean;
    }
    let mut points: Vec<(f64, f64)> = grid.iter().copied().zip(values).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let top = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    for point in &mut points {
        point.1 = (point.1 - top).exp();
    }
    let area: f64 = points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    if area > 0.0 {
        for point in &mut points {
            point.1 /= area;
        }
    }
    Ok(points)
}

/// Normalized `p(v | D)` on `grid` for the model and settings of an existing fit.
pub fn profile_for_fit(data: &SurvivalDataset, fitted: &FitResult, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let model = MixtureCureModel::new(data, fitted.knots, fitted.bins)?;
    let prior = LatentPrior::for_layout(model.layout(), &fitted.hyper)?;
    let start = initial_latent(data, model.layout()).flatten();
    v_profile(&model, &prior, &fitted.hyper, grid, &start)
}

/// Bracket the penalty mode, then refit at `v*` with the requested constraint.
pub fn fit(data: &SurvivalDataset, hyper: &Hyperparameters, options: &FitOptions) -> Result<FitResult> {
    hyper.validate()?;
    let t_upper = options.t_upper.unwrap_or_else(|| data.max_time());
    let knots = KnotGrid::new(t_upper, hyper.num_basis)?;
    let bins = BinGrid::new(t_upper, hyper.num_bins)?;
    let model = MixtureCureModel::new(data, knots, bins)?;
    let layout = model.layout();
    let prior = LatentPrior::for_layout(layout, hyper)?;
    let start = initial_latent(data, layout).flatten();

    let (bracket, mode_start) = match walk(&model, &prior, hyper, &start) {
        Ok(found) => found,
        Err(first) => {
            warn!("penalty search failed from the data-driven start ({first}); restarting from zero");
            walk(&model, &prior, hyper, &DVector::zeros(layout.dim())).map_err(|e| LpsmcError::Stage {
                stage: "penalty search",
                source: Box::new(e),
            })?
        }
    };

    let v_star = bracket.v_star;
    let lambda = v_star.exp();
    let q = prior.precision(lambda);
    let mut init = mode_start;
    let constrained_index = options.constrain_last_theta.then(|| layout.last_theta());
    if let Some(k) = constrained_index {
        init[k] = 1.0;
    }
    let fixed: Vec<usize> = constrained_index.into_iter().collect();
    let mut posterior = laplace_approx(&model, &q, &init, &fixed, hyper.newton_tol, hyper.newton_max_iter)
        .or_else(|_| {
            let mut zero = DVector::zeros(layout.dim());
            if let Some(k) = constrained_index {
                zero[k] = 1.0;
            }
            laplace_approx(&model, &q, &zero, &fixed, hyper.newton_tol, hyper.newton_max_iter)
        })
        .map_err(|e| LpsmcError::Stage {
            stage: "final Laplace approximation",
            source: Box::new(e),
        })?;
    posterior.lambda = lambda;

    let v_profile = match &options.profile_grid {
        Some(grid) if !grid.is_empty() => Some(
            v_profile(&model, &prior, hyper, grid, &start).map_err(|e| LpsmcError::Stage {
                stage: "penalty profile",
                source: Box::new(e),
            })?,
        ),
        _ => None,
    };

    Ok(FitResult {
        v_star,
        posterior,
        constrained_index,
        hyper: *hyper,
        knots,
        bins,
        layout,
        summary: DatasetSummary {
            n: data.n(),
            p: data.p(),
            q: data.q(),
            events: data.num_events(),
        },
        bracket,
        v_profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd(dim: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = DMatrix::from_fn(dim, dim, |_, _| next());
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5
    }

    #[test]
    fn prior_precision_blocks() {
        let identity = PenaltyMatrix::identity_for_tests(4);
        let q = prior_precision(1.0, &identity, 1, 2, 1.0);
        assert_eq!(q, DMatrix::identity(8, 8));
        let q2 = prior_precision(2.0, &identity, 1, 2, 1.0);
        assert_eq!(q2.view((0, 0), (4, 4)), (DMatrix::<f64>::identity(4, 4) * 2.0));
        assert_eq!(q2.view((4, 4), (4, 4)), q.view((4, 4), (4, 4)));
    }

    #[test]
    fn log_det_identity() {
        let penalty = penalty_matrix(5, 2, 1e-3).unwrap();
        let prior = LatentPrior::new(penalty.clone(), 3, 0.01).unwrap();
        let v: f64 = 1.3;
        let q = prior.precision(v.exp());
        let direct = q.determinant().ln();
        assert_relative_eq!(prior.log_det(v), direct, max_relative = 1e-8);
        let expected = v.exp().powi(5) * penalty.matrix().determinant() * 0.01f64.powi(3);
        assert_relative_eq!(q.determinant(), expected, max_relative = 1e-8);
    }

    #[test]
    fn quadratic_target_is_exact_in_one_step() {
        let dim = 6;
        let a = spd(dim, 3);
        let q = spd(dim, 11);
        let m = DVector::from_fn(dim, |i, _| i as f64 - 2.0);
        let lik = QuadraticLikelihood {
            precision: a.clone(),
            center: m.clone(),
        };
        let post = laplace_approx(&lik, &q, &DVector::zeros(dim), &[], 1e-8, 100).unwrap();
        let precision = &q + &a;
        let cov = precision.clone().try_inverse().unwrap();
        let mean = &cov * (&a * &m);
        assert_eq!(post.iterations, 1);
        assert!((post.mean - mean).amax() < 1e-10);
        assert!((post.covariance - cov).amax() < 1e-10);
    }

    #[test]
    fn fixed_coordinates_keep_their_value() {
        let dim = 4;
        let lik = QuadraticLikelihood {
            precision: spd(dim, 5),
            center: DVector::from_element(dim, 1.5),
        };
        let q = DMatrix::identity(dim, dim) * 0.1;
        let mut init = DVector::zeros(dim);
        init[3] = 1.0;
        let post = laplace_approx(&lik, &q, &init, &[3], 1e-10, 50).unwrap();
        assert_eq!(post.mean[3], 1.0);
        assert!(post.covariance.row(3).iter().all(|&v| v == 0.0));
        assert!(post.covariance.column(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bracket_symmetric_objective() {
        let out = bracket_mode(|v| Ok(-(v - 3.0) * (v - 3.0)), 15.0, 0.2, -10.0).unwrap();
        assert!((out.v_star - 3.0).abs() <= 0.1 + 1e-9);
        let fine = bracket_mode(|v| Ok(-(v - 3.0) * (v - 3.0)), 15.0, 0.01, -10.0).unwrap();
        assert!((fine.v_star - 3.0).abs() <= 0.005 + 0.01);
    }

    #[test]
    fn bracket_increasing_objective() {
        let out = bracket_mode(Ok, 15.0, 0.2, -10.0).unwrap();
        assert_relative_eq!(out.v_star, 14.9, epsilon = 1e-12);
        assert_eq!(out.evaluations.len(), 2);
    }

    #[test]
    fn bracket_lower_bound() {
        let out = bracket_mode(|v| Ok(-v), 0.0, 0.5, -3.0).unwrap();
        assert!(out.hit_lower_bound);
        assert_eq!(out.v_star, -3.0);
    }

    #[test]
    fn bracket_propagates_failure_with_v() {
        let err = bracket_mode(
            |v| {
                if v < 1.0 {
                    Err(LpsmcError::NonFinite { index: 0 })
                } else {
                    Ok(-v * v)
                }
            },
            2.0,
            0.5,
            -5.0,
        );
        // -v^2 increases while walking left from 2 toward 0, so v = 0.5 is reached.
        match err {
            Err(LpsmcError::Objective { v, .. }) => assert_relative_eq!(v, 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Hyperparameters::default().validate().is_ok());
        let bad = Hyperparameters {
            penalty_order: 15,
            ..Hyperparameters::default()
        };
        assert!(matches!(bad.validate(), Err(LpsmcError::InvalidOrder { .. })));
        let bad = Hyperparameters {
            delta_v: 0.0,
            ..Hyperparameters::default()
        };
        assert!(bad.validate().is_err());
    }
}
