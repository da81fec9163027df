//! Mixture cure model quantities: incidence, latency and population survival,
//! the Riemann-approximated log-likelihood and its analytical derivatives.
//!
//! The latent vector is always flattened as `(theta, beta, gamma)`: `K` spline
//! coefficients of the log-baseline hazard, `p + 1` incidence coefficients
//! (intercept first) and `q` latency coefficients.

use std::ops::Range;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LpsmcError, Result};
use crate::spline::{basis_matrix, KnotGrid};

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Logistic function, saturating smoothly for large `|x|`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Observed right-censored data with incidence design `X` (leading intercept
/// column) and latency design `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    times: Vec<f64>,
    events: Vec<bool>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
}

impl SurvivalDataset {
    pub fn new(times: Vec<f64>, events: Vec<bool>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(LpsmcError::Dataset("no observations".into()));
        }
        if events.len() != n || x.nrows() != n || z.nrows() != n {
            return Err(LpsmcError::Dataset(format!(
                "length mismatch: {n} times, {} events, X has {} rows, Z has {} rows",
                events.len(),
                x.nrows(),
                z.nrows()
            )));
        }
        if let Some(i) = times.iter().position(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(LpsmcError::Dataset(format!(
                "follow-up time at index {i} is negative or not finite: {}",
                times[i]
            )));
        }
        if !events.iter().any(|&e| e) {
            return Err(LpsmcError::Dataset("at least one event is required".into()));
        }
        if x.ncols() == 0 || x.column(0).iter().any(|&v| v != 1.0) {
            return Err(LpsmcError::Dataset(
                "first column of the incidence design must be the intercept (all ones)".into(),
            ));
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(LpsmcError::Dataset("covariates must be finite".into()));
        }
        let dataset = Self { times, events, x, z };
        Ok(dataset)
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    /// Number of incidence covariates, excluding the intercept.
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn num_events(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    pub fn max_time(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }

    /// Reorder units; used to check order invariance.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let x = DMatrix::from_fn(self.n(), self.x.ncols(), |i, j| self.x[(order[i], j)]);
        let z = DMatrix::from_fn(self.n(), self.z.ncols(), |i, j| self.z[(order[i], j)]);
        Self {
            times: order.iter().map(|&i| self.times[i]).collect(),
            events: order.iter().map(|&i| self.events[i]).collect(),
            x,
            z,
        }
    }
}

/// Dimensions of the latent vector blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub num_basis: usize,
    pub num_incidence: usize,
    pub num_latency: usize,
}

impl LatentLayout {
    pub fn new(num_basis: usize, p: usize, q: usize) -> Self {
        Self {
            num_basis,
            num_incidence: p + 1,
            num_latency: q,
        }
    }

    pub fn dim(&self) -> usize {
        self.num_basis + self.num_incidence + self.num_latency
    }

    pub fn theta(&self) -> Range<usize> {
        0..self.num_basis
    }

    pub fn beta(&self) -> Range<usize> {
        self.num_basis..self.num_basis + self.num_incidence
    }

    pub fn gamma(&self) -> Range<usize> {
        self.num_basis + self.num_incidence..self.dim()
    }

    /// Flat index of the last spline coefficient.
    pub fn last_theta(&self) -> usize {
        self.num_basis - 1
    }
}

/// Structured view of the latent vector `(theta, beta, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub theta: DVector<f64>,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl LatentVector {
    pub fn zeros(layout: LatentLayout) -> Self {
        Self {
            theta: DVector::zeros(layout.num_basis),
            beta: DVector::zeros(layout.num_incidence),
            gamma: DVector::zeros(layout.num_latency),
        }
    }

    pub fn layout(&self) -> LatentLayout {
        LatentLayout {
            num_basis: self.theta.len(),
            num_incidence: self.beta.len(),
            num_latency: self.gamma.len(),
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout().dim());
        let layout = self.layout();
        out.rows_mut(0, layout.num_basis).copy_from(&self.theta);
        out.rows_mut(layout.beta().start, layout.num_incidence)
            .copy_from(&self.beta);
        out.rows_mut(layout.gamma().start, layout.num_latency)
            .copy_from(&self.gamma);
        out
    }

    pub fn from_flat(layout: LatentLayout, flat: &DVector<f64>) -> Self {
        Self {
            theta: flat.rows(0, layout.num_basis).into_owned(),
            beta: flat.rows(layout.beta().start, layout.num_incidence).into_owned(),
            gamma: flat.rows(layout.gamma().start, layout.num_latency).into_owned(),
        }
    }
}

/// Partition of `[0, t_upper]` into `J` equal bins for the midpoint rule.
///
/// A time `t` belongs to bin `j(t) = min(J, floor(t / width) + 1)` (1-based), so
/// `t = 0` falls in bin 1 and a time on a bin boundary opens the next bin.
/// Times within `1e-9` relative of a boundary are snapped onto it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    num_bins: usize,
    t_upper: f64,
}

impl BinGrid {
    pub fn new(t_upper: f64, num_bins: usize) -> Result<Self> {
        if num_bins == 0 || !(t_upper.is_finite() && t_upper > 0.0) {
            return Err(LpsmcError::Config(format!(
                "bin grid needs J >= 1 and t_upper > 0, got J = {num_bins}, t_upper = {t_upper}"
            )));
        }
        Ok(Self { num_bins, t_upper })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn t_upper(&self) -> f64 {
        self.t_upper
    }

    pub fn width(&self) -> f64 {
        self.t_upper / self.num_bins as f64
    }

    /// Midpoint `s_j` of the 1-based bin `j`.
    pub fn midpoint(&self, j: usize) -> f64 {
        (j as f64 - 0.5) * self.width()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (1..=self.num_bins).map(|j| self.midpoint(j)).collect()
    }

    /// Left edge of the 1-based bin `j`; `bin_index(left_edge(j)) == j`.
    pub fn left_edge(&self, j: usize) -> f64 {
        (j - 1) as f64 * self.width()
    }

    pub fn bin_index(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.t_upper).contains(&t) {
            return Err(LpsmcError::Domain {
                t,
                t_upper: self.t_upper,
            });
        }
        let scaled = t / self.width();
        let nearest = scaled.round();
        let scaled = if (scaled - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            scaled
        };
        Ok((scaled.floor() as usize + 1).min(self.num_bins))
    }
}

/// Spline log-hazard evaluated on the bin midpoints.
#[derive(Debug, Clone)]
pub struct SplineHazard {
    knots: KnotGrid,
    bins: BinGrid,
    mid_basis: DMatrix<f64>,
}

impl SplineHazard {
    pub fn new(knots: KnotGrid, bins: BinGrid) -> Result<Self> {
        if knots.t_upper() != bins.t_upper() {
            return Err(LpsmcError::Config(format!(
                "knot grid covers [0, {}] but bins cover [0, {}]",
                knots.t_upper(),
                bins.t_upper()
            )));
        }
        let mid_basis = basis_matrix(&knots, &bins.midpoints())?;
        Ok(Self {
            knots,
            bins,
            mid_basis,
        })
    }

    pub fn knots(&self) -> &KnotGrid {
        &self.knots
    }

    pub fn bins(&self) -> &BinGrid {
        &self.bins
    }

    /// `J x K` basis evaluated at the bin midpoints.
    pub fn mid_basis(&self) -> &DMatrix<f64> {
        &self.mid_basis
    }

    /// `h0(s_j) = exp(theta' b(s_j))` for every bin.
    pub fn hazard_at_midpoints(&self, theta: &DVector<f64>) -> DVector<f64> {
        (&self.mid_basis * theta).map(f64::exp)
    }

    /// Riemann sums `omega(m) = sum_{j <= m} h0(s_j) width` for `m = 1..=J`
    /// (index `m - 1`).
    pub fn cumulative_hazard(&self, theta: &DVector<f64>) -> Vec<f64> {
        let width = self.bins.width();
        let mut acc = 0.0;
        self.hazard_at_midpoints(theta)
            .iter()
            .map(|h| {
                acc += h * width;
                acc
            })
            .collect()
    }

    /// Riemann sum `omega(m)` and its gradient `omega^k(m)` in theta.
    pub fn cumulative_hazard_with_gradient(&self, theta: &DVector<f64>, bin: usize) -> (f64, DVector<f64>) {
        let width = self.bins.width();
        let hazard = self.hazard_at_midpoints(theta);
        let mut omega = 0.0;
        let mut grad = DVector::zeros(self.knots.num_basis());
        for j in 0..bin {
            let w = hazard[j] * width;
            omega += w;
            grad.axpy(w, &self.mid_basis.row(j).transpose(), 1.0);
        }
        (omega, grad)
    }

    pub fn baseline_survival(&self, theta: &DVector<f64>, t: f64) -> Result<f64> {
        let bin = self.bins.bin_index(t)?;
        Ok((-self.cumulative_hazard(theta)[bin - 1]).exp())
    }
}

/// Incidence `p(x) = 1 / (1 + exp(-x' beta))`; `x_row` includes the leading 1.
pub fn incidence(beta: &[f64], x_row: &[f64]) -> f64 {
    logistic(linear_predictor(beta, x_row))
}

fn linear_predictor(coef: &[f64], row: &[f64]) -> f64 {
    assert_eq!(coef.len(), row.len(), "coefficient and covariate lengths differ");
    coef.iter().zip(row).map(|(c, v)| c * v).sum()
}

/// Midpoint-rule baseline survival `S0(t)`.
pub fn baseline_survival(theta: &DVector<f64>, grid: &KnotGrid, bins: &BinGrid, t: f64) -> Result<f64> {
    SplineHazard::new(*grid, *bins)?.baseline_survival(theta, t)
}

/// Latency `S_u(t | z) = S0(t)^exp(z' gamma)`.
pub fn latency_survival(
    theta: &DVector<f64>,
    gamma: &[f64],
    z_row: &[f64],
    grid: &KnotGrid,
    bins: &BinGrid,
    t: f64,
) -> Result<f64> {
    let hazard = SplineHazard::new(*grid, *bins)?;
    let bin = bins.bin_index(t)?;
    let omega = hazard.cumulative_hazard(theta)[bin - 1];
    Ok((-omega * linear_predictor(gamma, z_row).exp()).exp())
}

/// Population survival `1 - p(x) + p(x) S_u(t | z)`.
pub fn population_survival(
    xi: &LatentVector,
    x_row: &[f64],
    z_row: &[f64],
    grid: &KnotGrid,
    bins: &BinGrid,
    t: f64,
) -> Result<f64> {
    let p = incidence(xi.beta.as_slice(), x_row);
    let su = latency_survival(&xi.theta, xi.gamma.as_slice(), z_row, grid, bins, t)?;
    Ok(1.0 - p + p * su)
}

/// Riemann sums needed by the derivatives at a fixed theta.
#[derive(Debug, Clone)]
pub struct OmegaCache {
    /// `h0(s_j)` for every bin.
    pub hazard_at_midpoints: DVector<f64>,
    /// `omega_0i` per unit.
    pub omega0: DVector<f64>,
    /// `omega_0i^k` per unit (`n x K`).
    pub omega1: DMatrix<f64>,
}

/// Per-unit scalars shared by the log-likelihood, gradient and Hessian.
#[derive(Debug, Clone, Copy)]
struct UnitTerms {
    event: bool,
    /// `exp(z' gamma)`
    risk: f64,
    /// uncured cumulative hazard `exp(z' gamma) omega_0i`
    cumhaz: f64,
    log_p: f64,
    log_q: f64,
    /// `log S_p` for censored units, unused otherwise.
    log_sp: f64,
}

impl UnitTerms {
    fn p(&self) -> f64 {
        self.log_p.exp()
    }

    fn q(&self) -> f64 {
        self.log_q.exp()
    }

    /// `p S_u / S_p`, the conditional probability of being uncured given survival.
    fn uncured_weight(&self) -> f64 {
        (self.log_p - self.cumhaz - self.log_sp).exp()
    }

    /// `(1 - p) / S_p`.
    fn cured_weight(&self) -> f64 {
        (self.log_q - self.log_sp).exp()
    }

    /// `p (1 - p) (1 - S_u) / S_p`.
    fn incidence_weight(&self) -> f64 {
        (self.log_p + self.log_q - self.log_sp).exp() * -(-self.cumhaz).exp_m1()
    }
}

/// The mixture cure log-likelihood for a dataset on a fixed spline/bin grid.
#[derive(Debug, Clone)]
pub struct MixtureCureModel<'a> {
    data: &'a SurvivalDataset,
    hazard: SplineHazard,
    time_basis: DMatrix<f64>,
    unit_bins: Vec<usize>,
    layout: LatentLayout,
}

impl<'a> MixtureCureModel<'a> {
    pub fn new(data: &'a SurvivalDataset, knots: KnotGrid, bins: BinGrid) -> Result<Self> {
        let hazard = SplineHazard::new(knots, bins)?;
        let time_basis = basis_matrix(&knots, data.times())?;
        let unit_bins = data
            .times()
            .iter()
            .map(|&t| bins.bin_index(t))
            .collect::<Result<Vec<_>>>()?;
        let layout = LatentLayout::new(knots.num_basis(), data.p(), data.q());
        if data.n() < layout.dim() {
            warn!(
                "sample size {} is smaller than the latent dimension {}",
                data.n(),
                layout.dim()
            );
        }
        Ok(Self {
            data,
            hazard,
            time_basis,
            unit_bins,
            layout,
        })
    }

    pub fn layout(&self) -> LatentLayout {
        self.layout
    }

    pub fn data(&self) -> &SurvivalDataset {
        self.data
    }

    pub fn hazard(&self) -> &SplineHazard {
        &self.hazard
    }

    pub fn omega_cache(&self, theta: &DVector<f64>) -> OmegaCache {
        let k = self.layout.num_basis;
        let width = self.hazard.bins().width();
        let hazard = self.hazard.hazard_at_midpoints(theta);
        let num_bins = hazard.len();
        let mut cum0 = vec![0.0; num_bins];
        let mut cum1 = DMatrix::zeros(num_bins, k);
        let mut acc0 = 0.0;
        let mut acc1 = DVector::<f64>::zeros(k);
        let mid_basis = self.hazard.mid_basis();
        for j in 0..num_bins {
            let w = hazard[j] * width;
            acc0 += w;
            acc1.axpy(w, &mid_basis.row(j).transpose(), 1.0);
            cum0[j] = acc0;
            cum1.set_row(j, &acc1.transpose());
        }
        let n = self.data.n();
        let omega0 = DVector::from_fn(n, |i, _| cum0[self.unit_bins[i] - 1]);
        let omega1 = DMatrix::from_fn(n, k, |i, c| cum1[(self.unit_bins[i] - 1, c)]);
        OmegaCache {
            hazard_at_midpoints: hazard,
            omega0,
            omega1,
        }
    }

    fn unit_terms(&self, xi: &LatentVector, cache: &OmegaCache) -> Vec<UnitTerms> {
        let lp = self.data.x() * &xi.beta;
        let eta = self.data.z() * &xi.gamma;
        (0..self.data.n())
            .map(|i| {
                let risk = eta[i].exp();
                let cumhaz = risk * cache.omega0[i];
                let log_p = -softplus(-lp[i]);
                let log_q = -softplus(lp[i]);
                let event = self.data.events()[i];
                let log_sp = if event {
                    0.0
                } else {
                    log_add_exp(log_q, log_p - cumhaz)
                };
                UnitTerms {
                    event,
                    risk,
                    cumhaz,
                    log_p,
                    log_q,
                    log_sp,
                }
            })
            .collect()
    }

    /// Per-unit contributions `g_i(xi)`.
    pub fn contributions(&self, xi: &LatentVector) -> Result<Vec<f64>> {
        let cache = self.omega_cache(&xi.theta);
        let terms = self.unit_terms(xi, &cache);
        let log_hazard_at_t = &self.time_basis * &xi.theta;
        terms
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let g = if u.event {
                    u.log_p + u.risk.ln() + log_hazard_at_t[i] - u.cumhaz
                } else {
                    u.log_sp
                };
                if g.is_finite() {
                    Ok(g)
                } else {
                    Err(LpsmcError::NonFinite { index: i })
                }
            })
            .collect()
    }

    pub fn loglik(&self, xi: &LatentVector) -> Result<f64> {
        Ok(self.contributions(xi)?.iter().sum())
    }

    pub fn gradient(&self, xi: &LatentVector, cache: &OmegaCache) -> DVector<f64> {
        let terms = self.unit_terms(xi, cache);
        let layout = self.layout;
        let (x, z) = (self.data.x(), self.data.z());
        let mut grad = DVector::zeros(layout.dim());
        for (i, u) in terms.iter().enumerate() {
            let omega1 = cache.omega1.row(i);
            if u.event {
                for k in layout.theta() {
                    grad[k] += self.time_basis[(i, k)] - u.risk * omega1[k];
                }
                let q = u.q();
                for (m, idx) in layout.beta().enumerate() {
                    grad[idx] += q * x[(i, m)];
                }
                for (s, idx) in layout.gamma().enumerate() {
                    grad[idx] += z[(i, s)] * (1.0 - u.cumhaz);
                }
            } else {
                let r = u.uncured_weight();
                for k in layout.theta() {
                    grad[k] -= r * u.risk * omega1[k];
                }
                let w = u.incidence_weight();
                for (m, idx) in layout.beta().enumerate() {
                    grad[idx] -= w * x[(i, m)];
                }
                for (s, idx) in layout.gamma().enumerate() {
                    grad[idx] -= r * u.cumhaz * z[(i, s)];
                }
            }
        }
        grad
    }

    /// Hessian of the log-likelihood, assembled block by block on the upper
    /// triangle and mirrored.
    pub fn hessian(&self, xi: &LatentVector, cache: &OmegaCache) -> DMatrix<f64> {
        let terms = self.unit_terms(xi, cache);
        let layout = self.layout;
        let (k_dim, b0, g0) = (layout.num_basis, layout.beta().start, layout.gamma().start);
        let (x, z) = (self.data.x(), self.data.z());
        let mut h = DMatrix::zeros(layout.dim(), layout.dim());

        // curvature: coefficient on -d^2 A (A = exp(z'gamma) omega_0i)
        // outer: coefficient on the rank-one (dA)(dA)' term
        let curvature: Vec<f64> = terms
            .iter()
            .map(|u| if u.event { 1.0 } else { u.uncured_weight() })
            .collect();
        let outer: Vec<f64> = terms
            .iter()
            .map(|u| {
                if u.event {
                    0.0
                } else {
                    u.uncured_weight() * u.cured_weight()
                }
            })
            .collect();

        // Block 11, omega^{kl} part: sum_i c_i e_i omega_0i^{kl} regrouped per bin.
        let num_bins = self.hazard.bins().num_bins();
        let mut bin_weight = vec![0.0; num_bins + 1];
        for (i, u) in terms.iter().enumerate() {
            bin_weight[self.unit_bins[i] - 1] += curvature[i] * u.risk;
        }
        for j in (0..num_bins).rev() {
            bin_weight[j] += bin_weight[j + 1];
        }
        let width = self.hazard.bins().width();
        let mid_basis = self.hazard.mid_basis();
        for j in 0..num_bins {
            let w = bin_weight[j] * cache.hazard_at_midpoints[j] * width;
            if w == 0.0 {
                continue;
            }
            let row = mid_basis.row(j);
            let first = row.iter().position(|&v| v != 0.0).unwrap_or(0);
            let last = (first + 4).min(k_dim);
            for a in first..last {
                for b in a..last {
                    h[(a, b)] -= w * row[a] * row[b];
                }
            }
        }

        for (i, u) in terms.iter().enumerate() {
            let omega1 = cache.omega1.row(i);
            let (c, d) = (curvature[i], outer[i]);

            // Block 11, rank-one part.
            if d != 0.0 {
                let scale = d * u.risk * u.risk;
                for a in 0..k_dim {
                    for b in a..k_dim {
                        h[(a, b)] += scale * omega1[a] * omega1[b];
                    }
                }
            }
            // Block 12.
            if d != 0.0 {
                for a in 0..k_dim {
                    let ua = u.risk * omega1[a];
                    for m in 0..layout.num_incidence {
                        h[(a, b0 + m)] -= d * x[(i, m)] * ua;
                    }
                }
            }
            // Block 13.
            for a in 0..k_dim {
                let ua = u.risk * omega1[a];
                for s in 0..layout.num_latency {
                    h[(a, g0 + s)] += (-c + d * u.cumhaz) * ua * z[(i, s)];
                }
            }
            // Block 22.
            let bb = if u.event {
                -u.p() * u.q()
            } else {
                let w = u.incidence_weight();
                -(w * (1.0 - 2.0 * u.p()) + w * w)
            };
            for m in 0..layout.num_incidence {
                for l in m..layout.num_incidence {
                    h[(b0 + m, b0 + l)] += bb * x[(i, m)] * x[(i, l)];
                }
            }
            // Block 23.
            if d != 0.0 {
                for m in 0..layout.num_incidence {
                    for s in 0..layout.num_latency {
                        h[(b0 + m, g0 + s)] -= d * x[(i, m)] * u.cumhaz * z[(i, s)];
                    }
                }
            }
            // Block 33.
            let gg = -c * u.cumhaz + d * u.cumhaz * u.cumhaz;
            for s in 0..layout.num_latency {
                for v in s..layout.num_latency {
                    h[(g0 + s, g0 + v)] += gg * z[(i, s)] * z[(i, v)];
                }
            }
        }

        h.fill_lower_triangle_with_upper_triangle();
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(t_upper: f64, k: usize, j: usize) -> (KnotGrid, BinGrid) {
        (
            KnotGrid::new(t_upper, k).unwrap(),
            BinGrid::new(t_upper, j).unwrap(),
        )
    }

    #[test]
    fn incidence_values() {
        assert_eq!(incidence(&[0.0, 0.0, 0.0], &[1.0, 3.0, -2.0]), 0.5);
        let p = incidence(&[0.70, -1.15, 0.95], &[1.0, 0.0, 0.0]);
        assert_relative_eq!(p, 1.0 / (1.0 + (-0.70f64).exp()), epsilon = 1e-15);
        assert!((p - 0.6682).abs() < 5e-5);
        assert_eq!(incidence(&[800.0], &[1.0]), 1.0);
        assert_eq!(incidence(&[-800.0], &[1.0]), 0.0);
    }

    #[test]
    fn bin_index_convention() {
        let bins = BinGrid::new(11.0, 300).unwrap();
        assert_eq!(bins.bin_index(0.0).unwrap(), 1);
        assert_eq!(bins.bin_index(11.0).unwrap(), 300);
        assert_eq!(bins.bin_index(bins.width() * 0.5).unwrap(), 1);
        for j in 1..=300 {
            assert_eq!(bins.bin_index(bins.left_edge(j)).unwrap(), j);
        }
        assert!(bins.bin_index(11.0001).is_err());
    }

    #[test]
    fn constant_hazard_survival() {
        let (knots, bins) = grid(11.0, 15, 300);
        let theta = DVector::zeros(15);
        let t = bins.left_edge(150) + 0.01;
        let expected = (-150.0 * bins.width()).exp();
        assert_relative_eq!(
            baseline_survival(&theta, &knots, &bins, t).unwrap(),
            expected,
            max_relative = 1e-12
        );
        let end = baseline_survival(&theta, &knots, &bins, 11.0).unwrap();
        assert_relative_eq!(end, (-11.0f64).exp(), max_relative = 1e-12);
        assert!((end - 1.6702e-5).abs() < 1e-9);
    }

    #[test]
    fn first_bin_single_term() {
        let (knots, bins) = grid(11.0, 15, 300);
        let theta = DVector::from_fn(15, |k, _| (k as f64 * 0.3).sin());
        let hazard = SplineHazard::new(knots, bins).unwrap();
        let h1 = hazard.hazard_at_midpoints(&theta)[0];
        let s = baseline_survival(&theta, &knots, &bins, 0.01).unwrap();
        assert_relative_eq!(s, (-h1 * bins.width()).exp(), max_relative = 1e-14);
        assert!(s > 0.0);
    }

    #[test]
    fn latency_power_formula() {
        let (knots, bins) = grid(11.0, 15, 300);
        let theta = DVector::zeros(15);
        let t = bins.left_edge(40) + 1e-3;
        let s0 = baseline_survival(&theta, &knots, &bins, t).unwrap();
        assert_eq!(
            latency_survival(&theta, &[0.0, 0.0], &[0.3, 1.0], &knots, &bins, t).unwrap(),
            s0
        );
        assert_eq!(
            latency_survival(&theta, &[0.5, -0.2], &[0.0, 0.0], &knots, &bins, t).unwrap(),
            s0
        );
        let su = latency_survival(&theta, &[2f64.ln()], &[1.0], &knots, &bins, t).unwrap();
        assert_relative_eq!(su, (-2.0 * 40.0 * bins.width()).exp(), max_relative = 1e-12);
    }

    #[test]
    fn population_survival_composition() {
        let (knots, bins) = grid(11.0, 15, 300);
        let xi = LatentVector {
            theta: DVector::zeros(15),
            beta: DVector::from_vec(vec![0.70, -1.15, 0.95]),
            gamma: DVector::from_vec(vec![-0.10, 0.25]),
        };
        let t = bins.left_edge(150);
        let sp = population_survival(&xi, &[1.0, 0.0, 0.0], &[0.0, 0.0], &knots, &bins, t).unwrap();
        let p = logistic(0.70);
        assert_relative_eq!(sp, 1.0 - p + p * (-5.5f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn single_event_contribution_by_hand() {
        let (knots, bins) = grid(5.0, 6, 50);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.4]);
        let z = DMatrix::from_row_slice(1, 1, &[-0.7]);
        let data = SurvivalDataset::new(vec![2.3], vec![true], x, z).unwrap();
        let model = MixtureCureModel::new(&data, knots, bins).unwrap();
        let xi = LatentVector {
            theta: DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0, 0.2, -0.1]),
            beta: DVector::from_vec(vec![0.5, -1.0]),
            gamma: DVector::from_vec(vec![0.8]),
        };
        let lp: f64 = 0.5 - 0.4;
        let eta: f64 = -0.7 * 0.8;
        let b_t = crate::spline::bspline_eval(&knots, 2.3).unwrap();
        let hazard = SplineHazard::new(knots, bins).unwrap();
        let omega0 = hazard.cumulative_hazard(&xi.theta)[bins.bin_index(2.3).unwrap() - 1];
        let expected = logistic(lp).ln() + eta + xi.theta.dot(&b_t) - eta.exp() * omega0;
        assert_relative_eq!(model.loglik(&xi).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn censored_unit_with_full_survival() {
        let (knots, bins) = grid(5.0, 6, 50);
        let data = SurvivalDataset::new(
            vec![1.0, 2.0],
            vec![true, false],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 1.0, -1.3]),
            DMatrix::from_row_slice(2, 1, &[0.1, 0.3]),
        )
        .unwrap();
        let model = MixtureCureModel::new(&data, knots, bins).unwrap();
        for beta in [[3.0, 1.0], [-2.0, 0.5], [0.0, 4.0]] {
            let xi = LatentVector {
                theta: DVector::from_element(6, -40.0),
                beta: DVector::from_row_slice(&beta),
                gamma: DVector::from_vec(vec![0.2]),
            };
            let g = model.contributions(&xi).unwrap();
            assert!(g[1].abs() < 1e-12, "{}", g[1]);
        }
    }

    #[test]
    fn omega_partition_of_unity() {
        let (knots, bins) = grid(8.0, 10, 120);
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.2).collect();
        let events = (0..40).map(|i| i % 3 == 0).collect();
        let x = DMatrix::from_element(40, 1, 1.0);
        let z = DMatrix::from_fn(40, 1, |i, _| (i as f64).cos());
        let data = SurvivalDataset::new(times, events, x, z).unwrap();
        let model = MixtureCureModel::new(&data, knots, bins).unwrap();
        let theta = DVector::from_fn(10, |k, _| 0.2 * k as f64 - 1.0);
        let cache = model.omega_cache(&theta);
        for i in 0..40 {
            assert!((cache.omega1.row(i).sum() - cache.omega0[i]).abs() < 1e-10);
            assert!(cache.omega0[i] > 0.0);
        }
    }

    #[test]
    fn dataset_validation() {
        let ones = DMatrix::from_element(2, 1, 1.0);
        let z = DMatrix::zeros(2, 1);
        assert!(SurvivalDataset::new(vec![1.0, 2.0], vec![false, false], ones.clone(), z.clone()).is_err());
        assert!(SurvivalDataset::new(vec![-1.0, 2.0], vec![true, false], ones.clone(), z.clone()).is_err());
        let bad_x = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        assert!(SurvivalDataset::new(vec![1.0, 2.0], vec![true, false], bad_x, z.clone()).is_err());
        assert!(SurvivalDataset::new(vec![1.0], vec![true, false], ones, z).is_err());
    }

    fn random_instance(seed: u64, pattern: usize) -> (SurvivalDataset, LatentVector, KnotGrid, BinGrid) {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 5.0).collect();
        let events: Vec<bool> = (0..n)
            .map(|i| match pattern {
                0 => true,
                1 => i == 0,
                _ => rng.random::<f64>() < 0.5,
            })
            .collect();
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let z = DMatrix::from_fn(n, 2, |_, j| {
            if j == 0 {
                rng.sample(StandardNormal)
            } else {
                f64::from(u8::from(rng.random::<bool>()))
            }
        });
        let t_upper = times.iter().copied().fold(0.0, f64::max);
        let xi = LatentVector {
            theta: DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5 - 1.0),
            beta: DVector::from_fn(3, |_, _| rng.sample(StandardNormal)),
            gamma: DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5),
        };
        let data = SurvivalDataset::new(times, events, x, z).unwrap();
        (data, xi, KnotGrid::new(t_upper, 8).unwrap(), BinGrid::new(t_upper, 300).unwrap())
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        for seed in 0..6 {
            let (data, xi, knots, bins) = random_instance(seed, (seed % 3) as usize);
            let model = MixtureCureModel::new(&data, knots, bins).unwrap();
            let layout = model.layout();
            let flat = xi.flatten();
            let at = |v: &DVector<f64>| LatentVector::from_flat(layout, v);
            let cache = model.omega_cache(&xi.theta);
            let grad = model.gradient(&xi, &cache);
            let hess = model.hessian(&xi, &cache);
            let h = 1e-6;
            for k in 0..layout.dim() {
                let mut up = flat.clone();
                up[k] += h;
                let mut down = flat.clone();
                down[k] -= h;
                let fd = (model.loglik(&at(&up)).unwrap() - model.loglik(&at(&down)).unwrap()) / (2.0 * h);
                assert!((fd - grad[k]).abs() / grad[k].abs().max(1.0) < 1e-5, "grad {k}: {fd} vs {}", grad[k]);
                let g_up = model.gradient(&at(&up), &model.omega_cache(&at(&up).theta));
                let g_down = model.gradient(&at(&down), &model.omega_cache(&at(&down).theta));
                for l in 0..layout.dim() {
                    let fd = (g_up[l] - g_down[l]) / (2.0 * h);
                    assert!(
                        (fd - hess[(l, k)]).abs() / hess[(l, k)].abs().max(1.0) < 1e-4,
                        "hess ({l},{k}): {fd} vs {}",
                        hess[(l, k)]
                    );
                }
            }
            assert_eq!(hess, hess.transpose());
        }
    }

    #[test]
    fn all_events_reduce_to_logistic_blocks() {
        let (data, xi, knots, bins) = random_instance(42, 0);
        let model = MixtureCureModel::new(&data, knots, bins).unwrap();
        let cache = model.omega_cache(&xi.theta);
        let grad = model.gradient(&xi, &cache);
        let hess = model.hessian(&xi, &cache);
        let layout = model.layout();
        let x = data.x();
        let time_basis = basis_matrix(&knots, data.times()).unwrap();
        for k in layout.theta() {
            let expected: f64 = (0..data.n())
                .map(|i| time_basis[(i, k)] - (data.z().row(i) * &xi.gamma)[0].exp() * cache.omega1[(i, k)])
                .sum();
            assert!((grad[k] - expected).abs() < 1e-10);
        }
        for m in 0..3 {
            for l in 0..3 {
                let expected: f64 = (0..data.n())
                    .map(|i| {
                        let p = logistic((x.row(i) * &xi.beta)[0]);
                        -x[(i, m)] * x[(i, l)] * p * (1.0 - p)
                    })
                    .sum();
                let got = hess[(layout.beta().start + m, layout.beta().start + l)];
                assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn vanishing_incidence_censored_unit() {
        let (knots, bins) = grid(5.0, 6, 50);
        let data = SurvivalDataset::new(
            vec![1.0, 3.0],
            vec![true, false],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.3, -0.4]),
        )
        .unwrap();
        let only_event = SurvivalDataset::new(
            vec![1.0],
            vec![true],
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 1, &[0.3]),
        )
        .unwrap();
        // beta chosen so that p = 1e-12 for the censored unit and 0.5 for the event
        let xi = LatentVector {
            theta: DVector::from_element(6, -0.5),
            beta: DVector::from_vec(vec![0.0, -(1e12f64).ln()]),
            gamma: DVector::from_vec(vec![0.2]),
        };
        let full = MixtureCureModel::new(&data, knots, bins).unwrap();
        let single = MixtureCureModel::new(&only_event, knots, bins).unwrap();
        let g_full = full.gradient(&xi, &full.omega_cache(&xi.theta));
        let g_single = single.gradient(&xi, &single.omega_cache(&xi.theta));
        for k in 0..g_full.len() {
            assert!((g_full[k] - g_single[k]).abs() < 1e-10, "{k}: {} vs {}", g_full[k], g_single[k]);
        }
    }

    #[test]
    fn riemann_error_shrinks_with_the_grid() {
        // exact log-likelihood with the spline hazard integrated by fine Simpson quadrature
        let (data, xi, knots, _) = random_instance(7, 2);
        let exact_cumhaz = |t: f64| {
            let steps = 4000;
            let h = t / steps as f64;
            let f = |s: f64| crate::spline::bspline_eval(&knots, s).unwrap().dot(&xi.theta).exp();
            let mut acc = f(0.0) + f(t);
            for i in 1..steps {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
            }
            acc * h / 3.0
        };
        let mut exact = 0.0;
        for i in 0..data.n() {
            let t = data.times()[i];
            let lp = (data.x().row(i) * &xi.beta)[0];
            let eta = (data.z().row(i) * &xi.gamma)[0];
            let a = eta.exp() * exact_cumhaz(t);
            let p = logistic(lp);
            exact += if data.events()[i] {
                p.ln() + eta + crate::spline::bspline_eval(&knots, t).unwrap().dot(&xi.theta) - a
            } else {
                (1.0 - p + p * (-a).exp()).ln()
            };
        }
        let error = |j: usize| {
            let bins = BinGrid::new(knots.t_upper(), j).unwrap();
            let model = MixtureCureModel::new(&data, knots, bins).unwrap();
            (model.loglik(&xi).unwrap() - exact).abs()
        };
        let coarse = error(300);
        let fine = error(3000);
        assert!(coarse < 0.5, "{coarse}");
        assert!(fine < coarse / 5.0, "J=300: {coarse}, J=3000: {fine}");
    }

    #[test]
    fn latent_vector_flattening() {
        let xi = LatentVector {
            theta: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            beta: DVector::from_vec(vec![5.0, 6.0]),
            gamma: DVector::from_vec(vec![7.0]),
        };
        let flat = xi.flatten();
        assert_eq!(flat.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(LatentVector::from_flat(xi.layout(), &flat), xi);
        assert_eq!(xi.layout().last_theta(), 3);
    }
}
