//! Cubic B-spline basis on an equally spaced knot grid and difference penalties.
//!
//! Knot convention: the interval `[0, t_upper]` is split into `K - 3` equal
//! segments whose `K - 2` breakpoints form the interior of the knot vector; the
//! two boundary knots are repeated so that each appears `degree + 1` times
//! (a clamped basis). This yields exactly `K` cubic basis functions that form a
//! partition of unity on the whole closed interval, with `b_1(0) = 1` and
//! `b_K(t_upper) = 1`. Segments are half-open `[u_i, u_{i+1})` except the last
//! one, which also contains `t_upper`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LpsmcError, Result};

pub const CUBIC: usize = 3;

/// Equally spaced clamped knot grid carrying `num_basis` cubic B-splines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    t_upper: f64,
    num_basis: usize,
    degree: usize,
}

impl KnotGrid {
    pub fn new(t_upper: f64, num_basis: usize) -> Result<Self> {
        if !(t_upper.is_finite() && t_upper > 0.0) {
            return Err(LpsmcError::Config(format!(
                "upper bound of the spline domain must be positive, got {t_upper}"
            )));
        }
        if num_basis < CUBIC + 1 {
            return Err(LpsmcError::Config(format!(
                "at least {} cubic B-splines are required, got {num_basis}",
                CUBIC + 1
            )));
        }
        Ok(Self {
            t_upper,
            num_basis,
            degree: CUBIC,
        })
    }

    pub fn t_upper(&self) -> f64 {
        self.t_upper
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    fn num_segments(&self) -> usize {
        self.num_basis - self.degree
    }

    fn segment_width(&self) -> f64 {
        self.t_upper / self.num_segments() as f64
    }

    /// Full knot vector of length `K + degree + 1`.
    pub fn knots(&self) -> Vec<f64> {
        let segments = self.num_segments();
        let h = self.segment_width();
        let mut knots = Vec::with_capacity(self.num_basis + self.degree + 1);
        knots.extend(std::iter::repeat_n(0.0, self.degree));
        knots.extend((0..=segments).map(|i| {
            if i == segments {
                self.t_upper
            } else {
                i as f64 * h
            }
        }));
        knots.extend(std::iter::repeat_n(self.t_upper, self.degree));
        knots
    }

    /// Nonzero basis values at `t`: returns the index of the first nonzero
    /// function and the `degree + 1` values starting there.
    pub fn eval_local(&self, t: f64) -> Result<(usize, [f64; CUBIC + 1])> {
        // absorb rounding overshoot of the right end
        let t = if t > self.t_upper && t <= self.t_upper * (1.0 + 1e-12) {
            self.t_upper
        } else {
            t
        };
        if !(0.0..=self.t_upper).contains(&t) {
            return Err(LpsmcError::Domain {
                t,
                t_upper: self.t_upper,
            });
        }
        let p = self.degree;
        let segments = self.num_segments();
        let segment = ((t / self.segment_width()).floor() as usize).min(segments - 1);
        let span = segment + p;
        let knots = self.knots();

        // Cox-de Boor triangle for the p + 1 functions supported on the span.
        let mut values = [0.0; CUBIC + 1];
        let mut left = [0.0; CUBIC + 1];
        let mut right = [0.0; CUBIC + 1];
        values[0] = 1.0;
        for j in 1..=p {
            left[j] = t - knots[span + 1 - j];
            right[j] = knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = values[r] / denom;
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        Ok((span - p, values))
    }
}

/// Evaluate all `K` basis functions at `t`.
pub fn bspline_eval(grid: &KnotGrid, t: f64) -> Result<DVector<f64>> {
    let (first, local) = grid.eval_local(t)?;
    let mut out = DVector::zeros(grid.num_basis());
    for (offset, value) in local.iter().enumerate() {
        out[first + offset] = *value;
    }
    Ok(out)
}

/// Stack `bspline_eval` over several times into an `n x K` design matrix.
pub fn basis_matrix(grid: &KnotGrid, times: &[f64]) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(times.len(), grid.num_basis());
    for (i, &t) in times.iter().enumerate() {
        let (first, local) = grid.eval_local(t).map_err(|e| LpsmcError::DomainAt {
            index: i,
            source: Box::new(e),
        })?;
        for (offset, value) in local.iter().enumerate() {
            out[(i, first + offset)] = *value;
        }
    }
    Ok(out)
}

/// `(K - r) x K` matrix of `r`-th order forward differences.
pub fn difference_matrix(num_basis: usize, order: usize) -> Result<DMatrix<f64>> {
    if order == 0 || order >= num_basis {
        return Err(LpsmcError::InvalidOrder { order, num_basis });
    }
    let mut d = DMatrix::<f64>::identity(num_basis, num_basis);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let next = DMatrix::from_fn(rows, num_basis, |i, j| d[(i + 1, j)] - d[(i, j)]);
        d = next;
    }
    Ok(d)
}

/// Roughness penalty `D_r' D_r + epsilon I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    matrix: DMatrix<f64>,
    order: usize,
    epsilon: f64,
}

impl PenaltyMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    #[cfg(test)]
    pub(crate) fn identity_for_tests(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            order: 1,
            epsilon: 0.0,
        }
    }
}

pub fn penalty_matrix(num_basis: usize, order: usize, epsilon: f64) -> Result<PenaltyMatrix> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(LpsmcError::Config(format!(
            "penalty ridge must be finite and nonnegative, got {epsilon}"
        )));
    }
    let d = difference_matrix(num_basis, order)?;
    let mut matrix = d.transpose() * &d;
    for k in 0..num_basis {
        matrix[(k, k)] += epsilon;
    }
    Ok(PenaltyMatrix {
        matrix,
        order,
        epsilon,
    })
}
