//! Dynamic programming on the penalized proxy cost.
//!
//! Two interchangeable backends produce the control law
//! `U_t(X_t; xhat_{1:T})` parameterized by a hypothesized real trajectory:
//!
//! * [`build_policy_table`] — backward DP over discretized state/control
//!   grids, one backward pass per candidate trajectory, stored as a lookup
//!   table ([`PolicyTable`]).
//! * [`closed_form_policy`] — the exact recursion on quadratic value
//!   functions, valid because every stage objective stays quadratic; yields
//!   a [`LinearPolicy`] with controls affine in the state and the candidate.

mod closed_form;
mod table;

pub use closed_form::{closed_form_policy, LinearPolicy, StageLaw};
pub use table::{
    build_policy_table, build_policy_table_with_budget, query_policy, PolicyTable,
    DEFAULT_CANDIDATE_BUDGET,
};

use crate::error::{Error, Result};

/// Per-stage penalty weights beta_1..beta_T; `values[t]` weighs
/// the mismatch of the stage-(t+1) state.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVector {
    values: Vec<f64>,
}

impl BetaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("beta vector must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("beta entries must be finite"));
        }
        Ok(Self { values })
    }

    pub fn zeros(horizon: usize) -> Self {
        Self {
            values: vec![0.0; horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, t: usize) -> f64 {
        self.values[t]
    }

    pub fn set(&mut self, t: usize, value: f64) {
        self.values[t] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// One uniformly spaced axis: point i is `min + i * (max - min) / (n - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min >= max {
            return Err(Error::invalid(format!(
                "grid axis needs finite min < max, got [{min}, {max}]"
            )));
        }
        if n < 2 {
            return Err(Error::invalid("grid axis needs at least 2 points"));
        }
        Ok(Self { min, max, n })
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + i as f64 * (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i)).collect()
    }

    /// Nearest grid index, ties toward the lower index. Values up to one
    /// spacing outside the range clamp to the boundary; beyond that errors.
    pub fn snap_index(&self, x: f64, axis_name: &'static str) -> Result<usize> {
        let h = self.spacing();
        if !x.is_finite() || x < self.min - h || x > self.max + h {
            return Err(Error::OutOfRange {
                axis: axis_name,
                value: x,
                min: self.min,
                max: self.max,
            });
        }
        let f = (x - self.min) / h;
        let shifted = f + 0.5;
        let mut i = shifted.floor();
        if i == shifted {
            i -= 1.0; // exact midpoint: take the lower index
        }
        Ok((i.max(0.0) as usize).min(self.n - 1))
    }

    /// Exact-membership check used for candidate validation.
    pub fn exact_index(&self, x: f64, axis_name: &'static str) -> Result<usize> {
        let i = self.snap_index(x, axis_name)?;
        if self.value(i) != x {
            return Err(Error::invalid(format!(
                "{axis_name} value {x} is not a grid point"
            )));
        }
        Ok(i)
    }
}

/// Discretization of the model-state, control, and candidate spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x: GridAxis,
    pub u: GridAxis,
    pub xhat: GridAxis,
}

impl GridSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x_min: f64,
        x_max: f64,
        n_x: usize,
        u_min: f64,
        u_max: f64,
        n_u: usize,
        xhat_min: f64,
        xhat_max: f64,
        n_xhat: usize,
    ) -> Result<Self> {
        Ok(Self {
            x: GridAxis::new(x_min, x_max, n_x)?,
            u: GridAxis::new(u_min, u_max, n_u)?,
            xhat: GridAxis::new(xhat_min, xhat_max, n_xhat)?,
        })
    }

    /// The defaults used for the reference two-stage experiments: control
    /// spacing 0.025, state and candidate spacing 0.05.
    pub fn reference_defaults() -> Self {
        Self::new(-2.0, 2.0, 81, -3.0, 3.0, 241, -2.0, 2.0, 81).unwrap()
    }

    /// Number of candidate trajectories, `n_xhat^horizon`, if representable.
    pub fn candidate_count(&self, horizon: usize) -> u128 {
        (self.xhat.n as u128)
            .checked_pow(horizon as u32)
            .unwrap_or(u128::MAX)
    }
}

/// A hypothesized real trajectory (xhat_1..xhat_T) on the candidate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTrajectory {
    points: Vec<f64>,
}

impl CandidateTrajectory {
    /// From raw values; every entry must be exactly a grid point.
    pub fn new(points: Vec<f64>, axis: &GridAxis) -> Result<Self> {
        for &p in &points {
            axis.exact_index(p, "xhat")?;
        }
        Ok(Self { points })
    }

    pub fn from_indices(indices: &[usize], axis: &GridAxis) -> Result<Self> {
        if indices.iter().any(|&i| i >= axis.n) {
            return Err(Error::invalid("candidate index beyond xhat axis"));
        }
        Ok(Self {
            points: indices.iter().map(|&i| axis.value(i)).collect(),
        })
    }

    /// Decodes a flat candidate index (row-major, first stage slowest).
    pub fn from_flat_index(index: u64, horizon: usize, axis: &GridAxis) -> Self {
        let n = axis.n as u64;
        let mut points = vec![0.0; horizon];
        let mut rem = index;
        for t in (0..horizon).rev() {
            points[t] = axis.value((rem % n) as usize);
            rem /= n;
        }
        Self { points }
    }

    /// Flat row-major index of an on-grid candidate.
    pub fn flat_index(&self, axis: &GridAxis) -> Result<u64> {
        let mut idx: u64 = 0;
        for &p in &self.points {
            let i = axis.exact_index(p, "xhat")? as u64;
            idx = idx * axis.n as u64 + i;
        }
        Ok(idx)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
