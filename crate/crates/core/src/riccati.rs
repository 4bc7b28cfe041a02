//! Exact finite-horizon solution of the scalar LQR with known dynamics.
//!
//! Backward recursion on the value coefficient P_t with V_t(x) = P_t x^2:
//!
//! ```text
//! P_T = Q_T
//! K_t = -(P_{t+1} a b) / (R_t + P_{t+1} b^2)
//! P_t = Q_t + P_{t+1} a^2 - (P_{t+1} a b)^2 / (R_t + P_{t+1} b^2)
//! ```
//!
//! This is the ground truth the rest of the crate is judged against.

use crate::error::{Error, Result};
use crate::model::{self, CostSchedule, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// Time-varying feedback gains, U_t = K_t x_t.
    pub gains: Vec<f64>,
    /// Value coefficients P_0..P_T.
    pub value_coeffs: Vec<f64>,
    /// P_0 x0^2, the optimal cost from the given initial state.
    pub optimal_cost: f64,
}

/// Solves the backward recursion for arbitrary finite horizons.
///
/// `R_t = 0` is allowed; the denominator stays positive as long as the
/// downstream value coefficient is, which the positive terminal weight
/// guarantees unless an intermediate Q_t is zero too.
pub fn solve(a: f64, b: f64, cost: &CostSchedule, x0: f64) -> Result<RiccatiSolution> {
    if b == 0.0 {
        return Err(Error::invalid("riccati: b must be nonzero"));
    }
    let horizon = cost.horizon();
    let mut value_coeffs = vec![0.0; horizon + 1];
    let mut gains = vec![0.0; horizon];
    value_coeffs[horizon] = cost.terminal_q();
    for t in (0..horizon).rev() {
        let p_next = value_coeffs[t + 1];
        let denom = cost.r(t) + p_next * b * b;
        if denom == 0.0 {
            return Err(Error::DegenerateCost { stage: t });
        }
        let gain = -(p_next * a * b) / denom;
        gains[t] = gain;
        value_coeffs[t] =
            cost.q(t) + p_next * a * a - (p_next * a * b) * (p_next * a * b) / denom;
    }
    Ok(RiccatiSolution {
        optimal_cost: value_coeffs[0] * x0 * x0,
        gains,
        value_coeffs,
    })
}

/// Closed-loop rollout applying U_t = K_t x_t on the (a, b) dynamics.
pub fn optimal_policy_controls(
    sol: &RiccatiSolution,
    a: f64,
    b: f64,
    x0: f64,
) -> Result<Trajectory> {
    let horizon = sol.gains.len();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(x0);
    let mut x = x0;
    for &k in &sol.gains {
        let u = k * x;
        x = a * x + b * u;
        controls.push(u);
        states.push(x);
    }
    let _ = model::rollout(a, b, x0, &controls)?;
    Ok(Trajectory { states, controls })
}
