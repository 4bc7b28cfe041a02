//! Exact grid-free DP on the penalized proxy cost.
//!
//! Every stage objective is quadratic in the control, so the value function
//! stays of the form `V_t(x) = p_t x^2 + m_t x + const` where the linear
//! coefficient `m_t` is itself linear in the candidate trajectory. Carrying
//! `p_t` and the coefficient vector of `m_t` through the backward recursion
//! yields controls affine in the state and the candidate, with no
//! discretization error. The recursion is well posed as long as the control
//! curvature `r_t + (beta_{t+1} + p_{t+1}) b^2` stays positive.

use super::BetaVector;
use crate::error::{Error, Result};
use crate::model::{CostSchedule, Trajectory};

/// One stage of the affine law `u_t = gain * x + offset_weights . xhat`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLaw {
    pub gain: f64,
    pub offset_weights: Vec<f64>,
}

/// Control law with `u_t(x; xhat)` affine in both arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    stages: Vec<StageLaw>,
}

impl LinearPolicy {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, t: usize) -> &StageLaw {
        &self.stages[t]
    }

    pub fn control(&self, t: usize, x: f64, xhat: &[f64]) -> f64 {
        let law = &self.stages[t];
        let mut u = law.gain * x;
        for (w, xh) in law.offset_weights.iter().zip(xhat) {
            u += w * xh;
        }
        u
    }

    /// Closed-loop rollout on the model dynamics for a fixed candidate.
    pub fn rollout_model(&self, a: f64, b: f64, x0: f64, xhat: &[f64]) -> Trajectory {
        let mut states = Vec::with_capacity(self.horizon() + 1);
        let mut controls = Vec::with_capacity(self.horizon());
        states.push(x0);
        let mut x = x0;
        for t in 0..self.horizon() {
            let u = self.control(t, x, xhat);
            x = a * x + b * u;
            controls.push(u);
            states.push(x);
        }
        Trajectory { states, controls }
    }
}

/// Backward recursion producing the exact proxy-cost minimizer.
///
/// Errors with `IllPosed` when some stage objective is not strictly convex
/// in the control (the proxy cost is then unbounded below and no minimizer
/// exists, which happens for sufficiently negative beta).
pub fn closed_form_policy(
    a: f64,
    b: f64,
    cost: &CostSchedule,
    beta: &BetaVector,
) -> Result<LinearPolicy> {
    if b == 0.0 {
        return Err(Error::invalid("closed-form DP: b must be nonzero"));
    }
    let horizon = cost.horizon();
    if beta.len() != horizon {
        return Err(Error::LengthMismatch {
            context: "beta vs cost horizon",
            expected: horizon,
            got: beta.len(),
        });
    }

    let mut stages = vec![
        StageLaw {
            gain: 0.0,
            offset_weights: vec![0.0; horizon],
        };
        horizon
    ];
    // V_{t+1}(x) = p x^2 + (m . xhat) x + const
    let mut p = cost.terminal_q();
    let mut m = vec![0.0; horizon];

    for t in (0..horizon).rev() {
        let beta_t = beta.get(t);
        let c2 = beta_t + p;
        // linear coefficient of x' in the continuation-plus-penalty term
        let mut c1 = m.clone();
        c1[t] -= 2.0 * beta_t;
        let curvature = cost.r(t) + c2 * b * b;
        if curvature <= 0.0 {
            return Err(Error::IllPosed {
                stage: t,
                curvature,
            });
        }
        let gain = -(c2 * a * b) / curvature;
        let offset_scale = -b / (2.0 * curvature);
        let offset_weights: Vec<f64> = c1.iter().map(|w| w * offset_scale).collect();
        let phi = a + b * gain;
        let p_new = cost.q(t) + cost.r(t) * gain * gain + c2 * phi * phi;
        let d_coeff = 2.0 * cost.r(t) * gain + 2.0 * c2 * phi * b;
        let m_new: Vec<f64> = offset_weights
            .iter()
            .zip(&c1)
            .map(|(d, c)| d_coeff * d + phi * c)
            .collect();
        stages[t] = StageLaw {
            gain,
            offset_weights,
        };
        p = p_new;
        m = m_new;
    }

    Ok(LinearPolicy { stages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati;

    fn paper_cost() -> CostSchedule {
        CostSchedule::new(vec![0.0, 1.0, 1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_beta_recovers_model_lqr() {
        let cost = CostSchedule::new(vec![0.3, 1.0, 0.5, 2.0], vec![0.6, 1.0, 0.2]).unwrap();
        let (a, b) = (1.4, 0.7);
        let policy = closed_form_policy(a, b, &cost, &BetaVector::zeros(3)).unwrap();
        let sol = riccati::solve(a, b, &cost, 1.0).unwrap();
        for t in 0..3 {
            assert!((policy.stage(t).gain - sol.gains[t]).abs() <= 1e-12);
            for w in &policy.stage(t).offset_weights {
                assert!(w.abs() <= 1e-12);
            }
        }
    }

    /// Hand-expanded two-stage law for the reference instance at
    /// beta = (-1.5, -1): u_1 = -xhat_2, u_0 = x_0 - 3 xhat_1 - 2 xhat_2.
    #[test]
    fn paper_instance_affine_law() {
        let beta = BetaVector::new(vec![-1.5, -1.0]).unwrap();
        let policy = closed_form_policy(1.0, 1.0, &paper_cost(), &beta).unwrap();
        let s1 = policy.stage(1);
        assert!((s1.gain - 0.0).abs() <= 1e-12);
        assert!((s1.offset_weights[0] - 0.0).abs() <= 1e-12);
        assert!((s1.offset_weights[1] - (-1.0)).abs() <= 1e-12);
        let s0 = policy.stage(0);
        assert!((s0.gain - 1.0).abs() <= 1e-12);
        assert!((s0.offset_weights[0] - (-3.0)).abs() <= 1e-12);
        assert!((s0.offset_weights[1] - (-2.0)).abs() <= 1e-12);
    }

    /// General two-stage control laws match the direct minimization of the
    /// nested objective.
    #[test]
    fn two_stage_law_matches_direct_formulas() {
        let cost = CostSchedule::new(vec![0.2, 0.8, 1.3], vec![0.9, 1.1]).unwrap();
        let (a, b) = (1.2, 0.8);
        let beta = BetaVector::new(vec![-0.4, -0.9]).unwrap();
        let policy = closed_form_policy(a, b, &cost, &beta).unwrap();
        let (q1, q2) = (cost.q(1), cost.q(2));
        let (r0, r1) = (cost.r(0), cost.r(1));
        let (b1, b2) = (beta.get(0), beta.get(1));

        // stage 1: u_1 = [beta_2 b xhat_2 - (q_2 + beta_2) a b x] / (r_1 + b^2 (q_2 + beta_2))
        let d1 = r1 + b * b * (q2 + b2);
        let s1 = policy.stage(1);
        assert!((s1.gain - (-(q2 + b2) * a * b / d1)).abs() <= 1e-12);
        assert!((s1.offset_weights[1] - (b2 * b / d1)).abs() <= 1e-12);
        assert!(s1.offset_weights[0].abs() <= 1e-12);

        // stage 0 curvature: r_0 + b^2 (q_1 + beta_1 + p_1) with p_1 the
        // minimized stage-1 quadratic coefficient.
        let k1 = s1.gain;
        let phi1 = a + b * k1;
        let p1 = q1 + r1 * k1 * k1 + (q2 + b2) * phi1 * phi1;
        let d0 = r0 + b * b * (b1 + p1);
        let s0 = policy.stage(0);
        assert!((s0.gain - (-(b1 + p1) * a * b / d0)).abs() <= 1e-12);
    }

    #[test]
    fn concave_stage_objective_is_rejected() {
        // beta_1 beyond -(r_0/b^2 + q_1 + ...) makes stage 0 concave in u.
        let beta = BetaVector::new(vec![-3.0, -1.0]).unwrap();
        match closed_form_policy(1.0, 1.0, &paper_cost(), &beta) {
            Err(Error::IllPosed { stage: 0, curvature }) => assert!(curvature <= 0.0),
            other => panic!("expected ill-posed error, got {other:?}"),
        }
    }

    /// The grid table agrees with the exact law on aligned grids.
    #[test]
    fn grid_table_matches_closed_form_on_aligned_grids() {
        use super::super::{build_policy_table, query_policy, CandidateTrajectory, GridSpec};
        let cost = paper_cost();
        let beta = BetaVector::new(vec![-1.5, -1.0]).unwrap();
        let grids = GridSpec::new(-2.0, 2.0, 81, -3.0, 3.0, 241, -2.0, 2.0, 81).unwrap();
        let (a, b) = (1.0, 1.0);
        let table = build_policy_table(a, b, &cost, &beta, &grids).unwrap();
        let policy = closed_form_policy(a, b, &cost, &beta).unwrap();
        let h_u = grids.u.spacing();
        for indices in [[45usize, 45], [50, 30], [40, 40]] {
            let cand = CandidateTrajectory::from_indices(&indices, &grids.xhat).unwrap();
            let xhat = cand.points().to_vec();
            for x in [0.5, -0.25, 1.0] {
                for t in 0..2 {
                    let exact = policy.control(t, x, &xhat);
                    if exact.abs() > grids.u.max - h_u {
                        continue;
                    }
                    let grid = query_policy(&table, t, x, &cand).unwrap();
                    assert!(
                        (grid - exact).abs() <= h_u,
                        "t={t} x={x} xhat={xhat:?}: grid {grid} vs exact {exact}"
                    );
                }
            }
        }
    }
}
