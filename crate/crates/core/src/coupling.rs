//! Enforcing the real dynamics: solve the coupled equations
//! `xhat_{t+1} = step(Xhat_t, U_t(X_t; xhat))` for the candidate trajectory,
//! using only residual evaluations through the real-system oracle.
//!
//! For the table backend the search is direct: every candidate on the grid is
//! evaluated with one real episode, and the best (residual, proxy cost,
//! index) wins. An optional coordinate-descent refinement re-optimizes one
//! candidate coordinate at a time and never increases the residual. For the
//! closed-form backend the candidate-to-trajectory map is affine, so probing
//! it T+1 times identifies the map exactly and one linear solve yields the
//! fixed point.

use rayon::prelude::*;

use crate::clc_dp::{
    build_policy_table_with_budget, query_policy, BetaVector, GridSpec,
    LinearPolicy, PolicyTable, DEFAULT_CANDIDATE_BUDGET,
};
use crate::error::{Error, Result};
use crate::model::{eval_jc, eval_jr, CostSchedule, RealSystemOracle, Trajectory};

/// One candidate's evaluation record (also the per-candidate trace row).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvaluation {
    pub index: u64,
    pub points: Vec<f64>,
    pub controls: Vec<f64>,
    pub residual: f64,
    pub jc: f64,
    pub jr: f64,
}

/// The resolved fixed point and the policy it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSolution {
    pub candidate: Vec<f64>,
    pub residual: f64,
    pub controls: Vec<f64>,
    pub episodes_used: u64,
    pub jc: f64,
}

#[derive(Debug, Clone)]
pub struct CouplingOptions {
    /// Coordinate-descent refinement sweeps after the direct search.
    pub refine_sweeps: usize,
    /// Residual acceptance threshold; defaults to twice the larger of the
    /// candidate and control grid spacings (control rounding enters the
    /// realized trajectory, so the candidate spacing alone is too strict
    /// when the control grid is the coarser one).
    pub residual_threshold: Option<f64>,
    /// Keep every candidate evaluation for the diagnostic trace.
    pub collect_trace: bool,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            refine_sweeps: 0,
            residual_threshold: None,
            collect_trace: false,
        }
    }
}

fn default_threshold(grids: &GridSpec) -> f64 {
    2.0 * grids.xhat.spacing().max(grids.u.spacing())
}

/// Orders evaluations by (residual, proxy cost, candidate index).
fn better(a: &CandidateEvaluation, b: &CandidateEvaluation) -> bool {
    match a.residual.total_cmp(&b.residual) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => match a.jc.total_cmp(&b.jc) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => a.index < b.index,
        },
    }
}

/// Rolls the model closed-loop through the table, then spends one real
/// episode on the same controls. Returns `None` when the model trajectory
/// escapes the state grid (such a candidate cannot be queried, let alone be
/// a fixed point).
fn evaluate_candidate(
    table: &PolicyTable,
    cost: &CostSchedule,
    oracle: &RealSystemOracle,
    x0: f64,
    index: u64,
) -> Result<Option<CandidateEvaluation>> {
    let (a_model, b_model) = table.model_dynamics();
    let horizon = table.horizon();
    let candidate = table.candidate(index);
    let mut controls = Vec::with_capacity(horizon);
    let mut x = x0;
    let mut model_states = Vec::with_capacity(horizon + 1);
    model_states.push(x0);
    for t in 0..horizon {
        let u = match query_policy(table, t, x, &candidate) {
            Ok(u) => u,
            Err(Error::OutOfRange { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        controls.push(u);
        x = a_model * x + b_model * u;
        model_states.push(x);
    }
    let model_traj = Trajectory {
        states: model_states,
        controls: controls.clone(),
    };
    let real = oracle.rollout(x0, &controls)?;
    let residual = candidate
        .points()
        .iter()
        .zip(&real.states[1..])
        .map(|(c, s)| (c - s).abs())
        .fold(0.0_f64, f64::max);
    let jc = eval_jc(cost, table.beta().values(), candidate.points(), &model_traj)?;
    let jr = eval_jr(cost, &real)?;
    Ok(Some(CandidateEvaluation {
        index,
        points: candidate.points().to_vec(),
        controls,
        residual,
        jc,
        jr,
    }))
}

/// Direct search over the candidate grid, one real episode per candidate.
///
/// Returns the evaluation trace alongside the solution when requested.
pub fn solve_coupled(
    table: &PolicyTable,
    cost: &CostSchedule,
    oracle: &RealSystemOracle,
    x0: f64,
    options: &CouplingOptions,
) -> Result<(CouplingSolution, Option<Vec<CandidateEvaluation>>)> {
    let start_episodes = oracle.episodes();
    let evaluations: Vec<Option<CandidateEvaluation>> = (0..table.n_candidates())
        .into_par_iter()
        .map(|c| evaluate_candidate(table, cost, oracle, x0, c))
        .collect::<Result<_>>()?;

    let mut best: Option<CandidateEvaluation> = None;
    for eval in evaluations.iter().flatten() {
        if best.as_ref().map_or(true, |b| better(eval, b)) {
            best = Some(eval.clone());
        }
    }
    let threshold = options
        .residual_threshold
        .unwrap_or_else(|| default_threshold(table.grids()));
    let mut best = best.ok_or(Error::NoFixedPoint {
        best_residual: f64::INFINITY,
        threshold,
    })?;

    // Coordinate descent on the candidate grid; adopt strictly better points
    // only, so the residual never increases.
    for _ in 0..options.refine_sweeps {
        let mut improved = false;
        for t in 0..table.horizon() {
            let stride = (table.grids().xhat.n as u64)
                .pow((table.horizon() - 1 - t) as u32);
            let digit = (best.index / stride) % table.grids().xhat.n as u64;
            for j in 0..table.grids().xhat.n as u64 {
                if j == digit {
                    continue;
                }
                let index = best.index - digit * stride + j * stride;
                if let Some(eval) = evaluate_candidate(table, cost, oracle, x0, index)? {
                    if better(&eval, &best) {
                        best = eval;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }

    if best.residual > threshold {
        return Err(Error::NoFixedPoint {
            best_residual: best.residual,
            threshold,
        });
    }
    let trace = if options.collect_trace {
        Some(evaluations.into_iter().flatten().collect())
    } else {
        None
    };
    Ok((
        CouplingSolution {
            candidate: best.points,
            residual: best.residual,
            controls: best.controls,
            episodes_used: oracle.episodes() - start_episodes,
            jc: best.jc,
        },
        trace,
    ))
}

/// Fixed point of the affine candidate-to-trajectory map induced by a
/// [`LinearPolicy`]: probe the map at zero and at each unit direction
/// (T+1 real episodes), solve the linear system, then verify with one more
/// episode. Only residual evaluations touch the real system.
pub fn solve_coupled_affine(
    policy: &LinearPolicy,
    a_model: f64,
    b_model: f64,
    cost: &CostSchedule,
    beta: &BetaVector,
    oracle: &RealSystemOracle,
    x0: f64,
    residual_threshold: Option<f64>,
) -> Result<CouplingSolution> {
    let horizon = policy.horizon();
    let start_episodes = oracle.episodes();
    let real_states = |xhat: &[f64]| -> Result<Vec<f64>> {
        let model = policy.rollout_model(a_model, b_model, x0, xhat);
        let real = oracle.rollout(x0, &model.controls)?;
        Ok(real.states[1..].to_vec())
    };

    let zero = vec![0.0; horizon];
    let offset = real_states(&zero)?;
    let scale = 1.0_f64.max(x0.abs());
    let mut map = vec![vec![0.0; horizon]; horizon]; // map[row][col]
    for col in 0..horizon {
        let mut probe = zero.clone();
        probe[col] = scale;
        let image = real_states(&probe)?;
        for row in 0..horizon {
            map[row][col] = (image[row] - offset[row]) / scale;
        }
    }
    // (I - M) xhat = offset
    let mut system = vec![vec![0.0; horizon]; horizon];
    for row in 0..horizon {
        for col in 0..horizon {
            system[row][col] = if row == col { 1.0 } else { 0.0 } - map[row][col];
        }
    }
    let candidate = solve_linear(system, offset).ok_or(Error::SingularCoupling)?;

    let model = policy.rollout_model(a_model, b_model, x0, &candidate);
    let real = oracle.rollout(x0, &model.controls)?;
    let residual = candidate
        .iter()
        .zip(&real.states[1..])
        .map(|(c, s)| (c - s).abs())
        .fold(0.0_f64, f64::max);
    let norm = candidate.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let threshold = residual_threshold.unwrap_or(1e-6 * (1.0 + norm));
    if !residual.is_finite() || residual > threshold {
        return Err(Error::NoFixedPoint {
            best_residual: residual,
            threshold,
        });
    }
    let jc = eval_jc(cost, beta.values(), &candidate, &model)?;
    Ok(CouplingSolution {
        candidate,
        residual,
        controls: model.controls,
        episodes_used: oracle.episodes() - start_episodes,
        jc,
    })
}

/// Gaussian elimination with partial pivoting; None when singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for col in row + 1..n {
            acc -= a[row][col] * x[col];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Which DP backend produces the policy behind the coupled equations.
#[derive(Debug, Clone, PartialEq)]
pub enum DpBackend {
    /// Lookup-table DP over the given grids.
    Grid(GridSpec),
    /// Exact quadratic recursion; no discretization.
    ClosedForm,
}

#[derive(Debug, Clone)]
pub struct ExecuteOptions {
    pub candidate_budget: u64,
    pub refine_sweeps: usize,
    pub residual_threshold: Option<f64>,
    pub collect_trace: bool,
    /// Persist the built policy table (grid backend only).
    pub table_dump: Option<std::path::PathBuf>,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        Self {
            candidate_budget: DEFAULT_CANDIDATE_BUDGET,
            refine_sweeps: 0,
            residual_threshold: None,
            collect_trace: false,
            table_dump: None,
        }
    }
}

/// Everything the full pipeline produces for one beta.
#[derive(Debug, Clone, PartialEq)]
pub struct ClcOutcome {
    pub controls: Vec<f64>,
    pub jr: f64,
    pub episodes_used: u64,
    pub candidate: Vec<f64>,
    pub residual: f64,
    pub real_states: Vec<f64>,
    pub model_states: Vec<f64>,
    pub trace: Option<Vec<CandidateEvaluation>>,
}

/// The full pipeline: build the policy for `beta`, resolve the coupled
/// equations, then spend one final episode executing the resolved controls
/// and report the realized real cost.
#[allow(clippy::too_many_arguments)]
pub fn execute_clc(
    beta: &BetaVector,
    a_model: f64,
    b_model: f64,
    cost: &CostSchedule,
    x0: f64,
    backend: &DpBackend,
    options: &ExecuteOptions,
    oracle: &RealSystemOracle,
) -> Result<ClcOutcome> {
    let start_episodes = oracle.episodes();
    let (solution, trace, model_states) = match backend {
        DpBackend::Grid(grids) => {
            let table = build_policy_table_with_budget(
                a_model,
                b_model,
                cost,
                beta,
                grids,
                options.candidate_budget,
            )?;
            if let Some(path) = &options.table_dump {
                table.write_to(path)?;
            }
            let coupling_options = CouplingOptions {
                refine_sweeps: options.refine_sweeps,
                residual_threshold: options.residual_threshold,
                collect_trace: options.collect_trace,
            };
            let (solution, trace) = solve_coupled(&table, cost, oracle, x0, &coupling_options)?;
            let model = crate::model::rollout(a_model, b_model, x0, &solution.controls)?;
            (solution, trace, model.states)
        }
        DpBackend::ClosedForm => {
            let policy = crate::clc_dp::closed_form_policy(a_model, b_model, cost, beta)?;
            let solution = solve_coupled_affine(
                &policy,
                a_model,
                b_model,
                cost,
                beta,
                oracle,
                x0,
                options.residual_threshold,
            )?;
            let model = crate::model::rollout(a_model, b_model, x0, &solution.controls)?;
            (solution, None, model.states)
        }
    };
    let real = oracle.rollout(x0, &solution.controls)?;
    let jr = eval_jr(cost, &real)?;
    Ok(ClcOutcome {
        controls: solution.controls,
        jr,
        episodes_used: oracle.episodes() - start_episodes,
        candidate: solution.candidate,
        residual: solution.residual,
        real_states: real.states,
        model_states,
        trace,
    })
}
