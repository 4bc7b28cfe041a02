//! Learning the penalty weights from data: gradient descent on the composite
//! objective J(beta) = realized real cost of the policy built for beta, with
//! the gradient estimated by forward finite differences. Also the two
//! closed-form prescriptions: the terminal weight is always -Q_T, and with
//! zero control-effort weights every component is -Q_t + eps.

use crate::clc_dp::BetaVector;
use crate::error::{Error, Result};
use crate::model::CostSchedule;

/// beta_t = -Q_t + eps for t = 1..T; optimal in the zero-effort class
/// (R_t = 0, matched b) as eps tends to zero, regardless of the dynamics.
pub fn no_effort_beta(cost: &CostSchedule, epsilon: f64) -> Result<BetaVector> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let values = (1..=cost.horizon())
        .map(|t| -cost.q(t) + epsilon)
        .collect();
    BetaVector::new(values)
}

/// The terminal penalty weight, -Q_T, optimal independently of the dynamics.
pub fn terminal_beta(cost: &CostSchedule) -> f64 {
    -cost.terminal_q()
}

/// Stepsize schedule for the descent iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSizeRule {
    Constant(f64),
    /// alpha_k = alpha0 / (1 + k / kappa)
    Diminishing { alpha0: f64, kappa: f64 },
}

impl StepSizeRule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSizeRule::Constant(a) => *a,
            StepSizeRule::Diminishing { alpha0, kappa } => alpha0 / (1.0 + k as f64 / kappa),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSizeRule::Constant(a) => a.is_finite() && *a >= 0.0,
            StepSizeRule::Diminishing { alpha0, kappa } => {
                alpha0.is_finite() && *alpha0 >= 0.0 && *kappa > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("step sizes must be finite and nonnegative"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BetaLearnConfig {
    pub beta_init: BetaVector,
    pub step_rule: StepSizeRule,
    /// Forward-difference probe size; instance dependent (must straddle the
    /// plateau width the evaluator's discretization induces).
    pub fd_delta: f64,
    pub max_iters: usize,
    /// Stop when the sup-norm change between successive iterates drops below.
    pub convergence_tol: f64,
    /// Keep the terminal component frozen at its initial value (-Q_T).
    pub fix_terminal: bool,
    /// Stop and flag divergence when J exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

impl BetaLearnConfig {
    pub fn new(beta_init: BetaVector, step_rule: StepSizeRule) -> Self {
        Self {
            beta_init,
            step_rule,
            fd_delta: 1e-2,
            max_iters: 25,
            convergence_tol: 1e-6,
            fix_terminal: true,
            divergence_factor: 100.0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.step_rule.validate()?;
        if !(self.fd_delta > 0.0) {
            return Err(Error::invalid("fd_delta must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::invalid("convergence_tol must be positive"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::invalid("divergence_factor must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaIterate {
    pub iteration: usize,
    pub beta: BetaVector,
    pub j_value: f64,
    pub episodes_cumulative: u64,
}

/// The recorded descent path; `diverged` marks a guard stop.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaTrace {
    pub iterates: Vec<BetaIterate>,
    pub diverged: bool,
}

impl BetaTrace {
    /// The iterate with the smallest observed objective. The composite
    /// objective can be nonconvex (and piecewise constant under a grid
    /// evaluator), so the last iterate is not necessarily the best one.
    pub fn best(&self) -> &BetaIterate {
        self.iterates
            .iter()
            .min_by(|a, b| a.j_value.total_cmp(&b.j_value))
            .expect("trace never empty")
    }
}

#[derive(Debug)]
pub struct FdGradient {
    pub gradient: Vec<f64>,
    pub base_value: f64,
    pub episodes: u64,
}

/// Forward differences on the composite objective:
/// `g_t = (J(beta + delta e_t) - J(beta)) / delta`.
///
/// With `clamp_terminal` the terminal component is not probed and its
/// gradient entry is zero, so the update leaves it untouched. Episode count
/// sums every evaluator call (T+1 unclamped, T clamped).
pub fn fd_gradient(
    beta: &BetaVector,
    delta: f64,
    clamp_terminal: bool,
    mut evaluator: impl FnMut(&BetaVector) -> Result<(f64, u64)>,
) -> Result<FdGradient> {
    if !(delta > 0.0) {
        return Err(Error::invalid("fd delta must be positive"));
    }
    let horizon = beta.len();
    let (base_value, mut episodes) = evaluator(beta)?;
    let probed = if clamp_terminal { horizon - 1 } else { horizon };
    let mut gradient = vec![0.0; horizon];
    for t in 0..probed {
        let mut probe = beta.clone();
        probe.set(t, probe.get(t) + delta);
        let (value, eps) = evaluator(&probe).map_err(|e| Error::ProbeFailed {
            component: t,
            source: Box::new(e),
        })?;
        episodes += eps;
        gradient[t] = (value - base_value) / delta;
    }
    Ok(FdGradient {
        gradient,
        base_value,
        episodes,
    })
}

/// Descent on the composite objective with per-iteration forward differences.
///
/// Each trace row records the iterate before its update, the measured
/// objective, and the cumulative episode count. Stops on `max_iters`, on the
/// sup-norm convergence tolerance between successive iterates, or via the
/// divergence guard (flagged, not an error).
pub fn learn_beta(
    config: &BetaLearnConfig,
    mut evaluator: impl FnMut(&BetaVector) -> Result<(f64, u64)>,
) -> Result<BetaTrace> {
    config.validate()?;
    let mut beta = config.beta_init.clone();
    let mut episodes_cumulative = 0u64;
    let mut iterates = Vec::new();
    let mut diverged = false;
    let mut initial_value = None;

    for k in 0..config.max_iters {
        let fd = fd_gradient(&beta, config.fd_delta, config.fix_terminal, &mut evaluator)?;
        episodes_cumulative += fd.episodes;
        iterates.push(BetaIterate {
            iteration: k,
            beta: beta.clone(),
            j_value: fd.base_value,
            episodes_cumulative,
        });
        let reference = *initial_value.get_or_insert(fd.base_value);
        if !fd.base_value.is_finite()
            || fd.base_value > config.divergence_factor * reference.max(f64::MIN_POSITIVE)
        {
            diverged = true;
            break;
        }
        let alpha = config.step_rule.at(k);
        let mut next = beta.clone();
        let mut step = 0.0_f64;
        for t in 0..beta.len() {
            let updated = beta.get(t) - alpha * fd.gradient[t];
            if !updated.is_finite() {
                diverged = true;
                break;
            }
            step = step.max((updated - beta.get(t)).abs());
            next.set(t, updated);
        }
        if diverged {
            break;
        }
        beta = next;
        if step <= config.convergence_tol {
            break;
        }
    }
    Ok(BetaTrace { iterates, diverged })
}
