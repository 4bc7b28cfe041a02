//! System/cost data types, trajectory rollouts, and the two objectives.
//!
//! The real cost `J_r` sums `Q_t x^2 + R_t u^2` along a trajectory of the true
//! system. The proxy cost `J_c` is the same expression on the model trajectory
//! plus per-stage mismatch penalties `beta_{t+1} (X_{t+1} - xhat_{t+1})^2`
//! against a hypothesized real trajectory.
//!
//! All arithmetic is plain f64 with no tolerances; solvers own their own
//! tolerances so these evaluations stay bit-reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// True and model scalar LTI dynamics plus the shared initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance {
    pub a_true: f64,
    pub b_true: f64,
    pub a_model: f64,
    pub b_model: f64,
    pub x0: f64,
    pub horizon: usize,
}

impl SystemInstance {
    pub fn new(
        a_true: f64,
        b_true: f64,
        a_model: f64,
        b_model: f64,
        x0: f64,
        horizon: usize,
    ) -> Result<Self> {
        if b_true == 0.0 || b_model == 0.0 {
            return Err(Error::invalid("b_true and b_model must be nonzero"));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        for (name, v) in [
            ("a_true", a_true),
            ("b_true", b_true),
            ("a_model", a_model),
            ("b_model", b_model),
            ("x0", x0),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        Ok(Self {
            a_true,
            b_true,
            a_model,
            b_model,
            x0,
            horizon,
        })
    }
}

/// Stage weights (Q_0..Q_T, R_0..R_{T-1}) of the quadratic objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSchedule {
    q: Vec<f64>,
    r: Vec<f64>,
}

impl CostSchedule {
    /// `q` has T+1 entries, `r` has T; all weights nonnegative and the
    /// terminal weight strictly positive (the beta prescriptions divide by it).
    pub fn new(q: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        if q.len() < 2 {
            return Err(Error::invalid("q needs at least 2 entries (T >= 1)"));
        }
        if r.len() + 1 != q.len() {
            return Err(Error::LengthMismatch {
                context: "cost schedule r vs q",
                expected: q.len() - 1,
                got: r.len(),
            });
        }
        if q.iter().chain(r.iter()).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("cost weights must be finite and nonnegative"));
        }
        if *q.last().unwrap() <= 0.0 {
            return Err(Error::invalid("terminal weight Q_T must be positive"));
        }
        Ok(Self { q, r })
    }

    pub fn horizon(&self) -> usize {
        self.r.len()
    }

    pub fn q(&self, t: usize) -> f64 {
        self.q[t]
    }

    pub fn r(&self, t: usize) -> f64 {
        self.r[t]
    }

    pub fn terminal_q(&self) -> f64 {
        *self.q.last().unwrap()
    }

    pub fn q_weights(&self) -> &[f64] {
        &self.q
    }

    pub fn r_weights(&self) -> &[f64] {
        &self.r
    }
}

/// A realized state/control sequence: T+1 states, T controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

/// Exact rollout of scalar linear dynamics: x_{t+1} = a x_t + b u_t.
pub fn rollout(a: f64, b: f64, x0: f64, controls: &[f64]) -> Result<Trajectory> {
    if controls.is_empty() {
        return Err(Error::invalid("control sequence must be nonempty"));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0);
    let mut x = x0;
    for &u in controls {
        x = a * x + b * u;
        states.push(x);
    }
    Ok(Trajectory {
        states,
        controls: controls.to_vec(),
    })
}

/// Real cost: sum of Q_t x_t^2 + R_t u_t^2 plus the terminal Q_T x_T^2.
pub fn eval_jr(cost: &CostSchedule, traj: &Trajectory) -> Result<f64> {
    let horizon = cost.horizon();
    check_traj_len(traj, horizon)?;
    let mut total = 0.0;
    for t in 0..horizon {
        total += cost.q(t) * traj.states[t] * traj.states[t]
            + cost.r(t) * traj.controls[t] * traj.controls[t];
    }
    total += cost.terminal_q() * traj.states[horizon] * traj.states[horizon];
    Ok(total)
}

/// Proxy cost: stage costs on the model trajectory plus the mismatch
/// penalties beta_{t+1} (x_{t+1} - xhat_{t+1})^2.
///
/// `beta` and `xhat` both have T entries, indexed so that `beta[t]` and
/// `xhat[t]` weigh the stage-(t+1) state.
pub fn eval_jc(cost: &CostSchedule, beta: &[f64], xhat: &[f64], traj: &Trajectory) -> Result<f64> {
    let horizon = cost.horizon();
    check_traj_len(traj, horizon)?;
    if beta.len() != horizon {
        return Err(Error::LengthMismatch {
            context: "beta vs horizon",
            expected: horizon,
            got: beta.len(),
        });
    }
    if xhat.len() != horizon {
        return Err(Error::LengthMismatch {
            context: "candidate trajectory vs horizon",
            expected: horizon,
            got: xhat.len(),
        });
    }
    let mut total = 0.0;
    for t in 0..horizon {
        let mismatch = traj.states[t + 1] - xhat[t];
        total += cost.q(t) * traj.states[t] * traj.states[t]
            + cost.r(t) * traj.controls[t] * traj.controls[t]
            + beta[t] * mismatch * mismatch;
    }
    total += cost.terminal_q() * traj.states[horizon] * traj.states[horizon];
    Ok(total)
}

fn check_traj_len(traj: &Trajectory, horizon: usize) -> Result<()> {
    if traj.controls.len() != horizon {
        return Err(Error::LengthMismatch {
            context: "trajectory controls vs cost horizon",
            expected: horizon,
            got: traj.controls.len(),
        });
    }
    if traj.states.len() != horizon + 1 {
        return Err(Error::LengthMismatch {
            context: "trajectory states vs cost horizon",
            expected: horizon + 1,
            got: traj.states.len(),
        });
    }
    Ok(())
}

/// Count of real-system trajectories consumed, the sample-efficiency currency.
///
/// Cloning shares the underlying counter, so a ledger can be read while
/// concurrently executing rollouts increment it.
#[derive(Debug, Clone, Default)]
pub struct EpisodeLedger {
    count: Arc<AtomicU64>,
}

impl EpisodeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn episodes(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    fn record_episode(&self) {
        self.count.fetch_add(1, Ordering::SeqCst);
    }
}

/// The only path to the true dynamics for the solvers: an opaque step
/// function plus the episode ledger. Callers never see a_true or b_true.
pub struct RealSystemOracle {
    step: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    ledger: EpisodeLedger,
}

impl RealSystemOracle {
    pub fn new(step: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            step: Box::new(step),
            ledger: EpisodeLedger::new(),
        }
    }

    /// Wraps the true dynamics of an instance. Only the closure captures the
    /// true parameters; nothing else on the oracle exposes them.
    pub fn from_instance(instance: &SystemInstance) -> Self {
        let (a, b) = (instance.a_true, instance.b_true);
        Self::new(move |x, u| a * x + b * u)
    }

    pub fn ledger(&self) -> &EpisodeLedger {
        &self.ledger
    }

    pub fn episodes(&self) -> u64 {
        self.ledger.episodes()
    }

    /// One full-horizon episode under a fixed open-loop control sequence.
    pub fn rollout(&self, x0: f64, controls: &[f64]) -> Result<Trajectory> {
        self.rollout_closed_loop(x0, controls.len(), |t, _x| controls[t])
    }

    /// One full-horizon episode under a state-feedback policy; the policy
    /// sees the realized real state at each stage.
    pub fn rollout_closed_loop(
        &self,
        x0: f64,
        horizon: usize,
        mut policy: impl FnMut(usize, f64) -> f64,
    ) -> Result<Trajectory> {
        if horizon == 0 {
            return Err(Error::invalid("episode horizon must be at least 1"));
        }
        let mut states = Vec::with_capacity(horizon + 1);
        let mut controls = Vec::with_capacity(horizon);
        states.push(x0);
        let mut x = x0;
        for t in 0..horizon {
            let u = policy(t, x);
            x = (self.step)(x, u);
            controls.push(u);
            states.push(x);
        }
        self.ledger.record_episode();
        Ok(Trajectory { states, controls })
    }
}

impl std::fmt::Debug for RealSystemOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealSystemOracle")
            .field("episodes", &self.episodes())
            .finish()
    }
}
