//! C ABI for the clc-lqr library.
//!
//! One opaque handle (`ClcProblem`, the system instance plus cost schedule)
//! flows through free functions returning `ClcStatus` codes; results come
//! back through caller-allocated out buffers sized by the horizon. The real
//! system stays behind the library's oracle internally; callers supply the
//! true parameters only when constructing the problem, exactly as the Rust
//! API does.

use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use clc_lqr::beta_learn::{self, BetaLearnConfig, StepSizeRule};
use clc_lqr::clc_dp::{BetaVector, GridSpec};
use clc_lqr::coupling::{execute_clc, DpBackend, ExecuteOptions};
use clc_lqr::model::{CostSchedule, RealSystemOracle, SystemInstance};
use clc_lqr::riccati;
use clc_lqr::Error;

/// Combined system instance and cost schedule behind an opaque pointer.
pub struct ClcProblem {
    instance: SystemInstance,
    cost: CostSchedule,
}

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    LengthMismatch = 3,
    DegenerateCost = 4,
    CapacityExceeded = 5,
    OutOfRange = 6,
    NoFixedPoint = 7,
    IllPosed = 8,
    SingularCoupling = 9,
    Divergence = 10,
    IoError = 11,
    Panic = 12,
}

/// Uniform grid bounds and point counts for the table backend.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ClcGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub xhat_min: f64,
    pub xhat_max: f64,
    pub n_x: usize,
    pub n_u: usize,
    pub n_xhat: usize,
}

fn status_of(err: &Error) -> ClcStatus {
    match err {
        Error::InvalidInput(_) | Error::Config(_) | Error::TableFormat(_) => {
            ClcStatus::InvalidInput
        }
        Error::LengthMismatch { .. } => ClcStatus::LengthMismatch,
        Error::DegenerateCost { .. } => ClcStatus::DegenerateCost,
        Error::CapacityExceeded { .. } => ClcStatus::CapacityExceeded,
        Error::OutOfRange { .. } => ClcStatus::OutOfRange,
        Error::NoFixedPoint { .. } => ClcStatus::NoFixedPoint,
        Error::IllPosed { .. } => ClcStatus::IllPosed,
        Error::SingularCoupling => ClcStatus::SingularCoupling,
        Error::Divergence(_) => ClcStatus::Divergence,
        Error::ProbeFailed { source, .. } => status_of(source),
        Error::Io(_) => ClcStatus::IoError,
    }
}

fn guarded(f: impl FnOnce() -> ClcStatus) -> ClcStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(ClcStatus::Panic)
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn clc_status_message(status: ClcStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        ClcStatus::Ok => b"ok\0",
        ClcStatus::NullPointer => b"null pointer argument\0",
        ClcStatus::InvalidInput => b"invalid input\0",
        ClcStatus::LengthMismatch => b"sequence length mismatch\0",
        ClcStatus::DegenerateCost => b"degenerate cost (zero denominator)\0",
        ClcStatus::CapacityExceeded => b"candidate space exceeds budget\0",
        ClcStatus::OutOfRange => b"state outside grid\0",
        ClcStatus::NoFixedPoint => b"no fixed point within threshold\0",
        ClcStatus::IllPosed => b"proxy cost not convex in the control\0",
        ClcStatus::SingularCoupling => b"coupled equations singular\0",
        ClcStatus::Divergence => b"iteration diverged\0",
        ClcStatus::IoError => b"i/o error\0",
        ClcStatus::Panic => b"internal panic\0",
    };
    msg.as_ptr() as *const c_char
}

/// Creates a problem handle. `q` has `horizon + 1` entries, `r` has
/// `horizon`. On success writes the handle to `out`.
///
/// # Safety
/// `q` and `r` must point to readable arrays of the stated lengths; `out`
/// must be a valid location for one pointer. The handle must be released
/// with [`clc_problem_free`].
#[no_mangle]
pub unsafe extern "C" fn clc_problem_new(
    a_true: f64,
    b_true: f64,
    a_model: f64,
    b_model: f64,
    x0: f64,
    q: *const f64,
    q_len: usize,
    r: *const f64,
    r_len: usize,
    out: *mut *mut ClcProblem,
) -> ClcStatus {
    if q.is_null() || r.is_null() || out.is_null() {
        return ClcStatus::NullPointer;
    }
    let q = slice::from_raw_parts(q, q_len).to_vec();
    let r = slice::from_raw_parts(r, r_len).to_vec();
    guarded(|| {
        let cost = match CostSchedule::new(q, r) {
            Ok(c) => c,
            Err(e) => return status_of(&e),
        };
        let instance =
            match SystemInstance::new(a_true, b_true, a_model, b_model, x0, cost.horizon()) {
                Ok(i) => i,
                Err(e) => return status_of(&e),
            };
        unsafe { out.write(Box::into_raw(Box::new(ClcProblem { instance, cost }))) };
        ClcStatus::Ok
    })
}

/// Releases a handle created by [`clc_problem_new`]. Null is a no-op.
///
/// # Safety
/// `problem` must be null or a pointer previously returned by
/// [`clc_problem_new`] that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn clc_problem_free(problem: *mut ClcProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of stages of the problem behind the handle; 0 on null.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clc_problem_horizon(problem: *const ClcProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.cost.horizon())
}

/// Exact solution with the true dynamics. `gains_out` takes `horizon`
/// entries, `value_coeffs_out` takes `horizon + 1`; either may be null to
/// skip it.
///
/// # Safety
/// `problem` must be a live handle; non-null out buffers must have the
/// stated capacities.
#[no_mangle]
pub unsafe extern "C" fn clc_riccati_solve(
    problem: *const ClcProblem,
    gains_out: *mut f64,
    value_coeffs_out: *mut f64,
    optimal_cost_out: *mut f64,
) -> ClcStatus {
    let Some(p) = problem.as_ref() else {
        return ClcStatus::NullPointer;
    };
    guarded(|| {
        let sol = match riccati::solve(p.instance.a_true, p.instance.b_true, &p.cost, p.instance.x0)
        {
            Ok(s) => s,
            Err(e) => return status_of(&e),
        };
        unsafe {
            if !gains_out.is_null() {
                for (i, g) in sol.gains.iter().enumerate() {
                    gains_out.add(i).write(*g);
                }
            }
            if !value_coeffs_out.is_null() {
                for (i, v) in sol.value_coeffs.iter().enumerate() {
                    value_coeffs_out.add(i).write(*v);
                }
            }
            if !optimal_cost_out.is_null() {
                optimal_cost_out.write(sol.optimal_cost);
            }
        }
        ClcStatus::Ok
    })
}

/// The a-priori penalty weights `-Q_t + epsilon` (zero-effort class).
/// `beta_out` takes `horizon` entries.
///
/// # Safety
/// `problem` must be a live handle; `beta_out` must hold `horizon` doubles.
#[no_mangle]
pub unsafe extern "C" fn clc_no_effort_beta(
    problem: *const ClcProblem,
    epsilon: f64,
    beta_out: *mut f64,
) -> ClcStatus {
    let Some(p) = problem.as_ref() else {
        return ClcStatus::NullPointer;
    };
    if beta_out.is_null() {
        return ClcStatus::NullPointer;
    }
    guarded(|| match beta_learn::no_effort_beta(&p.cost, epsilon) {
        Ok(beta) => {
            for (i, b) in beta.values().iter().enumerate() {
                unsafe { beta_out.add(i).write(*b) };
            }
            ClcStatus::Ok
        }
        Err(e) => status_of(&e),
    })
}

/// The terminal penalty weight `-Q_T`.
///
/// # Safety
/// `problem` must be a live handle; `beta_out` must hold one double.
#[no_mangle]
pub unsafe extern "C" fn clc_terminal_beta(
    problem: *const ClcProblem,
    beta_out: *mut f64,
) -> ClcStatus {
    let Some(p) = problem.as_ref() else {
        return ClcStatus::NullPointer;
    };
    if beta_out.is_null() {
        return ClcStatus::NullPointer;
    }
    beta_out.write(beta_learn::terminal_beta(&p.cost));
    ClcStatus::Ok
}

unsafe fn run_execute(
    p: &ClcProblem,
    beta: *const f64,
    beta_len: usize,
    backend: DpBackend,
    controls_out: *mut f64,
    jr_out: *mut f64,
    episodes_out: *mut u64,
) -> ClcStatus {
    let beta = slice::from_raw_parts(beta, beta_len).to_vec();
    let beta = match BetaVector::new(beta) {
        Ok(b) => b,
        Err(e) => return status_of(&e),
    };
    let oracle = RealSystemOracle::from_instance(&p.instance);
    let outcome = match execute_clc(
        &beta,
        p.instance.a_model,
        p.instance.b_model,
        &p.cost,
        p.instance.x0,
        &backend,
        &ExecuteOptions::default(),
        &oracle,
    ) {
        Ok(o) => o,
        Err(e) => return status_of(&e),
    };
    if !controls_out.is_null() {
        for (i, u) in outcome.controls.iter().enumerate() {
            controls_out.add(i).write(*u);
        }
    }
    if !jr_out.is_null() {
        jr_out.write(outcome.jr);
    }
    if !episodes_out.is_null() {
        episodes_out.write(outcome.episodes_used);
    }
    ClcStatus::Ok
}

/// Full pipeline over the lookup-table backend: build the table for `beta`
/// on `grids`, resolve the coupled equations by direct search, execute the
/// resolved controls. `controls_out` takes `horizon` entries.
///
/// # Safety
/// `problem` must be a live handle, `beta` must hold `beta_len` doubles,
/// and non-null out buffers must have the stated capacities.
#[no_mangle]
pub unsafe extern "C" fn clc_execute_grid(
    problem: *const ClcProblem,
    beta: *const f64,
    beta_len: usize,
    grids: ClcGridSpec,
    controls_out: *mut f64,
    jr_out: *mut f64,
    episodes_out: *mut u64,
) -> ClcStatus {
    let Some(p) = problem.as_ref() else {
        return ClcStatus::NullPointer;
    };
    if beta.is_null() {
        return ClcStatus::NullPointer;
    }
    guarded(AssertUnwindSafe(|| {
        let grids = match GridSpec::new(
            grids.x_min,
            grids.x_max,
            grids.n_x,
            grids.u_min,
            grids.u_max,
            grids.n_u,
            grids.xhat_min,
            grids.xhat_max,
            grids.n_xhat,
        ) {
            Ok(g) => g,
            Err(e) => return status_of(&e),
        };
        unsafe {
            run_execute(
                p,
                beta,
                beta_len,
                DpBackend::Grid(grids),
                controls_out,
                jr_out,
                episodes_out,
            )
        }
    }))
}

/// Full pipeline over the exact closed-form backend.
///
/// # Safety
/// Same contracts as [`clc_execute_grid`].
#[no_mangle]
pub unsafe extern "C" fn clc_execute_closed_form(
    problem: *const ClcProblem,
    beta: *const f64,
    beta_len: usize,
    controls_out: *mut f64,
    jr_out: *mut f64,
    episodes_out: *mut u64,
) -> ClcStatus {
    let Some(p) = problem.as_ref() else {
        return ClcStatus::NullPointer;
    };
    if beta.is_null() {
        return ClcStatus::NullPointer;
    }
    guarded(AssertUnwindSafe(|| unsafe {
        run_execute(
            p,
            beta,
            beta_len,
            DpBackend::ClosedForm,
            controls_out,
            jr_out,
            episodes_out,
        )
    }))
}

/// Finite-difference descent on the realized cost over the closed-form
/// backend, starting from `beta_init` (`horizon` entries, terminal frozen).
/// Writes the best observed iterate.
///
/// # Safety
/// `problem` must be a live handle; `beta_init` and `beta_best_out` must
/// hold `horizon` doubles each.
#[no_mangle]
pub unsafe extern "C" fn clc_learn_beta_closed_form(
    problem: *const ClcProblem,
    beta_init: *const f64,
    beta_len: usize,
    step_size: f64,
    fd_delta: f64,
    max_iters: usize,
    beta_best_out: *mut f64,
    j_best_out: *mut f64,
    episodes_out: *mut u64,
) -> ClcStatus {
    let Some(p) = problem.as_ref() else {
        return ClcStatus::NullPointer;
    };
    if beta_init.is_null() {
        return ClcStatus::NullPointer;
    }
    let init = slice::from_raw_parts(beta_init, beta_len).to_vec();
    guarded(AssertUnwindSafe(|| {
        let init = match BetaVector::new(init.clone()) {
            Ok(b) => b,
            Err(e) => return status_of(&e),
        };
        let mut config = BetaLearnConfig::new(init, StepSizeRule::Constant(step_size));
        config.fd_delta = fd_delta;
        config.max_iters = max_iters;
        let oracle = RealSystemOracle::from_instance(&p.instance);
        let trace = beta_learn::learn_beta(&config, |beta: &BetaVector| {
            let outcome = execute_clc(
                beta,
                p.instance.a_model,
                p.instance.b_model,
                &p.cost,
                p.instance.x0,
                &DpBackend::ClosedForm,
                &ExecuteOptions::default(),
                &oracle,
            )?;
            Ok((outcome.jr, outcome.episodes_used))
        });
        let trace = match trace {
            Ok(t) => t,
            Err(e) => return status_of(&e),
        };
        let best = trace.best();
        unsafe {
            if !beta_best_out.is_null() {
                for (i, b) in best.beta.values().iter().enumerate() {
                    beta_best_out.add(i).write(*b);
                }
            }
            if !j_best_out.is_null() {
                j_best_out.write(best.j_value);
            }
            if !episodes_out.is_null() {
                episodes_out.write(oracle.episodes());
            }
        }
        ClcStatus::Ok
    }))
}
