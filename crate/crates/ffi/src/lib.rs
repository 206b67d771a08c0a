//! C ABI for the rtcbf simulator and safety-filter QP.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns an
//! [`RtcbfStatus`] and leaves a message for [`rtcbf_last_error_message`] on
//! the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rtcbf::cli::{self, RunConfig};
use rtcbf::controller::Fallback;
use rtcbf::sim::{self, Metrics, Scenario, ScenarioError, Trace};
use rtcbf::solvers::{self, ConstraintRow, QpProblem, RowTag, SolveError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtcbfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Io = 5,
    Infeasible = 6,
    InvalidArgument = 7,
    Solver = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// A validated scenario.
pub struct RtcbfScenario {
    inner: Scenario,
}

/// A finished run together with its scenario and metrics.
pub struct RtcbfTrace {
    scenario: Scenario,
    trace: Trace,
    metrics: Metrics,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut s = msg.into();
    s.retain(|c| c != '\0');
    let c = CString::new(s).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: RtcbfStatus, msg: impl Into<String>) -> RtcbfStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> RtcbfStatus) -> RtcbfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(RtcbfStatus::Panic, "internal panic"),
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, RtcbfStatus> {
    if p.is_null() {
        return Err(fail(RtcbfStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(RtcbfStatus::InvalidUtf8, e.to_string()))
}

fn scenario_status(e: &ScenarioError) -> RtcbfStatus {
    match e {
        ScenarioError::Parse { .. } => RtcbfStatus::Parse,
        ScenarioError::Invalid { .. } => RtcbfStatus::Validation,
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(RtcbfStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rtcbf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null.
///
/// The pointer stays valid until the next rtcbf call on the same thread.
#[no_mangle]
pub extern "C" fn rtcbf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a scenario from a JSON string.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_scenario_from_json(json: *const c_char, out: *mut *mut RtcbfScenario) -> RtcbfStatus {
    guard(|| {
        non_null!(out);
        let text = match c_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match Scenario::from_json(text) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(RtcbfScenario { inner: s }));
                RtcbfStatus::Ok
            }
            Err(e) => fail(scenario_status(&e), e.to_string()),
        }
    })
}

/// Reads a scenario file.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_scenario_load(path: *const c_char, out: *mut *mut RtcbfScenario) -> RtcbfStatus {
    guard(|| {
        non_null!(out);
        let path = match c_str(path) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match cli::load_scenario(Path::new(path)) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(RtcbfScenario { inner: s }));
                RtcbfStatus::Ok
            }
            Err(e) => {
                let status = match e.exit_code() {
                    cli::exit::IO => RtcbfStatus::Io,
                    _ => RtcbfStatus::Validation,
                };
                fail(status, e.to_string())
            }
        }
    })
}

/// Number of agents in the scenario.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_scenario_agent_count(s: *const RtcbfScenario, out: *mut usize) -> RtcbfStatus {
    guard(|| {
        non_null!(s, out);
        *out = (*s).inner.agents.len();
        RtcbfStatus::Ok
    })
}

/// Freezes every α at its initial value when `fixed` is true.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_scenario_set_fixed_alpha(s: *mut RtcbfScenario, fixed: bool) -> RtcbfStatus {
    guard(|| {
        non_null!(s);
        (*s).inner.flags.fixed_alpha = fixed;
        RtcbfStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn rtcbf_scenario_free(s: *mut RtcbfScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Runs the scenario to completion.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_run(s: *const RtcbfScenario, out: *mut *mut RtcbfTrace) -> RtcbfStatus {
    guard(|| {
        non_null!(s, out);
        let scenario = (*s).inner.clone();
        match sim::run(&scenario) {
            Ok(trace) => {
                let metrics = sim::metrics(&trace, &scenario);
                *out = Box::into_raw(Box::new(RtcbfTrace {
                    scenario,
                    trace,
                    metrics,
                }));
                RtcbfStatus::Ok
            }
            Err(e) => fail(scenario_status(&e), e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn rtcbf_trace_step_count(t: *const RtcbfTrace, out: *mut usize) -> RtcbfStatus {
    guard(|| {
        non_null!(t, out);
        *out = (*t).trace.len();
        RtcbfStatus::Ok
    })
}

/// Pose `(x, y, heading)` of `agent` at record `step`, written to `out[0..3]`.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_trace_pose(t: *const RtcbfTrace, step: usize, agent: usize, out: *mut f64) -> RtcbfStatus {
    guard(|| {
        non_null!(t, out);
        let t = &*t;
        let Some(rec) = t.trace.steps.get(step).and_then(|st| st.agents.get(agent)) else {
            return fail(RtcbfStatus::OutOfRange, format!("no record for step {step}, agent {agent}"));
        };
        let o = std::slice::from_raw_parts_mut(out, 3);
        o[0] = rec.pose.position.x;
        o[1] = rec.pose.position.y;
        o[2] = rec.pose.heading;
        RtcbfStatus::Ok
    })
}

/// Applied control of `agent` at record `step`, written to `out[0..2]`.
/// `emergency` is set when the stop fallback was used.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_trace_control(
    t: *const RtcbfTrace,
    step: usize,
    agent: usize,
    out: *mut f64,
    emergency: *mut bool,
) -> RtcbfStatus {
    guard(|| {
        non_null!(t, out, emergency);
        let t = &*t;
        let Some(rec) = t.trace.steps.get(step).and_then(|st| st.agents.get(agent)) else {
            return fail(RtcbfStatus::OutOfRange, format!("no record for step {step}, agent {agent}"));
        };
        let o = std::slice::from_raw_parts_mut(out, 2);
        o[0] = rec.u_safe.x;
        o[1] = rec.u_safe.y;
        *emergency = rec.fallback == Fallback::Emergency;
        RtcbfStatus::Ok
    })
}

/// α of ordered pair `(i, j)` at record `step`.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_trace_alpha(t: *const RtcbfTrace, step: usize, i: usize, j: usize, out: *mut f64) -> RtcbfStatus {
    guard(|| {
        non_null!(t, out);
        let t = &*t;
        let found = t
            .trace
            .steps
            .get(step)
            .and_then(|st| st.pairs.iter().find(|p| p.i == i && p.j == j));
        match found {
            Some(p) => {
                *out = p.alpha;
                RtcbfStatus::Ok
            }
            None => fail(RtcbfStatus::OutOfRange, format!("no pair ({i}, {j}) at step {step}")),
        }
    })
}

/// Smallest barrier value over the run, across all intact pairs.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_trace_min_h(t: *const RtcbfTrace, out: *mut f64) -> RtcbfStatus {
    guard(|| {
        non_null!(t, out);
        *out = (*t).metrics.min_h;
        RtcbfStatus::Ok
    })
}

/// Number of infeasible safety QPs in the run.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_trace_infeasible_count(t: *const RtcbfTrace, out: *mut usize) -> RtcbfStatus {
    guard(|| {
        non_null!(t, out);
        *out = (*t).metrics.infeasible_events;
        RtcbfStatus::Ok
    })
}

/// Writes trace.csv, pairs.csv, summary.json and the SVG plots into `dir`.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_trace_write(t: *const RtcbfTrace, dir: *const c_char, svg: bool) -> RtcbfStatus {
    guard(|| {
        non_null!(t);
        let dir = match c_str(dir) {
            Ok(d) => Path::new(d),
            Err(s) => return s,
        };
        let t = &*t;
        let mut cfg = RunConfig::new("", dir);
        cfg.emit_svg = svg;
        match cli::write_outputs(dir, &t.scenario, &t.trace, &t.metrics, &cfg) {
            Ok(()) => RtcbfStatus::Ok,
            Err(e) => fail(RtcbfStatus::Io, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn rtcbf_trace_free(t: *mut RtcbfTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Solves `min ||u - u_ref||^2` s.t. `A u >= b`, `lo <= u <= hi`.
///
/// `a` is row-major with `n_rows * dim` entries; `a` and `b` may be null
/// when `n_rows` is 0. The minimizer is written to `u_out[0..dim]`.
#[no_mangle]
pub unsafe extern "C" fn rtcbf_solve_qp(
    dim: usize,
    u_ref: *const f64,
    n_rows: usize,
    a: *const f64,
    b: *const f64,
    lo: *const f64,
    hi: *const f64,
    u_out: *mut f64,
) -> RtcbfStatus {
    guard(|| {
        non_null!(u_ref, lo, hi, u_out);
        if dim == 0 {
            return fail(RtcbfStatus::InvalidArgument, "dim must be positive");
        }
        if n_rows > 0 {
            non_null!(a, b);
        }
        let a = if n_rows > 0 { std::slice::from_raw_parts(a, n_rows * dim) } else { &[] };
        let b = if n_rows > 0 { std::slice::from_raw_parts(b, n_rows) } else { &[] };
        let rows = (0..n_rows)
            .map(|k| ConstraintRow::new(a[k * dim..(k + 1) * dim].to_vec(), b[k], RowTag::User(k)))
            .collect();
        let p = QpProblem::new(
            std::slice::from_raw_parts(u_ref, dim).to_vec(),
            rows,
            std::slice::from_raw_parts(lo, dim).to_vec(),
            std::slice::from_raw_parts(hi, dim).to_vec(),
        );
        match solvers::solve_qp(&p) {
            Ok(sol) => {
                std::slice::from_raw_parts_mut(u_out, dim).copy_from_slice(&sol.u);
                RtcbfStatus::Ok
            }
            Err(SolveError::Infeasible) => fail(RtcbfStatus::Infeasible, "feasible set is empty"),
            Err(e @ (SolveError::EmptyBox | SolveError::DimensionMismatch(_))) => {
                fail(RtcbfStatus::InvalidArgument, e.to_string())
            }
            Err(e) => fail(RtcbfStatus::Solver, e.to_string()),
        }
    })
}
