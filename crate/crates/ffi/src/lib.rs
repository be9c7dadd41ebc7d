//! C ABI for the ecsim simulator.
//!
//! Models and simulators are opaque heap handles released with their
//! `*_free` function. Every fallible call returns an [`EcsimStatus`]; the
//! message of the most recent failure on the calling thread is available
//! from [`ecsim_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use ecsim::integrate::RunOptions;
use ecsim::model::parse_scenario;
use ecsim::scenarios::builtin_scenario;
use ecsim::{assemble_model, Error, Model, Scheme, Simulator, SystemState};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Configuration = 4,
    Parse = 5,
    SolverStall = 6,
    StepUnderflow = 7,
    NonFinite = 8,
    Budget = 9,
    Internal = 10,
    Io = 11,
    Panic = 12,
}

/// Time-integration schemes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcsimScheme {
    /// The scheme configured in the scenario.
    Default = 0,
    Cenic1 = 1,
    Cenic2 = 2,
    Ie = 3,
    Rk3 = 4,
    Fixed = 5,
}

/// Work counters of a simulator.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EcsimStats {
    pub time: f64,
    pub steps_attempted: usize,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub newton_iterations: usize,
    pub factorizations: usize,
    pub linesearch_iterations: usize,
    pub geometry_queries: usize,
    pub wall_time: f64,
}

/// Opaque assembled model.
pub struct EcsimModel {
    inner: Arc<Model>,
}

/// Opaque simulator bound to a model.
pub struct EcsimSimulator {
    inner: Simulator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> EcsimStatus {
    match e {
        Error::Validation { .. } => EcsimStatus::Validation,
        Error::Configuration(_) => EcsimStatus::Configuration,
        Error::Parse(_) => EcsimStatus::Parse,
        Error::SolverStall { .. } => EcsimStatus::SolverStall,
        Error::StepUnderflow { .. } => EcsimStatus::StepUnderflow,
        Error::NonFinite { .. } => EcsimStatus::NonFinite,
        Error::Budget { .. } => EcsimStatus::Budget,
        Error::Internal(_) => EcsimStatus::Internal,
        Error::Io(_) => EcsimStatus::Io,
    }
}

fn fail(status: EcsimStatus, message: impl Into<String>) -> EcsimStatus {
    set_last_error(message);
    status
}

/// Runs `f`, mapping library errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), EcsimStatus>) -> EcsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EcsimStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(EcsimStatus::Panic, "panic inside ecsim"),
    }
}

fn lift<T>(r: ecsim::Result<T>) -> Result<T, EcsimStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, EcsimStatus> {
    if s.is_null() {
        return Err(fail(EcsimStatus::NullPointer, format!("`{what}` is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(EcsimStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), EcsimStatus> {
    if out.is_null() {
        return Err(fail(EcsimStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ecsim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses and validates a scenario given as JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ecsim_model_from_json(json: *const c_char, out: *mut *mut EcsimModel) -> EcsimStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        let model = lift(parse_scenario(text).and_then(|s| assemble_model(&s)))?;
        write_out(out, EcsimModel { inner: Arc::new(model) })
    })
}

/// Assembles a builtin scenario. `seed` replaces the default sampling seed
/// when `use_seed` is true.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ecsim_model_from_builtin(
    name: *const c_char,
    use_seed: bool,
    seed: u64,
    out: *mut *mut EcsimModel,
) -> EcsimStatus {
    guard(|| {
        let name = read_str(name, "name")?;
        let model = lift(builtin_scenario(name, use_seed.then_some(seed)).and_then(|s| assemble_model(&s)))?;
        write_out(out, EcsimModel { inner: Arc::new(model) })
    })
}

/// Number of position coordinates, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecsim_model_nq(model: *const EcsimModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.nq)
}

/// Number of velocity coordinates, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecsim_model_nv(model: *const EcsimModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.nv)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ecsim_model_free(model: *mut EcsimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Creates a simulator at the model's initial state. `accuracy` ≤ 0 keeps
/// the scenario's accuracy. The simulator keeps its own reference to the
/// model, which may be freed independently.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ecsim_simulator_new(
    model: *const EcsimModel,
    scheme: EcsimScheme,
    accuracy: f64,
    out: *mut *mut EcsimSimulator,
) -> EcsimStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| fail(EcsimStatus::NullPointer, "`model` is null"))?;
        let mut cfg = model.inner.integrator.clone();
        cfg.scheme = match scheme {
            EcsimScheme::Default => cfg.scheme,
            EcsimScheme::Cenic1 => Scheme::Cenic1,
            EcsimScheme::Cenic2 => Scheme::Cenic2,
            EcsimScheme::Ie => Scheme::Ie,
            EcsimScheme::Rk3 => Scheme::Rk3,
            EcsimScheme::Fixed => Scheme::Fixed,
        };
        if accuracy.is_nan() {
            return Err(fail(EcsimStatus::InvalidArgument, "`accuracy` is NaN"));
        }
        if accuracy > 0.0 {
            cfg.accuracy = accuracy;
        }
        let sim = lift(Simulator::new(model.inner.clone(), cfg))?;
        write_out(out, EcsimSimulator { inner: sim })
    })
}

/// Advances the simulator to time `t_final`.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecsim_simulator_advance_to(sim: *mut EcsimSimulator, t_final: f64) -> EcsimStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| fail(EcsimStatus::NullPointer, "`sim` is null"))?;
        if !t_final.is_finite() {
            return Err(fail(EcsimStatus::InvalidArgument, "`t_final` is not finite"));
        }
        lift(sim.inner.advance_to(t_final, &RunOptions::default(), |_, _, _| {}))
    })
}

/// Current simulation time, or NaN for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecsim_simulator_time(sim: *const EcsimSimulator) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.inner.state().t)
}

/// Copies the state into `q` (length `nq`) and `v` (length `nv`).
///
/// # Safety
/// `sim` must be a live handle, `q` and `v` writable for `nq` and `nv`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ecsim_simulator_get_state(
    sim: *const EcsimSimulator,
    q: *mut f64,
    nq: usize,
    v: *mut f64,
    nv: usize,
) -> EcsimStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| fail(EcsimStatus::NullPointer, "`sim` is null"))?;
        if q.is_null() || v.is_null() {
            return Err(fail(EcsimStatus::NullPointer, "state buffer is null"));
        }
        let s = sim.inner.state();
        if nq != s.q.len() || nv != s.v.len() {
            return Err(fail(
                EcsimStatus::InvalidArgument,
                format!("buffer sizes ({nq}, {nv}) differ from (nq, nv) = ({}, {})", s.q.len(), s.v.len()),
            ));
        }
        ptr::copy_nonoverlapping(s.q.as_ptr(), q, nq);
        ptr::copy_nonoverlapping(s.v.as_ptr(), v, nv);
        Ok(())
    })
}

/// Replaces the state at the current time.
///
/// # Safety
/// `sim` must be a live handle, `q` and `v` readable for `nq` and `nv`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ecsim_simulator_set_state(
    sim: *mut EcsimSimulator,
    q: *const f64,
    nq: usize,
    v: *const f64,
    nv: usize,
) -> EcsimStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| fail(EcsimStatus::NullPointer, "`sim` is null"))?;
        if q.is_null() || v.is_null() {
            return Err(fail(EcsimStatus::NullPointer, "state buffer is null"));
        }
        let q = std::slice::from_raw_parts(q, nq);
        let v = std::slice::from_raw_parts(v, nv);
        if q.iter().chain(v).any(|x| !x.is_finite()) {
            return Err(fail(EcsimStatus::InvalidArgument, "state contains non-finite values"));
        }
        let t = sim.inner.state().t;
        let state = SystemState::new(q.to_vec().into(), v.to_vec().into(), t);
        lift(sim.inner.set_state(state, None))
    })
}

/// Fills `out` with the work counters so far.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ecsim_simulator_stats(sim: *const EcsimSimulator, out: *mut EcsimStats) -> EcsimStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| fail(EcsimStatus::NullPointer, "`sim` is null"))?;
        let out = out.as_mut().ok_or_else(|| fail(EcsimStatus::NullPointer, "`out` is null"))?;
        let s = sim.inner.stats();
        *out = EcsimStats {
            time: s.final_time,
            steps_attempted: s.steps_attempted,
            steps_accepted: s.steps_accepted,
            steps_rejected: s.steps_rejected,
            newton_iterations: s.newton_iterations,
            factorizations: s.factorizations,
            linesearch_iterations: s.linesearch_iterations,
            geometry_queries: s.geometry_queries,
            wall_time: s.wall_time,
        };
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ecsim_simulator_free(sim: *mut EcsimSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
