//! C ABI over the `qinit` crate.
//!
//! Objects are opaque handles created by `*_new`/`*_load` and released with
//! the matching `*_free`. Every fallible call returns a [`QinitStatus`]; on
//! failure [`qinit_last_error`] describes the most recent error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qinit::envsim::{EnvState, Environment, Level, Strength};
use qinit::harness::ExperimentSpec;
use qinit::nn::{latency_report, LoopConstants, ObservationWindow, PolicyCheckpoint, PolicyNet};
use qinit::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QinitStatus {
    Ok = 0,
    /// Null pointer, bad enum value, undersized buffer or invalid UTF-8.
    InvalidArgument = 1,
    Config = 2,
    Numerical = 3,
    Shape = 4,
    Protocol = 5,
    Data = 6,
    Io = 7,
    Parse = 8,
    Panic = 9,
}

/// Simulated readout environment.
pub struct QinitEnv {
    env: Environment,
}

/// Trained policy network.
pub struct QinitPolicy {
    net: PolicyNet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> QinitStatus {
    match e {
        Error::Config { .. } => QinitStatus::Config,
        Error::Numerical(_) => QinitStatus::Numerical,
        Error::Shape(_) => QinitStatus::Shape,
        Error::Protocol(_) => QinitStatus::Protocol,
        Error::Data(_) => QinitStatus::Data,
        Error::Io { .. } => QinitStatus::Io,
        Error::Parse { .. } => QinitStatus::Parse,
    }
}

enum Fail {
    Arg(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QinitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QinitStatus::Ok,
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            QinitStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            QinitStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Arg(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg("string argument is not valid UTF-8"))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Arg("null input buffer"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Arg("null output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qinit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qinit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create an environment from an experiment TOML document (null selects the
/// strong-readout preset).
///
/// # Safety
/// `toml` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qinit_env_new(toml: *const c_char, out: *mut *mut QinitEnv) -> QinitStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Arg("null output handle"));
        }
        *out = ptr::null_mut();
        let spec = if toml.is_null() {
            ExperimentSpec::for_scenario(qinit::harness::Scenario::StrongQubit)
        } else {
            ExperimentSpec::from_toml_str(str_arg(toml, "null config")?, Path::new("<ffi>"))?
        };
        let env = Environment::new(spec.env)?;
        *out = Box::into_raw(Box::new(QinitEnv { env }));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from [`qinit_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qinit_env_free(env: *mut QinitEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Samples per readout trace, 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qinit_env_readout_len(env: *const QinitEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.config().readout_len)
}

/// Simulate one readout of `level` (0 = g, 1 = e, 2 = f). `len` must equal
/// the readout length. The level at the end of the readout is written to
/// `final_level` when it is non-null.
///
/// # Safety
/// `env` must be a live handle, `i_out`/`q_out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qinit_env_measure(
    env: *const QinitEnv,
    level: u32,
    weak: bool,
    seed: u64,
    i_out: *mut f64,
    q_out: *mut f64,
    len: usize,
    final_level: *mut u32,
) -> QinitStatus {
    guard(|| {
        let env = &env.as_ref().ok_or(Fail::Arg("null environment"))?.env;
        let level = Level::from_index(level as usize).ok_or(Fail::Arg("level must be 0, 1 or 2"))?;
        if level.index() >= usize::from(env.config().levels) {
            return Err(Fail::Arg("level not present in this environment"));
        }
        if len != env.config().readout_len {
            return Err(Fail::Arg("buffer length differs from the readout length"));
        }
        let (i, q) = (slice_out(i_out, len)?, slice_out(q_out, len)?);
        let strength = if weak { Strength::Weak } else { Strength::Strong };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (trace, state) = env.measure(EnvState::new(level), strength, &mut rng);
        i.copy_from_slice(&trace.i_samples);
        q.copy_from_slice(&trace.q_samples);
        if !final_level.is_null() {
            *final_level = state.level.index() as u32;
        }
        Ok(())
    })
}

/// Load a policy checkpoint (JSON) from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qinit_policy_load(path: *const c_char, out: *mut *mut QinitPolicy) -> QinitStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Arg("null output handle"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "null path")?;
        let net = PolicyCheckpoint::load(Path::new(path))?.to_net(None)?;
        *out = Box::into_raw(Box::new(QinitPolicy { net }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from [`qinit_policy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qinit_policy_free(policy: *mut QinitPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Number of policy outputs, 0 for a null handle.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qinit_policy_n_actions(policy: *const QinitPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.net.topology().n_actions)
}

/// Samples per readout the policy expects, 0 for a null handle.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qinit_policy_readout_len(policy: *const QinitPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.net.topology().readout_len)
}

/// Action probabilities for one readout at the start of an episode (memory
/// slots, if any, are empty).
///
/// # Safety
/// `i`/`q` must hold `len` doubles, `probs_out` must hold `n_probs` doubles.
#[no_mangle]
pub unsafe extern "C" fn qinit_policy_probs(
    policy: *const QinitPolicy,
    i: *const f64,
    q: *const f64,
    len: usize,
    probs_out: *mut f64,
    n_probs: usize,
) -> QinitStatus {
    guard(|| {
        let net = &policy.as_ref().ok_or(Fail::Arg("null policy"))?.net;
        if n_probs != net.topology().n_actions {
            return Err(Fail::Arg("probability buffer length differs from the action count"));
        }
        let (i, q) = (slice_arg(i, len)?, slice_arg(q, len)?);
        let out = slice_out(probs_out, n_probs)?;
        let w = ObservationWindow::build(net.topology(), &[], i, q)?;
        out.copy_from_slice(&net.forward(&w)?);
        Ok(())
    })
}

/// Network latency and total feedback latency in ns of the policy's
/// topology (null selects the default topology).
///
/// # Safety
/// `policy` must be null or a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn qinit_latency_ns(
    policy: *const QinitPolicy,
    nn_ns: *mut f64,
    loop_ns: *mut f64,
) -> QinitStatus {
    guard(|| {
        if nn_ns.is_null() || loop_ns.is_null() {
            return Err(Fail::Arg("null output"));
        }
        let topo = policy.as_ref().map(|p| p.net.topology().clone()).unwrap_or_default();
        let l = latency_report(&topo, &LoopConstants::default());
        *nn_ns = l.total_nn_ns;
        *loop_ns = l.total_loop_ns;
        Ok(())
    })
}
