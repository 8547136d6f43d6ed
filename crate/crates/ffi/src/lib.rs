//! C ABI over the rbeam simulator.
//!
//! Objects are opaque heap handles created by `rbeam_*_new`/`load`/`parse`
//! style functions and released with the matching `_free`. Fallible calls
//! return an [`RbeamStatus`]; on failure a message describing the error is
//! available from [`rbeam_last_error_message`] on the same thread.
//!
//! Handles are not synchronized. A handle may move between threads but must
//! not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rbeam::analysis;
use rbeam::laser;
use rbeam::ode::{self, TimeSeries};
use rbeam::params::{self, Bundle};
use rbeam::Error;

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbeamStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad argument: non-UTF-8 text, unknown column, short buffer.
    InvalidArgument = 2,
    /// Config could not be read, parsed or validated.
    Config = 3,
    /// Integration or analysis failed.
    Simulation = 4,
    Io = 5,
    /// A panic was caught at the boundary; treat as a bug.
    Panic = 6,
}

/// Column of a sampled trajectory.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbeamColumn {
    /// s
    Time = 0,
    /// Photon density, m^-3.
    V1 = 1,
    /// Upper-level density, m^-3.
    V2 = 2,
    /// Output power, W.
    OutputPower = 3,
    /// Pump power, W.
    Drive = 4,
}

/// Parameter set (opaque).
pub struct RbeamConfig {
    bundle: Bundle,
}

/// Sampled trajectory (opaque).
pub struct RbeamTimeSeries {
    ts: TimeSeries,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    // Interior NULs cannot cross the boundary.
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> RbeamStatus {
    match e {
        Error::Io { .. } => RbeamStatus::Io,
        Error::InvalidArgument(_) | Error::LengthMismatch { .. } => RbeamStatus::InvalidArgument,
        _ if e.exit_code() == 2 => RbeamStatus::Config,
        _ => RbeamStatus::Simulation,
    }
}

struct Fail(RbeamStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Run `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RbeamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RbeamStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            RbeamStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(RbeamStatus::NullPointer, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(RbeamStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn rbeam_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rbeam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New config holding the built-in defaults. Never null.
#[no_mangle]
pub extern "C" fn rbeam_config_default() -> *mut RbeamConfig {
    Box::into_raw(Box::new(RbeamConfig {
        bundle: Bundle::default(),
    }))
}

/// Read a config file. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbeam_config_load(path: *const c_char, out: *mut *mut RbeamConfig) -> RbeamStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { str_arg(path, "path") }?;
        let bundle = params::load_config(path)?;
        unsafe { put(out, RbeamConfig { bundle }) };
        Ok(())
    })
}

/// Parse config text. On success `*out` receives a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbeam_config_parse(text: *const c_char, out: *mut *mut RbeamConfig) -> RbeamStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = unsafe { str_arg(text, "text") }?;
        let bundle = params::parse_config(text, "<text>")?;
        unsafe { put(out, RbeamConfig { bundle }) };
        Ok(())
    })
}

/// Override the random seed.
///
/// # Safety
/// `cfg` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rbeam_config_set_seed(cfg: *mut RbeamConfig, seed: u64) -> RbeamStatus {
    guard(|| {
        let cfg = unsafe { cfg.as_mut() }.ok_or_else(|| null("cfg"))?;
        cfg.bundle.sim.rng_seed = seed;
        Ok(())
    })
}

/// Pump power at lasing threshold, W.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbeam_threshold_power(cfg: *const RbeamConfig, out: *mut f64) -> RbeamStatus {
    guard(|| {
        let cfg = unsafe { ref_arg(cfg, "cfg") }?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = laser::threshold_power(&cfg.bundle.laser);
        Ok(())
    })
}

/// Settled output power for a constant pump, W.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbeam_steady_output_power(
    cfg: *const RbeamConfig,
    pump_power: f64,
    out: *mut f64,
) -> RbeamStatus {
    guard(|| {
        let cfg = unsafe { ref_arg(cfg, "cfg") }?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        if pump_power.is_nan() || pump_power < 0.0 {
            return Err(Fail(
                RbeamStatus::InvalidArgument,
                format!("pump_power {pump_power} must be >= 0"),
            ));
        }
        let b = &cfg.bundle;
        let x = analysis::settle_state(&b.laser, pump_power, &b.sim)?;
        *out = laser::output_power(x.v1, &b.laser);
        Ok(())
    })
}

/// Integrate the configured drive from the configured initial state.
/// On success `*out` receives a new handle.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbeam_transient(cfg: *const RbeamConfig, out: *mut *mut RbeamTimeSeries) -> RbeamStatus {
    guard(|| {
        let cfg = unsafe { ref_arg(cfg, "cfg") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let b = &cfg.bundle;
        b.validate()?;
        let ts = ode::integrate(&b.drive, &b.laser, &b.sim)?;
        unsafe { put(out, RbeamTimeSeries { ts }) };
        Ok(())
    })
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ts` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rbeam_timeseries_len(ts: *const RbeamTimeSeries) -> usize {
    unsafe { ts.as_ref() }.map_or(0, |t| t.ts.len())
}

/// Copy one column into `dst`, which must hold at least
/// `rbeam_timeseries_len` values.
///
/// # Safety
/// `ts` must be a live handle and `dst` valid for `dst_len` writes.
#[no_mangle]
pub unsafe extern "C" fn rbeam_timeseries_copy(
    ts: *const RbeamTimeSeries,
    column: RbeamColumn,
    dst: *mut f64,
    dst_len: usize,
) -> RbeamStatus {
    guard(|| {
        let ts = &unsafe { ref_arg(ts, "ts") }?.ts;
        if dst.is_null() {
            return Err(null("dst"));
        }
        let src = match column {
            RbeamColumn::Time => &ts.t,
            RbeamColumn::V1 => &ts.v1,
            RbeamColumn::V2 => &ts.v2,
            RbeamColumn::OutputPower => &ts.p_out,
            RbeamColumn::Drive => &ts.drive,
        };
        if dst_len < src.len() {
            return Err(Fail(
                RbeamStatus::InvalidArgument,
                format!("buffer holds {dst_len} values, need {}", src.len()),
            ));
        }
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
        Ok(())
    })
}

/// Accumulated relative error estimate for v1 and v2, written to
/// `out[0]` and `out[1]`.
///
/// # Safety
/// `ts` must be a live handle and `out` valid for two writes.
#[no_mangle]
pub unsafe extern "C" fn rbeam_timeseries_error_estimate(ts: *const RbeamTimeSeries, out: *mut f64) -> RbeamStatus {
    guard(|| {
        let ts = &unsafe { ref_arg(ts, "ts") }?.ts;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { ptr::copy_nonoverlapping(ts.error_estimate.as_ptr(), out, 2) };
        Ok(())
    })
}

/// Release a config. Null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rbeam_config_free(cfg: *mut RbeamConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Release a trajectory. Null is ignored.
///
/// # Safety
/// `ts` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rbeam_timeseries_free(ts: *mut RbeamTimeSeries) {
    if !ts.is_null() {
        drop(unsafe { Box::from_raw(ts) });
    }
}
