//! C interface to the filament library.
//!
//! Every function returns a [`FilamentStatus`]. On failure the message is kept
//! per thread and can be copied out with [`filament_last_error`]. Objects are
//! opaque handles created by a `*_new` function and released by the matching
//! `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use filament::io::{export_dataset, run_pipeline, Dataset, Format, RunConfig, RunDir};
use filament::profile::{extract_frame_limits, integrate_profile, ProfileSolution, SelfSimilarParams};
use filament::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilamentStatus {
    Ok = 0,
    InvalidArgument = 1,
    Numerical = 2,
    NonFinite = 3,
    OutOfCoverage = 4,
    Io = 5,
    Json = 6,
    Run = 7,
    NullPointer = 8,
    Utf8 = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Self-similar profile with its extracted corner data.
pub struct FilamentProfile {
    sol: ProfileSolution,
    theta: f64,
}

/// Parsed run configuration.
pub struct FilamentConfig {
    cfg: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> FilamentStatus {
    match e {
        Error::InvalidArgument(_) => FilamentStatus::InvalidArgument,
        Error::Numerical(_) => FilamentStatus::Numerical,
        Error::NonFinite { .. } => FilamentStatus::NonFinite,
        Error::OutOfCoverage(_) => FilamentStatus::OutOfCoverage,
        Error::Io(_) => FilamentStatus::Io,
        Error::Json(_) => FilamentStatus::Json,
        Error::Run(_) => FilamentStatus::Run,
    }
}

struct Fail(FilamentStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FilamentStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FilamentStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            FilamentStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(FilamentStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(FilamentStatus::Utf8, format!("{what} is not UTF-8")))
}

/// Copies `s` plus a NUL into `buf`; `needed` receives the full size including the NUL.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Fail> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return Err(Fail(FilamentStatus::BufferTooSmall, format!("buffer needs {} bytes", s.len() + 1)));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Copies the calling thread's last error message into `buf`.
///
/// Returns the message length including the NUL; nothing is written when `len` is smaller.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn filament_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > e.len() {
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), e.len());
            *buf.add(e.len()) = 0;
        }
        e.len() + 1
    })
}

/// Integrates the profile for curvature `a` on `[-s_max, s_max]`.
///
/// Non-positive `s_max` or `step` select the defaults.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn filament_profile_new(
    a: f64,
    s_max: f64,
    step: f64,
    out: *mut *mut FilamentProfile,
) -> FilamentStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let params = SelfSimilarParams::new(a)?;
        let s_max = if s_max > 0.0 { s_max } else { params.default_s_max() };
        let step = if step > 0.0 { step } else { SelfSimilarParams::default_step(s_max) };
        let sol = integrate_profile(params, s_max, step)?;
        let theta = extract_frame_limits(&sol)?.theta;
        *out = Box::into_raw(Box::new(FilamentProfile { sol, theta }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`filament_profile_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn filament_profile_free(h: *mut FilamentProfile) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Writes the tangent and the position at `s` as two xyz triples.
///
/// # Safety
/// `h` must be a live profile handle; `tangent` and `position` must each hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn filament_profile_eval(
    h: *const FilamentProfile,
    s: f64,
    tangent: *mut f64,
    position: *mut f64,
) -> FilamentStatus {
    guard(|| {
        let p = h.as_ref().ok_or_else(|| null("profile"))?;
        if tangent.is_null() || position.is_null() {
            return Err(null("output"));
        }
        let st = p.sol.eval(s)?;
        for i in 0..3 {
            *tangent.add(i) = st.t[i];
            *position.add(i) = st.g[i];
        }
        Ok(())
    })
}

/// Corner angle between the two asymptotic tangents, in radians.
///
/// # Safety
/// `h` must be a live profile handle; `theta` must be writable.
#[no_mangle]
pub unsafe extern "C" fn filament_profile_corner_angle(h: *const FilamentProfile, theta: *mut f64) -> FilamentStatus {
    guard(|| {
        let p = h.as_ref().ok_or_else(|| null("profile"))?;
        *theta.as_mut().ok_or_else(|| null("theta"))? = p.theta;
        Ok(())
    })
}

/// Parses a JSON run configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn filament_config_from_json(json: *const c_char, out: *mut *mut FilamentConfig) -> FilamentStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let cfg = RunConfig::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(FilamentConfig { cfg }));
        Ok(())
    })
}

/// Default configuration.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn filament_config_default(out: *mut *mut FilamentConfig) -> FilamentStatus {
    guard(|| {
        *out.as_mut().ok_or_else(|| null("out"))? = Box::into_raw(Box::new(FilamentConfig { cfg: RunConfig::default() }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn filament_config_free(h: *mut FilamentConfig) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Serializes the configuration; see [`filament_last_error`] for the buffer convention.
///
/// # Safety
/// `h` must be a live config handle; `buf` null or valid for `len` bytes; `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn filament_config_to_json(
    h: *const FilamentConfig,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> FilamentStatus {
    guard(|| {
        let c = h.as_ref().ok_or_else(|| null("config"))?;
        copy_out(&c.cfg.to_json()?, buf, len, needed)
    })
}

/// Runs the configured stages into `run_dir`; `checks_passed` receives 1, 0, or -1 when no analysis ran.
///
/// # Safety
/// `h` must be a live config handle; `run_dir` a NUL-terminated string; `checks_passed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn filament_run_pipeline(
    h: *const FilamentConfig,
    run_dir: *const c_char,
    checks_passed: *mut i32,
) -> FilamentStatus {
    guard(|| {
        let c = h.as_ref().ok_or_else(|| null("config"))?;
        let dir = str_arg(run_dir, "run_dir")?;
        let m = run_pipeline(&c.cfg, Some(Path::new(dir)))?;
        if let Some(out) = checks_passed.as_mut() {
            *out = match m.checks_passed {
                Some(true) => 1,
                Some(false) => 0,
                None => -1,
            };
        }
        Ok(())
    })
}

/// Exports a dataset of the run in `run_dir` and writes the produced path into `buf`.
///
/// # Safety
/// String arguments must be NUL-terminated; `buf` null or valid for `len` bytes; `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn filament_export(
    run_dir: *const c_char,
    what: *const c_char,
    format: *const c_char,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> FilamentStatus {
    guard(|| {
        let dir = RunDir::open(str_arg(run_dir, "run_dir")?)?;
        let what: Dataset = str_arg(what, "what")?.parse()?;
        let format: Format = str_arg(format, "format")?.parse()?;
        let path = export_dataset(&dir, what, format)?;
        copy_out(&path.to_string_lossy(), buf, len, needed)
    })
}
