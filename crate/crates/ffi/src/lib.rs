//! C ABI over the laboratory: run configurations, check runs and a few
//! SU(N) kernels behind opaque handles.
//!
//! Every fallible call returns an [`MgStatus`]. On failure the message is
//! kept per thread and read with [`mg_last_error`]. Handles are released
//! with their `*_free` function; strings returned by the library with
//! [`mg_string_free`].
//!
//! Pointer contract for every function: handle arguments are null or were
//! returned by this library and not yet freed; out-pointers are null or
//! writable; strings are NUL-terminated. Null is reported, not dereferenced.
//! Handles may not be shared across threads without external locking.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mgloop::liealg::{exp_map, orthonormal_basis, AlgebraElement, GroupElement};
use mgloop::pcm::dof_audit;
use mgloop::report::{overall, write_aggregate};
use mgloop::{CheckReport, Command, LabError, RunConfig, Status};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Numeric = 4,
    OutOfRange = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MgCommand {
    Kinematics = 0,
    Action = 1,
    Eom = 2,
    Jacobians = 3,
    Pcm = 4,
    All = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MgCheckStatus {
    Pass = 0,
    Fail = 1,
    Inconclusive = 2,
}

/// Parsed and validated run configuration.
pub struct MgConfig(RunConfig);

/// Reports of one run.
pub struct MgReports {
    command: Command,
    seed: u64,
    reports: Vec<CheckReport>,
}

/// SU(N) matrix.
pub struct MgGroup(GroupElement);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn lab_status(e: &LabError) -> MgStatus {
    match e {
        LabError::Config { .. } | LabError::ChartMismatch(_) => MgStatus::Config,
        LabError::OutOfRange { .. } | LabError::DimensionMismatch { .. } => MgStatus::OutOfRange,
        _ => MgStatus::Numeric,
    }
}

/// Runs `f`, recording errors and turning panics into [`MgStatus::Panic`].
fn guard<F: FnOnce() -> Result<(), (MgStatus, String)>>(f: F) -> MgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside the library");
            MgStatus::Panic
        }
    }
}

fn lab(e: LabError) -> (MgStatus, String) {
    (lab_status(&e), e.to_string())
}

fn null(what: &str) -> (MgStatus, String) {
    (MgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MgStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MgStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// The committed default configuration.
#[no_mangle]
pub unsafe extern "C" fn mg_config_default(out: *mut *mut MgConfig) -> MgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out_ptr(out, MgConfig(RunConfig::default_config()));
        Ok(())
    })
}

/// Parses and validates a TOML configuration.
#[no_mangle]
pub unsafe extern "C" fn mg_config_from_toml(toml: *const c_char, out: *mut *mut MgConfig) -> MgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::from_toml(text(toml, "toml")?).map_err(lab)?;
        out_ptr(out, MgConfig(cfg));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_config_set_seed(cfg: *mut MgConfig, seed: u64) -> MgStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        cfg.0.seed = seed;
        Ok(())
    })
}

/// Applies a `NAME=VALUE` threshold override.
#[no_mangle]
pub unsafe extern "C" fn mg_config_set_tolerance(cfg: *mut MgConfig, assignment: *const c_char) -> MgStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let a = text(assignment, "assignment")?;
        cfg.0.set_tolerance(a).map_err(lab)
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_config_free(cfg: *mut MgConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs a subcommand. Check failures are not errors: inspect the reports.
#[no_mangle]
pub unsafe extern "C" fn mg_run(cfg: *const MgConfig, command: MgCommand, out: *mut *mut MgReports) -> MgStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let command = match command {
            MgCommand::Kinematics => Command::Kinematics,
            MgCommand::Action => Command::Action,
            MgCommand::Eom => Command::Eom,
            MgCommand::Jacobians => Command::Jacobians,
            MgCommand::Pcm => Command::Pcm,
            MgCommand::All => Command::All,
        };
        let reports = mgloop::suite::run(command, &cfg.0).map_err(lab)?;
        out_ptr(
            out,
            MgReports {
                command,
                seed: cfg.0.seed,
                reports,
            },
        );
        Ok(())
    })
}

fn check_status(s: Status) -> MgCheckStatus {
    match s {
        Status::Pass => MgCheckStatus::Pass,
        Status::Fail => MgCheckStatus::Fail,
        Status::Inconclusive => MgCheckStatus::Inconclusive,
    }
}

/// Number of reports, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mg_reports_len(set: *const MgReports) -> usize {
    set.as_ref().map_or(0, |s| s.reports.len())
}

#[no_mangle]
pub unsafe extern "C" fn mg_reports_overall(set: *const MgReports, out: *mut MgCheckStatus) -> MgStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = check_status(overall(&set.reports));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_reports_status(set: *const MgReports, index: usize, out: *mut MgCheckStatus) -> MgStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = set
            .reports
            .get(index)
            .ok_or_else(|| (MgStatus::OutOfRange, format!("report {index} of {}", set.reports.len())))?;
        *out = check_status(r.status);
        Ok(())
    })
}

/// Aggregate JSON document; free with [`mg_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mg_reports_json(set: *const MgReports, out: *mut *mut c_char) -> MgStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut buf = Vec::new();
        write_aggregate(&mut buf, set.command.name(), set.seed, &set.reports)
            .map_err(|e| (MgStatus::Numeric, e.to_string()))?;
        *out = CString::new(buf)
            .map_err(|_| (MgStatus::InvalidUtf8, "report contains NUL".to_string()))?
            .into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_reports_free(set: *mut MgReports) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

#[no_mangle]
pub unsafe extern "C" fn mg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `exp(Σ c_a T_a)` in SU(n) for coefficients in the orthonormal basis of
/// su(n); `len` must be `n² - 1`.
#[no_mangle]
pub unsafe extern "C" fn mg_group_exp(n: usize, coeffs: *const f64, len: usize, out: *mut *mut MgGroup) -> MgStatus {
    guard(|| {
        if coeffs.is_null() {
            return Err(null("coeffs"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if n < 2 || len != n * n - 1 {
            return Err((MgStatus::OutOfRange, format!("need n >= 2 and len = n² - 1, got n = {n}, len = {len}")));
        }
        let c = std::slice::from_raw_parts(coeffs, len);
        let x = AlgebraElement::from_coeffs(&orthonormal_basis(n), c);
        out_ptr(out, MgGroup(exp_map(&x).map_err(lab)?));
        Ok(())
    })
}

/// `a · b` as a new handle.
#[no_mangle]
pub unsafe extern "C" fn mg_group_mul(a: *const MgGroup, b: *const MgGroup, out: *mut *mut MgGroup) -> MgStatus {
    guard(|| {
        let (a, b) = (a.as_ref().ok_or_else(|| null("a"))?, b.as_ref().ok_or_else(|| null("b"))?);
        if out.is_null() {
            return Err(null("out"));
        }
        if a.0.n() != b.0.n() {
            return Err((MgStatus::OutOfRange, format!("SU({}) times SU({})", a.0.n(), b.0.n())));
        }
        out_ptr(out, MgGroup(a.0.mul(&b.0)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_group_trace(g: *const MgGroup, re: *mut f64, im: *mut f64) -> MgStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("g"))?;
        let t = g.0.trace();
        re.as_mut().ok_or_else(|| null("re"))?.clone_from(&t.re);
        im.as_mut().ok_or_else(|| null("im"))?.clone_from(&t.im);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_group_free(g: *mut MgGroup) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Link, constraint and field counts of the open `size × size` lattice.
#[no_mangle]
pub unsafe extern "C" fn mg_pcm_dof(size: usize, n: usize, links: *mut usize, constraints: *mut usize, fields: *mut usize) -> MgStatus {
    guard(|| {
        if size < 2 || n < 2 {
            return Err((MgStatus::OutOfRange, format!("need size >= 2 and n >= 2, got {size}, {n}")));
        }
        let a = dof_audit(size, n);
        *links.as_mut().ok_or_else(|| null("links"))? = a.link_dof;
        *constraints.as_mut().ok_or_else(|| null("constraints"))? = a.constraint_dof;
        *fields.as_mut().ok_or_else(|| null("fields"))? = a.field_dof;
        Ok(())
    })
}
