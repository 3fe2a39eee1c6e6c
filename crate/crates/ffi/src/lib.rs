//! C interface to `arw-core`.
//!
//! Every function returns an [`ArwStatus`]. On failure the message is kept
//! per thread and read with [`arw_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use arw_core::bounds::{hwalk_exact_dist, to_f64, EXACT_HWALK_MAX};
use arw_core::engine::{Stabilizer, TopplingPolicy};
use arw_core::error::ArwError;
use arw_core::harness::{estimate_exit_density, Engine};
use arw_core::model::{SiteState, Volume};
use arw_core::sampling::{Purpose, SiteStacks, SleepRate};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BudgetExceeded = 3,
    Geometry = 4,
    Failed = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArwSiteKind {
    Empty = 0,
    Sleeping = 1,
    Active = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArwSiteState {
    pub kind: ArwSiteKind,
    /// Walks at the site: 0, 1 for a sleeper, n for n active walks.
    pub walks: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArwCounts {
    pub sleeping: u64,
    pub left_exits: u64,
    pub right_exits: u64,
    pub topplings: u64,
}

/// Stabilizer of `V_r = {-r..r}` with its own instruction stacks.
pub struct ArwStabilizer {
    inner: Stabilizer<SiteStacks>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: ArwStatus, msg: impl Into<String>) -> ArwStatus {
    set_error(msg.into());
    status
}

fn from_error(e: ArwError) -> ArwStatus {
    let status = match e {
        ArwError::BudgetExceeded { .. } => ArwStatus::BudgetExceeded,
        ArwError::Geometry(_) => ArwStatus::Geometry,
        ArwError::Domain(_) | ArwError::Config { .. } => ArwStatus::InvalidArgument,
        _ => ArwStatus::Failed,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> ArwStatus) -> ArwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(ArwStatus::Panic, msg)
        }
    }
}

fn rate(lambda: f64) -> Result<SleepRate, ArwStatus> {
    SleepRate::new(lambda).map_err(from_error)
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn arw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Empty stabilizer on `V_r` at sleep rate `lambda`. `budget` caps the
/// topplings of each `arw_stabilizer_stabilize` call.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn arw_stabilizer_new(
    lambda: f64,
    r: u64,
    seed: u64,
    budget: u64,
    out: *mut *mut ArwStabilizer,
) -> ArwStatus {
    guard(|| {
        if out.is_null() {
            return fail(ArwStatus::NullPointer, "out is null");
        }
        let rate = match rate(lambda) {
            Ok(r) => r,
            Err(s) => return s,
        };
        if r > (1 << 40) {
            return fail(ArwStatus::InvalidArgument, "r is too large");
        }
        if budget == 0 {
            return fail(ArwStatus::InvalidArgument, "budget must be positive");
        }
        let vol = Volume::centered(r);
        let stacks = SiteStacks::new(rate, seed, vol, Purpose::Stacks);
        let h = Box::new(ArwStabilizer {
            inner: Stabilizer::empty(vol, stacks, budget),
        });
        *out = Box::into_raw(h);
        ArwStatus::Ok
    })
}

/// # Safety
/// `h` must be NULL or a handle from `arw_stabilizer_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn arw_stabilizer_free(h: *mut ArwStabilizer) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Add one active walk at `site`. Sites outside the volume are rejected.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn arw_stabilizer_add_walk(h: *mut ArwStabilizer, site: i64) -> ArwStatus {
    guard(|| {
        let Some(h) = h.as_mut() else {
            return fail(ArwStatus::NullPointer, "handle is null");
        };
        if !h.inner.config().volume().contains(site) {
            return fail(ArwStatus::InvalidArgument, format!("site {site} is outside the volume"));
        }
        h.inner.add_walk(site);
        ArwStatus::Ok
    })
}

/// Topple until stable.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn arw_stabilizer_stabilize(h: *mut ArwStabilizer) -> ArwStatus {
    guard(|| {
        let Some(h) = h.as_mut() else {
            return fail(ArwStatus::NullPointer, "handle is null");
        };
        match h.inner.stabilize(TopplingPolicy::WalkChase) {
            Ok(()) => ArwStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `h` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn arw_stabilizer_site_state(
    h: *const ArwStabilizer,
    site: i64,
    out: *mut ArwSiteState,
) -> ArwStatus {
    guard(|| {
        let (Some(h), false) = (h.as_ref(), out.is_null()) else {
            return fail(ArwStatus::NullPointer, "handle or out is null");
        };
        let cfg = h.inner.config();
        if !cfg.volume().contains(site) {
            return fail(ArwStatus::InvalidArgument, format!("site {site} is outside the volume"));
        }
        let state = cfg.state(site);
        let kind = match state {
            SiteState::Empty => ArwSiteKind::Empty,
            SiteState::Sleeping => ArwSiteKind::Sleeping,
            SiteState::Active(_) => ArwSiteKind::Active,
        };
        *out = ArwSiteState {
            kind,
            walks: state.walks(),
        };
        ArwStatus::Ok
    })
}

/// # Safety
/// `h` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn arw_stabilizer_counts(h: *const ArwStabilizer, out: *mut ArwCounts) -> ArwStatus {
    guard(|| {
        let (Some(h), false) = (h.as_ref(), out.is_null()) else {
            return fail(ArwStatus::NullPointer, "handle or out is null");
        };
        let cfg = h.inner.config();
        *out = ArwCounts {
            sleeping: cfg.sleeping(),
            left_exits: cfg.left_exits,
            right_exits: cfg.right_exits,
            topplings: h.inner.topplings(),
        };
        ArwStatus::Ok
    })
}

/// Monte Carlo `E[M_r]/r` from Bernoulli(`zeta`) starts on `V_r`.
///
/// # Safety
/// `mean` and `stderr` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn arw_exit_density(
    lambda: f64,
    zeta: f64,
    r: u64,
    samples: u64,
    seed: u64,
    mean: *mut f64,
    stderr: *mut f64,
) -> ArwStatus {
    guard(|| {
        if mean.is_null() || stderr.is_null() {
            return fail(ArwStatus::NullPointer, "output pointer is null");
        }
        if !(0.0..=1.0).contains(&zeta) {
            return fail(ArwStatus::InvalidArgument, "zeta must lie in [0, 1]");
        }
        let rate = match rate(lambda) {
            Ok(r) => r,
            Err(s) => return s,
        };
        let budget = arw_core::engine::DEFAULT_BUDGET;
        match estimate_exit_density(rate, zeta, r, samples, seed, Engine::Excursion, budget) {
            Ok(d) => {
                *mean = d.mean;
                *stderr = d.stderr;
                ArwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Monte Carlo lower bound `1/E Z_N` on the critical density.
///
/// # Safety
/// `bound` and `stderr` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn arw_zeta_lower_bound(
    lambda: f64,
    samples: u64,
    seed: u64,
    bound: *mut f64,
    stderr: *mut f64,
) -> ArwStatus {
    guard(|| {
        if bound.is_null() || stderr.is_null() {
            return fail(ArwStatus::NullPointer, "output pointer is null");
        }
        let rate = match rate(lambda) {
            Ok(r) => r,
            Err(s) => return s,
        };
        match arw_core::bounds::estimate_zeta_lower(rate, samples, seed) {
            Ok(b) => {
                *bound = b.bound;
                *stderr = b.bound_stderr;
                ArwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Exact `E Z_n` for the walk conditioned to stay positive, `1 <= n <= 64`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn arw_hwalk_expected_max(n: u32, out: *mut f64) -> ArwStatus {
    guard(|| {
        if out.is_null() {
            return fail(ArwStatus::NullPointer, "out is null");
        }
        if n == 0 || n > EXACT_HWALK_MAX {
            return fail(ArwStatus::InvalidArgument, format!("n must lie in 1..={EXACT_HWALK_MAX}"));
        }
        match hwalk_exact_dist(n) {
            Ok(d) => {
                *out = to_f64(&d.mean_max());
                ArwStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_out_pointer_is_reported() {
        let s = unsafe { arw_hwalk_expected_max(4, ptr::null_mut()) };
        assert_eq!(s, ArwStatus::NullPointer);
        assert!(!arw_last_error_message().is_null());
    }

    #[test]
    fn error_mapping() {
        assert_eq!(from_error(ArwError::Geometry("x".into())), ArwStatus::Geometry);
        assert_eq!(from_error(ArwError::Domain("x".into())), ArwStatus::InvalidArgument);
    }
}
