//! C ABI over the curvature-tuned optimizer and the drifting landscape.
//!
//! Every fallible call returns a [`CtagdStatus`]; on failure the message is
//! available from [`ctagd_last_error`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ctagd::backbones::{Backbone, BackboneKind};
use ctagd::bench::RunConfig;
use ctagd::ctagd::CtagdState;
use ctagd::landscape::{GenConfig, LandscapeSequence};
use ctagd::tensorcore::Layout;
use ctagd::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtagdStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Usage = 3,
    NonFinite = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtagdBackbone {
    Sgd = 0,
    MomentumSgd = 1,
    Adam = 2,
    Yogi = 3,
}

impl From<CtagdBackbone> for BackboneKind {
    fn from(b: CtagdBackbone) -> Self {
        match b {
            CtagdBackbone::Sgd => BackboneKind::Sgd,
            CtagdBackbone::MomentumSgd => BackboneKind::MomentumSgd,
            CtagdBackbone::Adam => BackboneKind::Adam,
            CtagdBackbone::Yogi => BackboneKind::Yogi,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CtagdMetrics {
    pub train: f64,
    pub test: f64,
    pub gap: f64,
}

/// Opaque landscape sequence.
pub struct CtagdLandscape {
    seq: LandscapeSequence,
}

/// Opaque optimizer: a first-order backbone plus the curvature-tuned state.
pub struct CtagdOptimizer {
    backbone: Backbone,
    state: CtagdState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: CtagdStatus, msg: impl Into<String>) -> CtagdStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> CtagdStatus {
    let status = match &e {
        Error::Config(_) | Error::Json(_) => CtagdStatus::Config,
        Error::Usage(_) => CtagdStatus::Usage,
        Error::NonFinite(_) => CtagdStatus::NonFinite,
        Error::Io(_) | Error::Csv(_) => CtagdStatus::Io,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), CtagdStatus>) -> CtagdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtagdStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(CtagdStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: ctagd::Result<T>) -> Result<T, CtagdStatus> {
    r.map_err(from_error)
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, CtagdStatus> {
    p.as_ref().ok_or_else(|| fail(CtagdStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, CtagdStatus> {
    p.as_mut().ok_or_else(|| fail(CtagdStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], CtagdStatus> {
    if p.is_null() {
        return Err(fail(CtagdStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], CtagdStatus> {
    if p.is_null() {
        return Err(fail(CtagdStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// A null pointer selects the defaults.
unsafe fn config(json: *const c_char) -> Result<RunConfig, CtagdStatus> {
    if json.is_null() {
        return Ok(RunConfig::default());
    }
    let text = CStr::from_ptr(json)
        .to_str()
        .map_err(|_| fail(CtagdStatus::Config, "config is not valid UTF-8"))?;
    lift(RunConfig::from_json(text))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ctagd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds the landscape sequence for `seed`. `config_json` is a (possibly
/// partial) bench config; only its `testbed.landscape` and `stationary`
/// fields are read.
///
/// # Safety
/// `config_json` must be null or a nul-terminated string; `out` must be a
/// valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn ctagd_landscape_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut CtagdLandscape,
) -> CtagdStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let cfg = config(config_json)?;
        let seq = lift(LandscapeSequence::build(&cfg.landscape(), seed))?;
        *out = Box::into_raw(Box::new(CtagdLandscape { seq }));
        Ok(())
    })
}

/// Builds a landscape sequence with the default generator settings.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn ctagd_landscape_default(seed: u64, out: *mut *mut CtagdLandscape) -> CtagdStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let seq = lift(LandscapeSequence::build(&GenConfig::default(), seed))?;
        *out = Box::into_raw(Box::new(CtagdLandscape { seq }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from a `ctagd_landscape_*` constructor and
/// not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ctagd_landscape_free(handle: *mut CtagdLandscape) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Value and gradient of the current train snapshot at `theta[2]`, then
/// advances to the next snapshot.
///
/// # Safety
/// `handle` must be live; `theta` and `grad_out` must point to two doubles and
/// `value_out` to one.
#[no_mangle]
pub unsafe extern "C" fn ctagd_landscape_observe(
    handle: *mut CtagdLandscape,
    theta: *const f64,
    value_out: *mut f64,
    grad_out: *mut f64,
) -> CtagdStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        let th = slice(theta, 2, "theta")?;
        let value_out = deref_mut(value_out, "value_out")?;
        let grad_out = slice_mut(grad_out, 2, "grad_out")?;
        let (v, g) = h.seq.observe([th[0], th[1]]);
        *value_out = v;
        grad_out.copy_from_slice(&g);
        Ok(())
    })
}

/// Gradient of the current train snapshot at `theta[2]` without advancing.
///
/// # Safety
/// `handle` must be live; `theta` and `grad_out` must point to two doubles.
#[no_mangle]
pub unsafe extern "C" fn ctagd_landscape_gradient(
    handle: *const CtagdLandscape,
    theta: *const f64,
    grad_out: *mut f64,
) -> CtagdStatus {
    guard(|| {
        let h = deref(handle, "handle")?;
        let th = slice(theta, 2, "theta")?;
        let grad_out = slice_mut(grad_out, 2, "grad_out")?;
        grad_out.copy_from_slice(&h.seq.current().gradient([th[0], th[1]]));
        Ok(())
    })
}

/// Averaged train and test objectives at `theta[2]`.
///
/// # Safety
/// `handle` must be live; `theta` must point to two doubles and `out` to a
/// `CtagdMetrics`.
#[no_mangle]
pub unsafe extern "C" fn ctagd_landscape_metrics(
    handle: *const CtagdLandscape,
    theta: *const f64,
    out: *mut CtagdMetrics,
) -> CtagdStatus {
    guard(|| {
        let h = deref(handle, "handle")?;
        let th = slice(theta, 2, "theta")?;
        let out = deref_mut(out, "out")?;
        let m = h.seq.metrics([th[0], th[1]]);
        *out = CtagdMetrics { train: m.train, test: m.test, gap: m.gap };
        Ok(())
    })
}

/// Creates an optimizer over `n_tensors` parameter tensors of the given
/// sizes, laid out back to back. `config_json` is a (possibly partial) bench
/// config; its `ctagd` section and the backbone's section (`sgd` or `adam`)
/// are read.
///
/// # Safety
/// `sizes` must point to `n_tensors` values; `config_json` must be null or a
/// nul-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctagd_optimizer_new(
    backbone: CtagdBackbone,
    sizes: *const usize,
    n_tensors: usize,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut CtagdOptimizer,
) -> CtagdStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        if sizes.is_null() {
            return Err(fail(CtagdStatus::NullPointer, "sizes is null"));
        }
        let sizes = std::slice::from_raw_parts(sizes, n_tensors);
        let layout = lift(Layout::from_sizes(sizes.iter().enumerate().map(|(i, &n)| (format!("t{i}"), n))))?;
        let cfg = config(config_json)?;
        let kind = BackboneKind::from(backbone);
        let bb = lift(Backbone::new(kind, cfg.backbone_config(kind).clone(), layout.len()))?;
        let state = lift(CtagdState::new(cfg.ctagd.clone(), layout, seed))?;
        *out = Box::into_raw(Box::new(CtagdOptimizer { backbone: bb, state }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`ctagd_optimizer_new`] and not have
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn ctagd_optimizer_free(handle: *mut CtagdOptimizer) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Total parameter count of the optimizer's layout; 0 for a null handle.
///
/// # Safety
/// `handle` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn ctagd_optimizer_dim(handle: *const CtagdOptimizer) -> usize {
    handle.as_ref().map_or(0, |h| h.state.layout().len())
}

fn check_len(h: &CtagdOptimizer, len: usize) -> Result<(), CtagdStatus> {
    let d = h.state.layout().len();
    if len != d {
        return Err(fail(CtagdStatus::Usage, format!("expected {d} values, got {len}")));
    }
    Ok(())
}

/// One inner step of an epoch of `t_total` steps, updating `theta` in place
/// with the mini-batch gradient `grad`.
///
/// # Safety
/// `handle` must be live; `theta` and `grad` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctagd_optimizer_step(
    handle: *mut CtagdOptimizer,
    theta: *mut f64,
    grad: *const f64,
    len: usize,
    t_total: usize,
) -> CtagdStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        check_len(h, len)?;
        let theta = slice_mut(theta, len, "theta")?;
        let grad = slice(grad, len, "grad")?;
        lift(h.state.inner_step(theta, grad, &mut h.backbone, t_total))
    })
}

/// Closes the epoch: takes the boundary step on `theta` and stores the next
/// epoch's per-tensor scales.
///
/// # Safety
/// `handle` must be live; `theta` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctagd_optimizer_end_epoch(handle: *mut CtagdOptimizer, theta: *mut f64, len: usize) -> CtagdStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        check_len(h, len)?;
        let theta = slice_mut(theta, len, "theta")?;
        lift(h.state.end_epoch(theta)).map(|_| ())
    })
}

/// Writes the clamped diagonal curvature estimate accumulated so far in the
/// current epoch.
///
/// # Safety
/// `handle` must be live; `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctagd_optimizer_hessian(handle: *const CtagdOptimizer, out: *mut f64, len: usize) -> CtagdStatus {
    guard(|| {
        let h = deref(handle, "handle")?;
        check_len(h, len)?;
        slice_mut(out, len, "out")?.copy_from_slice(&h.state.finalize_hessian());
        Ok(())
    })
}

/// Per-tensor scales that seed the current epoch's divisor, one per tensor.
///
/// # Safety
/// `handle` must be live; `out` must point to `n_tensors` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctagd_optimizer_gammas(handle: *const CtagdOptimizer, out: *mut f64, n_tensors: usize) -> CtagdStatus {
    guard(|| {
        let h = deref(handle, "handle")?;
        let g = h.state.gammas();
        if n_tensors != g.len() {
            return Err(fail(CtagdStatus::Usage, format!("expected {} tensors, got {n_tensors}", g.len())));
        }
        slice_mut(out, n_tensors, "out")?.copy_from_slice(g);
        Ok(())
    })
}

/// Number of completed epochs; 0 for a null handle.
///
/// # Safety
/// `handle` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn ctagd_optimizer_epoch(handle: *const CtagdOptimizer) -> usize {
    handle.as_ref().map_or(0, |h| h.state.epoch())
}
