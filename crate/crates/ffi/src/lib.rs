//! C ABI for the linfvar library.
//!
//! Conventions: every fallible call returns a [`LinfvarStatus`]; results
//! come back through out-pointers. Maps are opaque handles created and
//! destroyed here. [`linfvar_last_error`] returns a thread-local message
//! for the most recent failure on the calling thread.

use linfvar::grid::{GridDomain, GridMap, SubdomainSpec};
use linfvar::operators::OperatorId;
use linfvar::{Error, Result};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LinfvarStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8, or an argument outside its domain.
    InvalidArgument = 1,
    /// Invalid grid geometry or subdomain.
    Domain = 2,
    /// Evaluation hit a declared singular set.
    Singularity = 3,
    /// I/O or file-format failure.
    Io = 4,
    /// The requested check ran and failed.
    CheckFailed = 5,
    Internal = 6,
}

/// Opaque handle to a sampled map.
#[repr(C)]
pub struct LinfvarMap {
    _opaque: [u8; 0],
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> LinfvarStatus {
    match err {
        Error::InvalidDomain(_) | Error::Subdomain(_) | Error::EmptySubdomain(_) => {
            LinfvarStatus::Domain
        }
        Error::Singularity { .. } => LinfvarStatus::Singularity,
        Error::Io(_) | Error::Format(_) => LinfvarStatus::Io,
        Error::InvalidParameter(_) | Error::Dimension(_) | Error::Config(_)
        | Error::UnknownSolution(_) => LinfvarStatus::InvalidArgument,
        _ => LinfvarStatus::Internal,
    }
}

fn fail(err: Error) -> LinfvarStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

unsafe fn cstr<'a>(ptr: *const c_char) -> std::result::Result<&'a str, LinfvarStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(LinfvarStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        LinfvarStatus::InvalidArgument
    })
}

fn map_into_raw(map: GridMap) -> *mut LinfvarMap {
    Box::into_raw(Box::new(map)) as *mut LinfvarMap
}

unsafe fn map_ref<'a>(ptr: *const LinfvarMap) -> std::result::Result<&'a GridMap, LinfvarStatus> {
    if ptr.is_null() {
        set_error("null map handle");
        return Err(LinfvarStatus::InvalidArgument);
    }
    Ok(&*(ptr as *const GridMap))
}

/// Message for the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn linfvar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Samples a registered reference map on a regular grid.
///
/// `bounds` holds `dim` (lo, hi) pairs, `resolution` holds `dim` node
/// counts. On success `*out` owns the new map; free it with
/// [`linfvar_map_free`].
///
/// # Safety
/// `id` must be a valid NUL-terminated string; `bounds` must point to
/// `2 * dim` doubles, `resolution` to `dim` usizes, `out` to a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn linfvar_map_from_corpus(
    id: *const c_char,
    bounds: *const f64,
    resolution: *const usize,
    dim: usize,
    acknowledge_singular: bool,
    out: *mut *mut LinfvarMap,
) -> LinfvarStatus {
    let id = match cstr(id) {
        Ok(s) => s,
        Err(c) => return c,
    };
    if bounds.is_null() || resolution.is_null() || out.is_null() || dim == 0 {
        set_error("null geometry argument");
        return LinfvarStatus::InvalidArgument;
    }
    let b: Vec<(f64, f64)> = (0..dim)
        .map(|i| (*bounds.add(2 * i), *bounds.add(2 * i + 1)))
        .collect();
    let r: Vec<usize> = (0..dim).map(|i| *resolution.add(i)).collect();
    let run = || -> Result<GridMap> {
        let sol = linfvar::solutions::find(id)?;
        let domain = GridDomain::new(&b, &r)?;
        sol.sample(&domain, acknowledge_singular)
    };
    match run() {
        Ok(map) => {
            *out = map_into_raw(map);
            LinfvarStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Reads a map from the JSON-header + CSV format.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn linfvar_map_read_csv(
    path: *const c_char,
    out: *mut *mut LinfvarMap,
) -> LinfvarStatus {
    let path = match cstr(path) {
        Ok(s) => s,
        Err(c) => return c,
    };
    if out.is_null() {
        set_error("null output slot");
        return LinfvarStatus::InvalidArgument;
    }
    match GridMap::read_csv_file(Path::new(path)) {
        Ok(map) => {
            *out = map_into_raw(map);
            LinfvarStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Writes a map in the JSON-header + CSV format.
///
/// # Safety
/// `map` must be a live handle from this library; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn linfvar_map_write_csv(
    map: *const LinfvarMap,
    path: *const c_char,
) -> LinfvarStatus {
    let m = match map_ref(map) {
        Ok(m) => m,
        Err(c) => return c,
    };
    let path = match cstr(path) {
        Ok(s) => s,
        Err(c) => return c,
    };
    match m.write_csv_file(Path::new(path)) {
        Ok(()) => LinfvarStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Releases a map handle. Null is a no-op.
///
/// # Safety
/// `map` must be null or a handle previously returned by this library and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn linfvar_map_free(map: *mut LinfvarMap) {
    if !map.is_null() {
        drop(Box::from_raw(map as *mut GridMap));
    }
}

/// Number of grid nodes of a map, or 0 for a null handle.
///
/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn linfvar_map_node_count(map: *const LinfvarMap) -> usize {
    match map_ref(map) {
        Ok(m) => m.domain().node_count(),
        Err(_) => 0,
    }
}

fn operator_from(tag: &str, p: f64) -> Result<OperatorId> {
    let op = match tag {
        "infinity_full" => OperatorId::InfinityFull,
        "infinity_tangential" => OperatorId::InfinityTangential,
        "infinity_normal" => OperatorId::InfinityNormal,
        "p_laplacian_expanded" => OperatorId::PLaplacianExpanded { p },
        other => return Err(Error::InvalidParameter(format!("unknown operator `{other}`"))),
    };
    op.validate()?;
    Ok(op)
}

/// Mask-excluded maximum of the pointwise operator residual over the grid.
/// Pass `rank_tol <= 0` or `blowup_threshold <= 0` for the defaults.
///
/// # Safety
/// `map` must be a live handle, `operator_tag` a valid string, `out_max` a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn linfvar_residual_max(
    map: *const LinfvarMap,
    operator_tag: *const c_char,
    p: f64,
    rank_tol: f64,
    blowup_threshold: f64,
    out_max: *mut f64,
) -> LinfvarStatus {
    let m = match map_ref(map) {
        Ok(m) => m,
        Err(c) => return c,
    };
    let tag = match cstr(operator_tag) {
        Ok(s) => s,
        Err(c) => return c,
    };
    if out_max.is_null() {
        set_error("null output slot");
        return LinfvarStatus::InvalidArgument;
    }
    let rank_tol = if rank_tol > 0.0 {
        rank_tol
    } else {
        linfvar::DEFAULT_RANK_TOL
    };
    let blowup = if blowup_threshold > 0.0 {
        blowup_threshold
    } else {
        linfvar::DEFAULT_BLOWUP_THRESHOLD
    };
    let run = || -> Result<f64> {
        let op = operator_from(tag, p)?;
        let field = linfvar::residual_field(m, &op, rank_tol, blowup)?;
        Ok(field.masked_max(None))
    };
    match run() {
        Ok(v) => {
            *out_max = v;
            LinfvarStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Supremal energy `max |Du|^2` over a box subdomain given by center and
/// half-widths (each `dim` doubles).
///
/// # Safety
/// `map` must be a live handle; `center` and `half_widths` must point to
/// `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn linfvar_sup_energy(
    map: *const LinfvarMap,
    center: *const f64,
    half_widths: *const f64,
    out: *mut f64,
) -> LinfvarStatus {
    let m = match map_ref(map) {
        Ok(m) => m,
        Err(c) => return c,
    };
    if center.is_null() || half_widths.is_null() || out.is_null() {
        set_error("null geometry argument");
        return LinfvarStatus::InvalidArgument;
    }
    let dim = m.domain().dim();
    let spec = SubdomainSpec::Box {
        center: (0..dim).map(|i| *center.add(i)).collect(),
        half_widths: (0..dim).map(|i| *half_widths.add(i)).collect(),
    };
    let run = || -> Result<f64> {
        let grad = linfvar::gradient_field(m)?;
        linfvar::functionals::sup_energy(&grad, &spec)
    };
    match run() {
        Ok(v) => {
            *out = v;
            LinfvarStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Runs a full JSON run configuration, writing reports under `out_dir`.
/// `*out_exit_code` follows the CLI contract: 0 all checks passed,
/// 1 at least one check failed, 2 config/usage error. The call itself
/// returns Ok when the run executed (even with failing checks) and
/// CheckFailed/InvalidArgument accordingly otherwise.
///
/// # Safety
/// `config_json` and `out_dir` must be valid strings; `out_exit_code` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn linfvar_run_json(
    config_json: *const c_char,
    out_dir: *const c_char,
    out_exit_code: *mut i32,
) -> LinfvarStatus {
    let cfg = match cstr(config_json) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let dir = match cstr(out_dir) {
        Ok(s) => s,
        Err(c) => return c,
    };
    if out_exit_code.is_null() {
        set_error("null output slot");
        return LinfvarStatus::InvalidArgument;
    }
    let code = linfvar::runner::run_json_config(cfg, Path::new(dir), false);
    *out_exit_code = code;
    match code {
        0 => LinfvarStatus::Ok,
        1 => {
            set_error("at least one check failed");
            LinfvarStatus::CheckFailed
        }
        _ => {
            set_error("config or usage error");
            LinfvarStatus::InvalidArgument
        }
    }
}
