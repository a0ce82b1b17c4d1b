//! C ABI for phtplate.
//!
//! Models and solutions are opaque handles owned by the caller and released with the matching
//! `*_free` function. Every fallible call returns a `PhtStatus`; on failure the message is kept
//! per thread and read with `pht_last_error`. Panics never cross the boundary.

use phtplate::assembly::{Discretization, PlateModel};
use phtplate::eigen::solve_eigen;
use phtplate::io::ModelFile;
use phtplate::multimode::adapt_mode;
use phtplate::sweep::run;
use phtplate::PlateError;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

/// Status of a call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhtStatus {
    Ok = 0,
    /// Malformed or inconsistent input (model file, argument).
    Input = 1,
    /// The numerical solution failed.
    Numerical = 2,
    /// A required pointer was null or a string was not UTF-8.
    NullOrEncoding = 3,
    /// Internal panic.
    Panic = 4,
}

/// A parsed and validated model.
pub struct PhtModel {
    file: ModelFile,
    model: PlateModel,
}

/// Lowest modes of a model on its initial mesh.
pub struct PhtSolution {
    dofs: usize,
    n_free: usize,
    frequencies: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

/// Outcome of a single-mode or multiple-mode adaptation.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhtAdaptSummary {
    /// First mode of the adapted set, 0-based.
    pub set_start: usize,
    /// Multiplicity of the adapted set.
    pub set_n: usize,
    pub steps: usize,
    pub converged: bool,
    pub dofs: usize,
    /// Mean frequency of the set on the final mesh.
    pub frequency: f64,
    pub e_lambda: f64,
    pub delta_phi: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &PlateError) -> PhtStatus {
    match e.exit_code() {
        2 => PhtStatus::Numerical,
        _ => PhtStatus::Input,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PhtStatus, String)>) -> PhtStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PhtStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            PhtStatus::Panic
        }
    }
}

fn lib<T>(r: phtplate::Result<T>) -> Result<T, (PhtStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null_err(what: &str) -> (PhtStatus, String) {
    (PhtStatus::NullOrEncoding, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PhtStatus, String)> {
    if p.is_null() {
        return Err(null_err(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (PhtStatus::NullOrEncoding, format!("{what} is not valid UTF-8")))
}

fn new_model(file: ModelFile) -> Result<*mut PhtModel, (PhtStatus, String)> {
    let model = lib(file.build_model())?;
    Ok(Box::into_raw(Box::new(PhtModel { file, model })))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pht_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a successful call.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pht_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads and validates a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pht_model_load(path: *const c_char, out: *mut *mut PhtModel) -> PhtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        *out = new_model(lib(ModelFile::load(Path::new(path)))?)?;
        Ok(())
    })
}

/// Parses and validates a model from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pht_model_parse(text: *const c_char, out: *mut *mut PhtModel) -> PhtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        *out = new_model(lib(ModelFile::parse(text))?)?;
        Ok(())
    })
}

/// Number of patches of a model, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a handle from `pht_model_load`/`pht_model_parse`.
#[no_mangle]
pub unsafe extern "C" fn pht_model_num_patches(model: *const PhtModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.patches.len())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pht_model_free(model: *mut PhtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Solves for the lowest `n_modes` modes on the model's initial mesh. `n_modes == 0` uses the
/// count from the model file.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pht_solve(model: *const PhtModel, n_modes: usize, out: *mut *mut PhtSolution) -> PhtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null_err("model"))?;
        let mut opts = m.file.eigen_options();
        if n_modes > 0 {
            opts.n_modes = n_modes;
        }
        let d = lib(Discretization::new(&m.model, m.file.analysis.scheme, lib(m.file.initial_meshes())?, m.file.analysis.quad_order))?;
        let pairs = lib(solve_eigen(&d.system.k, &d.system.m, &opts))?;
        *out = Box::into_raw(Box::new(PhtSolution {
            dofs: d.dofs(),
            n_free: d.n_free(),
            frequencies: pairs.frequencies(),
            vectors: pairs.vectors,
        }));
        Ok(())
    })
}

/// Number of computed modes, 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pht_solution_num_modes(sol: *const PhtSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.frequencies.len())
}

/// Total dofs of the discretization, 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pht_solution_num_dofs(sol: *const PhtSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.dofs)
}

/// Length of each mode vector (free dofs), 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pht_solution_num_free(sol: *const PhtSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.n_free)
}

/// Copies up to `cap` angular frequencies into `buf`; returns the number copied.
///
/// # Safety
/// `sol` must be null or a live handle; `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pht_solution_frequencies(sol: *const PhtSolution, buf: *mut f64, cap: usize) -> usize {
    match (sol.as_ref(), buf.is_null()) {
        (Some(s), false) => {
            let n = s.frequencies.len().min(cap);
            ptr::copy_nonoverlapping(s.frequencies.as_ptr(), buf, n);
            n
        }
        _ => 0,
    }
}

/// Copies up to `cap` entries of the M-normalized mode `k` (0-based) into `buf`; returns the
/// number copied, 0 if `k` is out of range.
///
/// # Safety
/// `sol` must be null or a live handle; `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pht_solution_mode(sol: *const PhtSolution, k: usize, buf: *mut f64, cap: usize) -> usize {
    match (sol.as_ref().and_then(|s| s.vectors.get(k)), buf.is_null()) {
        (Some(v), false) => {
            let n = v.len().min(cap);
            ptr::copy_nonoverlapping(v.as_ptr(), buf, n);
            n
        }
        _ => 0,
    }
}

/// # Safety
/// `sol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pht_solution_free(sol: *mut PhtSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Adapts the mesh for `mode` (0-based) and the multiple-mode set containing it, with the
/// settings of the model file.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pht_adapt(model: *const PhtModel, mode: usize, out: *mut PhtAdaptSummary) -> PhtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        let m = model.as_ref().ok_or_else(|| null_err("model"))?;
        let f = &m.file;
        let (set, r) = lib(adapt_mode(
            &m.model,
            f.analysis.scheme,
            lib(f.initial_meshes())?,
            mode,
            &f.adapt_config(),
            &f.tracking_config(),
        ))?;
        let last = r.trace.last();
        *out = PhtAdaptSummary {
            set_start: set.start,
            set_n: set.n,
            steps: r.trace.len(),
            converged: r.converged,
            dofs: last.map_or(0, |t| t.dofs_coarse),
            frequency: last.map_or(f64::NAN, |t| t.lambda),
            e_lambda: last.map_or(f64::NAN, |t| t.e_lambda),
            delta_phi: last.map_or(f64::NAN, |t| t.delta_phi),
        };
        Ok(())
    })
}

/// Runs a band sweep and returns the JSON report in `*out_json`, released with
/// `pht_string_free`. A NaN bound uses the band from the model file.
///
/// # Safety
/// `model` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pht_sweep_json(model: *const PhtModel, lo: f64, hi: f64, out_json: *mut *mut c_char) -> PhtStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null_err("out_json"));
        }
        *out_json = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null_err("model"))?;
        let band = (!lo.is_nan() && !hi.is_nan()).then_some([lo, hi]);
        let cfg = lib(m.file.sweep_config(band))?;
        let rep = lib(run(&m.model, m.file.analysis.scheme, lib(m.file.initial_meshes())?, &cfg))?;
        let text = lib(rep.to_json())?;
        *out_json = CString::new(text).map_err(|e| (PhtStatus::Panic, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pht_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
