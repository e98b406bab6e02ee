//! C ABI over the `sbmca` library.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns an
//! [`SbmcaStatus`]; on failure [`sbmca_last_error_message`] describes the
//! error on the calling thread. Panics are caught and reported as
//! `SBMCA_STATUS_PANIC`.
//!
//! Signals are `double` arrays; matrices are column-major.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sbmca::dictionaries::{build_pulse_dictionary, dct_dictionary, identity_dictionary, symmetric_shifts};
use sbmca::metrics::{reconstruction_snr, Snr};
use sbmca::separators::{mca_separate, SeparationResult};
use sbmca::synth::{DatasetConfig, MixtureDataset};
use sbmca::{blockify, deblockify, sbmca_separate, Dictionary, Error, Init, SbmcaParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbmcaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericFailure = 3,
    IoError = 4,
    Panic = 5,
}

/// Which signal of a dataset to copy out.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbmcaSignal {
    Mixture = 0,
    Known = 1,
    Background = 2,
    Noise = 3,
}

/// Initialisation of the known-component codes in SBMCA.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbmcaInit {
    LassoD1 = 0,
    McaDctOmp = 1,
}

/// SBMCA settings. Fill with [`sbmca_params_default`] before changing fields.
/// The three penalties have no defaults and must always be set.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SbmcaSettings {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub num_atoms: usize,
    pub inner_iters: usize,
    pub max_outer_iters: usize,
    pub outer_tol: f64,
    pub seed: u64,
    pub init: SbmcaInit,
}

pub struct SbmcaDataset {
    fs: f64,
    block_len: usize,
    config: DatasetConfig,
    data: MixtureDataset,
}

pub struct SbmcaDictionary {
    inner: Dictionary,
}

pub struct SbmcaResult {
    known: Vec<f64>,
    background: Vec<f64>,
    inner: SeparationResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SbmcaStatus {
    match e.exit_code() {
        2 => SbmcaStatus::InvalidArgument,
        3 => SbmcaStatus::NumericFailure,
        4 => SbmcaStatus::IoError,
        _ => SbmcaStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SbmcaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SbmcaStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SbmcaStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SbmcaStatus::Panic
        }
    }
}

unsafe fn href<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Fail> {
    if len != src.len() {
        return Err(Error::InvalidArgument(format!("buffer holds {len} values, need {}", src.len())).into());
    }
    if len == 0 {
        return Ok(());
    }
    if dst.is_null() {
        return Err(Fail::Null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    Ok(())
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path_of(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sbmca_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates the default synthetic mixture. `n = 0` keeps the default length.
#[no_mangle]
pub unsafe extern "C" fn sbmca_dataset_generate(
    seed: u64,
    sigma: f64,
    n: usize,
    out: *mut *mut SbmcaDataset,
) -> SbmcaStatus {
    guard(|| {
        let mut config = DatasetConfig::default_with(seed, sigma);
        if n > 0 {
            config.n = n;
        }
        let data = config.generate()?;
        store(
            out,
            SbmcaDataset {
                fs: config.fs,
                block_len: config.block_len,
                config,
                data,
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dataset_len(ds: *const SbmcaDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.x.len())
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dataset_fs(ds: *const SbmcaDataset) -> f64 {
    ds.as_ref().map_or(0.0, |d| d.fs)
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dataset_block_len(ds: *const SbmcaDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.block_len)
}

/// Copies one signal into `buf`, which must hold exactly `sbmca_dataset_len` values.
#[no_mangle]
pub unsafe extern "C" fn sbmca_dataset_copy_signal(
    ds: *const SbmcaDataset,
    which: SbmcaSignal,
    buf: *mut f64,
    len: usize,
) -> SbmcaStatus {
    guard(|| {
        let d = href(ds, "dataset")?;
        let src = match which {
            SbmcaSignal::Mixture => &d.data.x,
            SbmcaSignal::Known => &d.data.x_p,
            SbmcaSignal::Background => &d.data.x_u,
            SbmcaSignal::Noise => &d.data.noise,
        };
        copy_out(src, buf, len)
    })
}

/// Known dictionary of a dataset: its two prototypes at circular shifts `-r..=r`.
#[no_mangle]
pub unsafe extern "C" fn sbmca_dataset_known_dictionary(
    ds: *const SbmcaDataset,
    shift_range: i64,
    out: *mut *mut SbmcaDictionary,
) -> SbmcaStatus {
    guard(|| {
        let d = href(ds, "dataset")?;
        if shift_range < 0 {
            return Err(Error::InvalidArgument("shift range must be non-negative".into()).into());
        }
        let inner = build_pulse_dictionary(&d.config.prototypes()?, &symmetric_shifts(shift_range))?;
        store(out, SbmcaDictionary { inner })
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dataset_free(ds: *mut SbmcaDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Pulse dictionary from `num_prototypes` column-major prototypes of length
/// `m` and `num_shifts` circular shifts.
#[no_mangle]
pub unsafe extern "C" fn sbmca_dictionary_pulse(
    prototypes: *const f64,
    m: usize,
    num_prototypes: usize,
    shifts: *const i64,
    num_shifts: usize,
    out: *mut *mut SbmcaDictionary,
) -> SbmcaStatus {
    guard(|| {
        let flat = slice(prototypes, m * num_prototypes, "prototypes")?;
        if num_shifts > 0 && shifts.is_null() {
            return Err(Fail::Null("shifts"));
        }
        let shifts = if num_shifts == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(shifts, num_shifts)
        };
        let protos: Vec<Vec<f64>> = if m == 0 {
            Vec::new()
        } else {
            flat.chunks(m).map(|c| c.to_vec()).collect()
        };
        let inner = build_pulse_dictionary(&protos, shifts)?;
        store(out, SbmcaDictionary { inner })
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dictionary_dct(m: usize, out: *mut *mut SbmcaDictionary) -> SbmcaStatus {
    guard(|| store(out, SbmcaDictionary { inner: dct_dictionary(m)? }))
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dictionary_identity(m: usize, out: *mut *mut SbmcaDictionary) -> SbmcaStatus {
    guard(|| store(out, SbmcaDictionary { inner: identity_dictionary(m)? }))
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dictionary_load(path: *const c_char, out: *mut *mut SbmcaDictionary) -> SbmcaStatus {
    guard(|| {
        let p = path_of(path)?;
        store(out, SbmcaDictionary { inner: Dictionary::load(&p)? })
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dictionary_save(dict: *const SbmcaDictionary, path: *const c_char) -> SbmcaStatus {
    guard(|| {
        let d = href(dict, "dictionary")?;
        let p = path_of(path)?;
        d.inner.save(&p)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dictionary_rows(dict: *const SbmcaDictionary) -> usize {
    dict.as_ref().map_or(0, |d| d.inner.rows())
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dictionary_atoms(dict: *const SbmcaDictionary) -> usize {
    dict.as_ref().map_or(0, |d| d.inner.num_atoms())
}

/// Copies the `rows x atoms` matrix, column-major, into `buf`.
#[no_mangle]
pub unsafe extern "C" fn sbmca_dictionary_copy(dict: *const SbmcaDictionary, buf: *mut f64, len: usize) -> SbmcaStatus {
    guard(|| {
        let d = href(dict, "dictionary")?;
        copy_out(d.inner.atoms().as_slice(), buf, len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_dictionary_free(dict: *mut SbmcaDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// Default iteration settings. The penalties are set to NaN, which
/// `sbmca_separate_sbmca` rejects until the caller chooses them.
#[no_mangle]
pub unsafe extern "C" fn sbmca_params_default(out: *mut SbmcaSettings) -> SbmcaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("params"));
        }
        let p = SbmcaParams::new(f64::NAN, f64::NAN, f64::NAN, 64, 0);
        *out = SbmcaSettings {
            lambda1: p.lambda1,
            lambda2: p.lambda2,
            lambda3: p.lambda3,
            num_atoms: p.dict_opts.num_atoms,
            inner_iters: p.dict_opts.inner_iters,
            max_outer_iters: p.max_outer_iters,
            outer_tol: p.outer_tol,
            seed: p.dict_opts.seed,
            init: SbmcaInit::McaDctOmp,
        };
        Ok(())
    })
}

fn finish(res: SeparationResult) -> Result<SbmcaResult, Fail> {
    Ok(SbmcaResult {
        known: deblockify(&res.xp_hat)?,
        background: deblockify(&res.xu_hat)?,
        inner: res,
    })
}

/// MCA with two fixed dictionaries and a single penalty.
#[no_mangle]
pub unsafe extern "C" fn sbmca_separate_mca(
    x: *const f64,
    n: usize,
    block_len: usize,
    d1: *const SbmcaDictionary,
    d2: *const SbmcaDictionary,
    lambda: f64,
    out: *mut *mut SbmcaResult,
) -> SbmcaStatus {
    guard(|| {
        let x = slice(x, n, "signal")?;
        let d1 = href(d1, "d1")?;
        let d2 = href(d2, "d2")?;
        let blocks = blockify(x, block_len)?;
        let res = mca_separate(&blocks, &d1.inner, &d2.inner, lambda)?;
        store(out, finish(res)?)
    })
}

/// SBMCA with known dictionary `d1`; the background dictionary is learned.
#[no_mangle]
pub unsafe extern "C" fn sbmca_separate_sbmca(
    x: *const f64,
    n: usize,
    block_len: usize,
    d1: *const SbmcaDictionary,
    params: *const SbmcaSettings,
    out: *mut *mut SbmcaResult,
) -> SbmcaStatus {
    guard(|| {
        let x = slice(x, n, "signal")?;
        let d1 = href(d1, "d1")?;
        let c = href(params, "params")?;
        let mut p = SbmcaParams::new(c.lambda1, c.lambda2, c.lambda3, c.num_atoms, c.seed);
        p.dict_opts.inner_iters = c.inner_iters;
        p.max_outer_iters = c.max_outer_iters;
        p.outer_tol = c.outer_tol;
        p.init = match c.init {
            SbmcaInit::LassoD1 => Init::LassoD1,
            SbmcaInit::McaDctOmp => Init::McaDctOmp,
        };
        let blocks = blockify(x, block_len)?;
        let res = sbmca_separate(&blocks, &d1.inner, &p)?;
        store(out, finish(res)?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_result_len(res: *const SbmcaResult) -> usize {
    res.as_ref().map_or(0, |r| r.known.len())
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_result_copy_known(res: *const SbmcaResult, buf: *mut f64, len: usize) -> SbmcaStatus {
    guard(|| copy_out(&href(res, "result")?.known, buf, len))
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_result_copy_background(
    res: *const SbmcaResult,
    buf: *mut f64,
    len: usize,
) -> SbmcaStatus {
    guard(|| copy_out(&href(res, "result")?.background, buf, len))
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_result_outer_iters(res: *const SbmcaResult) -> usize {
    res.as_ref().map_or(0, |r| r.inner.outer_iters)
}

/// 1 if every solver met its tolerance, 0 otherwise (or for NULL).
#[no_mangle]
pub unsafe extern "C" fn sbmca_result_converged(res: *const SbmcaResult) -> i32 {
    res.as_ref().map_or(0, |r| r.inner.converged as i32)
}

/// The learned background dictionary; invalid-argument for MCA results.
#[no_mangle]
pub unsafe extern "C" fn sbmca_result_learned_dictionary(
    res: *const SbmcaResult,
    out: *mut *mut SbmcaDictionary,
) -> SbmcaStatus {
    guard(|| {
        let r = href(res, "result")?;
        let d = r
            .inner
            .d2_hat
            .clone()
            .ok_or_else(|| Error::InvalidArgument("result has no learned dictionary".into()))?;
        store(out, SbmcaDictionary { inner: d })
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbmca_result_free(res: *mut SbmcaResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Reconstruction SNR in dB; `+INFINITY` when `est == reference` exactly.
#[no_mangle]
pub unsafe extern "C" fn sbmca_snr_db(reference: *const f64, est: *const f64, n: usize, out: *mut f64) -> SbmcaStatus {
    guard(|| {
        let r = slice(reference, n, "reference")?;
        let e = slice(est, n, "estimate")?;
        if out.is_null() {
            return Err(Fail::Null("output"));
        }
        *out = match reconstruction_snr(r, e)? {
            Snr::Db(v) => v,
            Snr::Exact => f64::INFINITY,
        };
        Ok(())
    })
}
