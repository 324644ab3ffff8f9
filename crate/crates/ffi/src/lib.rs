//! C ABI over the lantk toolkit.
//!
//! Matrices and regressors cross the boundary as opaque handles that the
//! caller frees with the matching `_free` function. Every fallible call
//! returns a `LantkStatus`; on failure `lantk_last_error` describes what went
//! wrong on the calling thread. Dense data is exchanged row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lantk::kernels_analytic::{self, McConfig};
use lantk::regress::KernelRegressor;
use lantk::{matfile, nth, LantkError};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LantkStatus {
    Ok = 0,
    InvalidInput = 1,
    DegenerateGeometry = 2,
    Numerical = 3,
    Unsupported = 4,
    EmptyBucket = 5,
    Guardrail = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

/// Dense row-major matrix of f64.
pub struct LantkMatrix {
    inner: DMatrix<f64>,
}

/// Fitted kernel ridge regressor.
pub struct LantkRegressor {
    inner: KernelRegressor,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &LantkError) -> LantkStatus {
    match e {
        LantkError::InvalidInput(_) | LantkError::Json(_) | LantkError::Csv(_) => LantkStatus::InvalidInput,
        LantkError::DegenerateGeometry { .. } => LantkStatus::DegenerateGeometry,
        LantkError::Numerical(_) => LantkStatus::Numerical,
        LantkError::Unsupported(_) => LantkStatus::Unsupported,
        LantkError::EmptyBucket(_) => LantkStatus::EmptyBucket,
        LantkError::Guardrail(_) => LantkStatus::Guardrail,
        LantkError::Io(_) => LantkStatus::Io,
    }
}

enum Failure {
    Lib(LantkError),
    Null(&'static str),
}

impl From<LantkError> for Failure {
    fn from(e: LantkError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LantkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LantkStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            LantkStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic");
            LantkStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix<'a>(m: *const LantkMatrix, what: &'static str) -> Result<&'a DMatrix<f64>, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(v);
    Ok(())
}

fn boxed(m: DMatrix<f64>) -> *mut LantkMatrix {
    Box::into_raw(Box::new(LantkMatrix { inner: m }))
}

unsafe fn path_of<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(LantkError::invalid("path is not valid UTF-8")))?;
    Ok(Path::new(s))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lantk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn lantk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Matrices

/// Copy `rows * cols` row-major values into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lantk_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut LantkMatrix,
) -> LantkStatus {
    guard(|| {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| LantkError::invalid("matrix size overflows"))?;
        let s = slice(data, len, "data")?;
        put(out, boxed(DMatrix::from_row_slice(rows, cols, s)), "out")
    })
}

/// # Safety
/// `m` must come from this library and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn lantk_matrix_free(m: *mut LantkMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn lantk_matrix_rows(m: *const LantkMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.nrows())
}

/// # Safety
/// `m` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn lantk_matrix_cols(m: *const LantkMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.ncols())
}

/// Copy the matrix row-major into `buf`, which holds `len` values.
///
/// # Safety
/// `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn lantk_matrix_copy(m: *const LantkMatrix, buf: *mut f64, len: usize) -> LantkStatus {
    guard(|| {
        let m = matrix(m, "matrix")?;
        let need = m.nrows() * m.ncols();
        if len < need {
            return Err(LantkError::invalid(format!("buffer holds {len} values, matrix needs {need}")).into());
        }
        if need == 0 {
            return Ok(());
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let out = std::slice::from_raw_parts_mut(buf, need);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[i * m.ncols() + j] = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lantk_matrix_get(m: *const LantkMatrix, row: usize, col: usize, out: *mut f64) -> LantkStatus {
    guard(|| {
        let m = matrix(m, "matrix")?;
        if row >= m.nrows() || col >= m.ncols() {
            return Err(
                LantkError::invalid(format!("index ({row}, {col}) outside {}×{}", m.nrows(), m.ncols())).into(),
            );
        }
        put(out, m[(row, col)], "out")
    })
}

/// Write in the LANTKMAT binary format.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lantk_matrix_save(m: *const LantkMatrix, path: *const c_char) -> LantkStatus {
    guard(|| {
        let m = matrix(m, "matrix")?;
        matfile::write_matrix(path_of(path)?, m)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lantk_matrix_load(path: *const c_char, out: *mut *mut LantkMatrix) -> LantkStatus {
    guard(|| {
        let m = matfile::read_matrix(path_of(path)?)?;
        put(out, boxed(m), "out")
    })
}

// ---------------------------------------------------------------------------
// Kernels

/// Expected ReLU tangent kernel of two `d`-vectors.
///
/// # Safety
/// `x`, `x2` must hold `d` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lantk_expected_k2(x: *const f64, x2: *const f64, d: usize, out: *mut f64) -> LantkStatus {
    guard(|| {
        let v = kernels_analytic::expected_k2(slice(x, d, "x")?, slice(x2, d, "x2")?)?;
        put(out, v, "out")
    })
}

/// Train matrix over the rows of `x`.
///
/// # Safety
/// `x` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lantk_expected_k2_matrix(x: *const LantkMatrix, out: *mut *mut LantkMatrix) -> LantkStatus {
    guard(|| {
        let k = kernels_analytic::expected_k2_matrix(matrix(x, "x")?)?;
        put(out, boxed(k.values), "out")
    })
}

/// Cross-kernel between the rows of `a` and of `b`.
///
/// # Safety
/// `a`, `b` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lantk_expected_k2_cross(
    a: *const LantkMatrix,
    b: *const LantkMatrix,
    out: *mut *mut LantkMatrix,
) -> LantkStatus {
    guard(|| {
        let k = kernels_analytic::expected_k2_cross(matrix(a, "a")?, matrix(b, "b")?)?;
        put(out, boxed(k), "out")
    })
}

/// Width-independent coefficient of the expected fourth-order kernel
/// (divide by the width for the finite-width value), with its Monte-Carlo
/// standard error.
///
/// # Safety
/// The four inputs must hold `d` values; `value` and `stderr` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lantk_expected_k4(
    xa: *const f64,
    xb: *const f64,
    xc: *const f64,
    xd: *const f64,
    d: usize,
    samples: usize,
    seed: u64,
    value: *mut f64,
    stderr: *mut f64,
) -> LantkStatus {
    guard(|| {
        let xs = [
            slice(xa, d, "xa")?,
            slice(xb, d, "xb")?,
            slice(xc, d, "xc")?,
            slice(xd, d, "xd")?,
        ];
        let e = kernels_analytic::expected_k4(xs, &McConfig { samples, seed })?;
        put(value, e.value, "value")?;
        put(stderr, e.stderr, "stderr")
    })
}

/// h_t of the kernel gradient flow from h0; `out` receives n values.
/// `t` may be +infinity for a positive definite `h`.
///
/// # Safety
/// `h` live n×n handle; `y`, `h0` hold n values; `out` writable for n values.
#[no_mangle]
pub unsafe extern "C" fn lantk_flow_solution(
    h: *const LantkMatrix,
    y: *const f64,
    h0: *const f64,
    n: usize,
    t: f64,
    out: *mut f64,
) -> LantkStatus {
    guard(|| {
        let hm = matrix(h, "h")?;
        if hm.nrows() != n || hm.ncols() != n {
            return Err(LantkError::invalid("h must be n×n").into());
        }
        let yv = DVector::from_column_slice(slice(y, n, "y")?);
        let h0v = DVector::from_column_slice(slice(h0, n, "h0")?);
        let sol = nth::flow_solution(hm, &yv, &h0v, t)?;
        if n > 0 {
            if out.is_null() {
                return Err(Failure::Null("out"));
            }
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(sol.as_slice());
        }
        Ok(())
    })
}

/// Finite-t kernel from the truncated hierarchy. `k3` holds n values;
/// `k4` and `h` are n×n; `floor_rel` is the relative eigenvalue floor.
///
/// # Safety
/// Handles live; `k3`, `y` hold n values; `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lantk_prop1_kernel(
    k2: f64,
    k3: *const f64,
    k4: *const LantkMatrix,
    h: *const LantkMatrix,
    y: *const f64,
    n: usize,
    t: f64,
    floor_rel: f64,
    out: *mut f64,
) -> LantkStatus {
    guard(|| {
        let k3v = DVector::from_column_slice(slice(k3, n, "k3")?);
        let yv = DVector::from_column_slice(slice(y, n, "y")?);
        let v = nth::prop1_kernel(k2, &k3v, matrix(k4, "k4")?, matrix(h, "h")?, &yv, t, floor_rel)?;
        put(out, v, "out")
    })
}

// ---------------------------------------------------------------------------
// Regression

/// Kernel ridge regression. `targets` is n×c; a negative `ridge` selects
/// the default 1e-6·trace(K)/n.
///
/// # Safety
/// Handles live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lantk_regressor_fit(
    k: *const LantkMatrix,
    targets: *const LantkMatrix,
    ridge: f64,
    out: *mut *mut LantkRegressor,
) -> LantkStatus {
    guard(|| {
        let r = if ridge < 0.0 { None } else { Some(ridge) };
        let m = KernelRegressor::fit(matrix(k, "k")?, matrix(targets, "targets")?, r)?;
        put(out, Box::into_raw(Box::new(LantkRegressor { inner: m })), "out")
    })
}

/// Scores for a test×train cross-kernel.
///
/// # Safety
/// Handles live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lantk_regressor_predict(
    r: *const LantkRegressor,
    k_cross: *const LantkMatrix,
    out: *mut *mut LantkMatrix,
) -> LantkStatus {
    guard(|| {
        let r = r.as_ref().ok_or(Failure::Null("regressor"))?;
        let s = r.inner.predict(matrix(k_cross, "k_cross")?)?;
        put(out, boxed(s), "out")
    })
}

/// # Safety
/// `r` must come from this library and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn lantk_regressor_free(r: *mut LantkRegressor) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
