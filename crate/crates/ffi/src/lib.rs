//! C ABI over the estimation and imputation pipeline.
//!
//! The surface is a handle-based API: [`ebt_fit`] builds an opaque
//! [`EbtModel`] from row-major endpoint buffers, accessors copy the fitted
//! prior and estimates out, [`ebt_impute`] scores new rows under the model,
//! and [`ebt_model_free`] releases it. Every entry point returns an
//! [`EbtStatus`]; on any failure a thread-local message is set and readable
//! via [`ebt_last_error_message`] until the next call on the same thread.
//!
//! All functions catch panics at the boundary, so no Rust unwind ever
//! crosses into C. The generated header lives in `include/ebmtobit.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ebmtobit::censored::CensoredMatrix;
use ebmtobit::matrix::Mat;
use ebmtobit::npmle::{DiscretePrior, SolveOptions};
use ebmtobit::posterior::impute_row;
use ebmtobit::support::{ebm_tobit, EbmTobitConfig, NoiseMode};

/// Result code of every API call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EbtStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// The input data or options were rejected before solving.
    InvalidInput = 2,
    /// The solver failed on otherwise well-formed input.
    SolveFailed = 3,
    /// An internal invariant was violated; the library caught a panic.
    Panic = 4,
}

/// Tuning knobs of [`ebt_fit`]; pass null to use the defaults from
/// [`ebt_fit_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EbtFitOptions {
    /// Support-refinement rounds.
    pub iterations: usize,
    /// Leading rounds excluded from the averaged estimate.
    pub burn_in: usize,
    /// Support atoms per round; 0 means one atom per data row.
    pub support_size: usize,
    /// Standard deviation of the Gaussian jitter used when resampling
    /// support atoms; 0 derives per-column jitter from the data instead.
    pub jitter_sd: f64,
    /// Base seed of the support resampling.
    pub seed: u64,
    /// Relative log-likelihood tolerance of the weight solver.
    pub tol: f64,
    /// Iteration cap of the weight solver.
    pub max_iter: usize,
}

impl Default for EbtFitOptions {
    fn default() -> Self {
        EbtFitOptions {
            iterations: 50,
            burn_in: 10,
            support_size: 0,
            jitter_sd: 1.0,
            seed: 0,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// A fitted model: the estimated prior plus the averaged mean estimate for
/// the training rows. Opaque; create with [`ebt_fit`], release with
/// [`ebt_model_free`].
pub struct EbtModel {
    prior: DiscretePrior,
    theta_hat: Mat,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

fn fail(status: EbtStatus, msg: &str) -> EbtStatus {
    set_last_error(msg);
    status
}

/// Run `body` with panics mapped to [`EbtStatus::Panic`].
fn guarded(body: impl FnOnce() -> EbtStatus) -> EbtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(EbtStatus::Panic, "internal panic caught at the C boundary"),
    }
}

/// Build a matrix from a row-major C buffer, or fail.
///
/// # Safety
/// `ptr` must point to `n_rows * n_cols` readable doubles.
unsafe fn mat_from_raw(ptr: *const f64, n_rows: usize, n_cols: usize) -> Result<Mat, String> {
    let len = n_rows
        .checked_mul(n_cols)
        .ok_or_else(|| "matrix dimensions overflow".to_string())?;
    let data = unsafe { std::slice::from_raw_parts(ptr, len) };
    Mat::from_vec(n_rows, n_cols, data.to_vec()).map_err(|e| e.to_string())
}

/// Message of the most recent failure on this thread; empty when the last
/// call succeeded. The pointer stays valid until the next API call on the
/// same thread.
#[no_mangle]
pub extern "C" fn ebt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Fill `options` with the library defaults.
///
/// # Safety
/// `options` must be a valid pointer to an [`EbtFitOptions`].
#[no_mangle]
pub unsafe extern "C" fn ebt_fit_options_default(options: *mut EbtFitOptions) -> EbtStatus {
    guarded(|| {
        if options.is_null() {
            return fail(EbtStatus::NullPointer, "options is null");
        }
        unsafe { options.write(EbtFitOptions::default()) };
        set_last_error("");
        EbtStatus::Ok
    })
}

/// Fit a model to a partly interval-censored matrix.
///
/// `lower` and `upper` are row-major `n_rows x n_cols` endpoint buffers; a
/// cell with equal endpoints is a direct observation. `sigma` is either a
/// buffer of per-cell noise levels with the same shape or null, in which
/// case every cell uses `default_sigma`. On success `*out_model` owns the
/// fitted model.
///
/// # Safety
/// The buffer pointers must be valid for their stated shapes, and
/// `out_model` must be a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn ebt_fit(
    lower: *const f64,
    upper: *const f64,
    sigma: *const f64,
    n_rows: usize,
    n_cols: usize,
    default_sigma: f64,
    options: *const EbtFitOptions,
    out_model: *mut *mut EbtModel,
) -> EbtStatus {
    guarded(|| {
        if lower.is_null() || upper.is_null() || out_model.is_null() {
            return fail(EbtStatus::NullPointer, "lower, upper, and out_model are required");
        }
        let opts = if options.is_null() {
            EbtFitOptions::default()
        } else {
            unsafe { *options }
        };
        let build = || -> Result<CensoredMatrix, String> {
            let l = unsafe { mat_from_raw(lower, n_rows, n_cols) }?;
            let u = unsafe { mat_from_raw(upper, n_rows, n_cols) }?;
            let s = if sigma.is_null() {
                Mat::filled(n_rows, n_cols, default_sigma)
            } else {
                unsafe { mat_from_raw(sigma, n_rows, n_cols) }?
            };
            CensoredMatrix::new(l, u, Some(s)).map_err(|e| e.to_string())
        };
        let data = match build() {
            Ok(d) => d,
            Err(e) => return fail(EbtStatus::InvalidInput, &e),
        };
        let cfg = EbmTobitConfig {
            iterations: opts.iterations,
            burn_in: opts.burn_in,
            support_size: (opts.support_size > 0).then_some(opts.support_size),
            noise: if opts.jitter_sd > 0.0 {
                NoiseMode::Homoskedastic(opts.jitter_sd)
            } else {
                NoiseMode::ColumnMean
            },
            seed: opts.seed,
            solver: SolveOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                ..SolveOptions::default()
            },
            record_iterates: false,
        };
        let fitted = match ebm_tobit(&data, &cfg) {
            Ok(f) => f,
            Err(e) => return fail(EbtStatus::SolveFailed, &e.to_string()),
        };
        let model = Box::new(EbtModel {
            prior: fitted.final_prior,
            theta_hat: fitted.theta_hat,
        });
        unsafe { out_model.write(Box::into_raw(model)) };
        set_last_error("");
        EbtStatus::Ok
    })
}

/// Report the model's training-row count, column count, and atom count.
///
/// # Safety
/// `model` must come from [`ebt_fit`]; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ebt_model_sizes(
    model: *const EbtModel,
    out_rows: *mut usize,
    out_cols: *mut usize,
    out_atoms: *mut usize,
) -> EbtStatus {
    guarded(|| {
        if model.is_null() || out_rows.is_null() || out_cols.is_null() || out_atoms.is_null() {
            return fail(EbtStatus::NullPointer, "model and out pointers are required");
        }
        let m = unsafe { &*model };
        unsafe {
            out_rows.write(m.theta_hat.n_rows());
            out_cols.write(m.theta_hat.n_cols());
            out_atoms.write(m.prior.m());
        }
        set_last_error("");
        EbtStatus::Ok
    })
}

/// Copy a whole matrix into a row-major out buffer.
fn copy_out(mat: &Mat, out: *mut f64) -> EbtStatus {
    let src = mat.as_slice();
    unsafe { std::slice::from_raw_parts_mut(out, src.len()) }.copy_from_slice(src);
    set_last_error("");
    EbtStatus::Ok
}

/// Copy the averaged mean estimate of the training rows
/// (`n_rows x n_cols`, row-major) into `out`.
///
/// # Safety
/// `out` must hold `n_rows * n_cols` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ebt_model_estimate(model: *const EbtModel, out: *mut f64) -> EbtStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(EbtStatus::NullPointer, "model and out are required");
        }
        copy_out(&unsafe { &*model }.theta_hat, out)
    })
}

/// Copy the prior's support atoms (`n_atoms x n_cols`, row-major) into
/// `out`.
///
/// # Safety
/// `out` must hold `n_atoms * n_cols` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ebt_model_support(model: *const EbtModel, out: *mut f64) -> EbtStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(EbtStatus::NullPointer, "model and out are required");
        }
        copy_out(unsafe { &*model }.prior.support().points(), out)
    })
}

/// Copy the prior's atom weights (`n_atoms`) into `out`.
///
/// # Safety
/// `out` must hold `n_atoms` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ebt_model_weights(model: *const EbtModel, out: *mut f64) -> EbtStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(EbtStatus::NullPointer, "model and out are required");
        }
        let m = unsafe { &*model };
        unsafe { std::slice::from_raw_parts_mut(out, m.prior.m()) }
            .copy_from_slice(m.prior.weights());
        set_last_error("");
        EbtStatus::Ok
    })
}

/// Posterior mean and variance for new rows under the fitted prior.
///
/// `lower`/`upper` are row-major `n_rows x n_cols` buffers with the model's
/// column count; `sigma` follows the same convention as [`ebt_fit`]. Both
/// out buffers receive `n_rows x n_cols` doubles; either may be null to
/// skip that summary.
///
/// # Safety
/// All non-null pointers must be valid for their stated shapes.
#[no_mangle]
pub unsafe extern "C" fn ebt_impute(
    model: *const EbtModel,
    lower: *const f64,
    upper: *const f64,
    sigma: *const f64,
    n_rows: usize,
    default_sigma: f64,
    out_mean: *mut f64,
    out_variance: *mut f64,
) -> EbtStatus {
    guarded(|| {
        if model.is_null() || lower.is_null() || upper.is_null() {
            return fail(EbtStatus::NullPointer, "model, lower, and upper are required");
        }
        if out_mean.is_null() && out_variance.is_null() {
            return fail(EbtStatus::NullPointer, "at least one out buffer is required");
        }
        let m = unsafe { &*model };
        let n_cols = m.theta_hat.n_cols();
        let build = || -> Result<CensoredMatrix, String> {
            let l = unsafe { mat_from_raw(lower, n_rows, n_cols) }?;
            let u = unsafe { mat_from_raw(upper, n_rows, n_cols) }?;
            let s = if sigma.is_null() {
                Mat::filled(n_rows, n_cols, default_sigma)
            } else {
                unsafe { mat_from_raw(sigma, n_rows, n_cols) }?
            };
            CensoredMatrix::new(l, u, Some(s)).map_err(|e| e.to_string())
        };
        let data = match build() {
            Ok(d) => d,
            Err(e) => return fail(EbtStatus::InvalidInput, &e),
        };
        for i in 0..n_rows {
            let (l, u, s) = data.row_parts(i);
            let imputed = match impute_row(l, u, s, &m.prior) {
                Ok(imp) => imp,
                Err(e) => return fail(EbtStatus::SolveFailed, &format!("row {i}: {e}")),
            };
            if !out_mean.is_null() {
                unsafe { std::slice::from_raw_parts_mut(out_mean.add(i * n_cols), n_cols) }
                    .copy_from_slice(&imputed.mean);
            }
            if !out_variance.is_null() {
                unsafe { std::slice::from_raw_parts_mut(out_variance.add(i * n_cols), n_cols) }
                    .copy_from_slice(&imputed.variance);
            }
        }
        set_last_error("");
        EbtStatus::Ok
    })
}

/// Release a model. Null is accepted and ignored.
///
/// # Safety
/// `model` must be null or a pointer from [`ebt_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ebt_model_free(model: *mut EbtModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}
