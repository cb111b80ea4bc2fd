//! C ABI over the inflare library.
//!
//! Every fallible function returns an [`InflareStatus`]; on failure the
//! message is available from [`inflare_last_error`] on the same thread.
//! Schedules and models are opaque handles released with the matching
//! `*_free` function. Matrices are
//! row-major `rows x cols` arrays of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use inflare::datasets::{EigenFrame, PointCloud};
use inflare::denoiser::{train, TrainConfig, TrainedDenoiser};
use inflare::pfode::{
    integrate, Direction, Discretization, GridSpec, IntegrateOptions, NetworkScore, OracleGaussian, Solver,
};
use inflare::schedule::{participation_ratio, InflationSchedule};
use inflare::Error;
use ndarray::{ArrayView2, ArrayViewMut2};

pub const INFLARE_DIRECTION_INFLATE: i32 = 0;
pub const INFLARE_DIRECTION_GENERATE: i32 = 1;
pub const INFLARE_SOLVER_EULER: i32 = 0;
pub const INFLARE_SOLVER_HEUN: i32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InflareStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Io = 5,
    Checkpoint = 6,
    Panic = 7,
}

/// Opaque inflation schedule.
pub struct InflareSchedule(InflationSchedule);

/// Opaque trained denoiser.
pub struct InflareModel(TrainedDenoiser);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> InflareStatus {
    match e {
        Error::DimensionMismatch { .. } => InflareStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::Config(_) | Error::TimeOutOfRange { .. } => InflareStatus::InvalidArgument,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => InflareStatus::Io,
        Error::Checkpoint(_) => InflareStatus::Checkpoint,
        _ => InflareStatus::Numerical,
    }
}

struct Fail(InflareStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(InflareStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status and last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> InflareStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            InflareStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            InflareStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix<'a>(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<ArrayView2<'a, f64>, Fail> {
    let n = rows.checked_mul(cols).ok_or_else(|| Fail(InflareStatus::InvalidArgument, "matrix too large".into()))?;
    Ok(ArrayView2::from_shape((rows, cols), slice(p, n, what)?).expect("length matches shape"))
}

unsafe fn matrix_mut<'a>(p: *mut f64, rows: usize, cols: usize) -> Result<ArrayViewMut2<'a, f64>, Fail> {
    if p.is_null() {
        return Err(null("output buffer"));
    }
    let n = rows.checked_mul(cols).ok_or_else(|| Fail(InflareStatus::InvalidArgument, "matrix too large".into()))?;
    Ok(ArrayViewMut2::from_shape((rows, cols), std::slice::from_raw_parts_mut(p, n)).expect("length matches shape"))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn direction(code: i32) -> Result<Direction, Fail> {
    match code {
        INFLARE_DIRECTION_INFLATE => Ok(Direction::Inflate),
        INFLARE_DIRECTION_GENERATE => Ok(Direction::Generate),
        _ => Err(Fail(InflareStatus::InvalidArgument, format!("unknown direction code {code}"))),
    }
}

fn solver(code: i32) -> Result<Solver, Fail> {
    match code {
        INFLARE_SOLVER_EULER => Ok(Solver::Euler),
        INFLARE_SOLVER_HEUN => Ok(Solver::Heun),
        _ => Err(Fail(InflareStatus::InvalidArgument, format!("unknown solver code {code}"))),
    }
}

/// Message describing the most recent failure on this thread, or an empty
/// string after a success. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn inflare_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn inflare_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Participation ratio `(sum v)^2 / sum v^2` of `len` nonnegative values.
///
/// # Safety
/// `values` must point to `len` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn inflare_participation_ratio(values: *const f64, len: usize, out: *mut f64) -> InflareStatus {
    guard(|| {
        let v = slice(values, len, "values")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = participation_ratio(v)?;
        Ok(())
    })
}

/// PR-preserving schedule with equal rates in `d` dimensions.
///
/// # Safety
/// `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn inflare_schedule_prp(
    d: usize,
    rho: f64,
    t_max: f64,
    out: *mut *mut InflareSchedule,
) -> InflareStatus {
    guard(|| store(out, InflareSchedule(InflationSchedule::prp(d, rho, t_max)?)))
}

/// PR-reducing schedule with per-dimension rates `g[0..d]`.
///
/// # Safety
/// `g` must point to `d` doubles and `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn inflare_schedule_prr(
    g: *const f64,
    d: usize,
    rho: f64,
    t_max: f64,
    out: *mut *mut InflareSchedule,
) -> InflareStatus {
    guard(|| {
        let g = slice(g, d, "g")?.to_vec();
        store(out, InflareSchedule(InflationSchedule::prr(g, rho, t_max)?))
    })
}

/// # Safety
/// `s` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn inflare_schedule_free(s: *mut InflareSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Dimension of the schedule, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn inflare_schedule_dim(s: *const InflareSchedule) -> usize {
    s.as_ref().map_or(0, |s| s.0.dim())
}

/// Integration horizon, or NaN for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn inflare_schedule_t_max(s: *const InflareSchedule) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.0.t_max())
}

/// Noise variances `gamma(t)` into `out[0..len]`; `len` must equal the dimension.
///
/// # Safety
/// `s` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn inflare_schedule_gamma(
    s: *const InflareSchedule,
    t: f64,
    out: *mut f64,
    len: usize,
) -> InflareStatus {
    guard(|| {
        let s = handle(s, "schedule")?;
        let mut o = matrix_mut(out, 1, len)?;
        let g = s.0.gamma(t)?;
        if g.len() != len {
            return Err(Error::DimensionMismatch { expected: g.len(), got: len }.into());
        }
        o.row_mut(0).assign(&g);
        Ok(())
    })
}

/// Latent variances at `t_max` in whitened units into `out[0..len]`.
///
/// # Safety
/// `s` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn inflare_schedule_latent_cov(
    s: *const InflareSchedule,
    out: *mut f64,
    len: usize,
) -> InflareStatus {
    guard(|| {
        let s = handle(s, "schedule")?;
        let mut o = matrix_mut(out, 1, len)?;
        let c = s.0.latent_cov();
        if c.len() != len {
            return Err(Error::DimensionMismatch { expected: c.len(), got: len }.into());
        }
        o.row_mut(0).assign(&c);
        Ok(())
    })
}

fn run_flow(
    schedule: &InflationSchedule,
    source: &dyn inflare::pfode::ScoreSource,
    x: ArrayView2<f64>,
    dir: i32,
    solver_code: i32,
    step: f64,
    mut out: ArrayViewMut2<f64>,
) -> Result<(), Fail> {
    let disc = Discretization::new(GridSpec::Uniform { h: step }, schedule.t_max())?;
    let end =
        integrate(x, &disc, direction(dir)?, solver(solver_code)?, schedule, source, IntegrateOptions::default())?
            .into_last();
    out.assign(&end);
    Ok(())
}

/// Integrate `rows x cols` whitened points through the Gaussian oracle
/// field of `s` on a uniform grid with step `step`.
///
/// # Safety
/// `x` and `out` must each point to `rows * cols` doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn inflare_oracle_flow(
    s: *const InflareSchedule,
    x: *const f64,
    rows: usize,
    cols: usize,
    direction: i32,
    solver: i32,
    step: f64,
    out: *mut f64,
) -> InflareStatus {
    guard(|| {
        let s = &handle(s, "schedule")?.0;
        let input = matrix(x, rows, cols, "x")?.to_owned();
        run_flow(
            s,
            &OracleGaussian::new(s.clone()),
            input.view(),
            direction,
            solver,
            step,
            matrix_mut(out, rows, cols)?,
        )
    })
}

/// Load an IFLOW1 checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn inflare_model_load(path: *const c_char, out: *mut *mut InflareModel) -> InflareStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(InflareStatus::InvalidArgument, "path is not UTF-8".into()))?;
        store(out, InflareModel(TrainedDenoiser::load(path)?))
    })
}

/// Save a model as an IFLOW1 checkpoint.
///
/// # Safety
/// `m` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn inflare_model_save(m: *const InflareModel, path: *const c_char) -> InflareStatus {
    guard(|| {
        let m = handle(m, "model")?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(InflareStatus::InvalidArgument, "path is not UTF-8".into()))?;
        m.0.save(path)?;
        Ok(())
    })
}

/// Train a denoiser on whitened `rows x cols` data with default
/// hyperparameters except `steps`, `batch_size`, and `seed`.
///
/// # Safety
/// `data` must point to `rows * cols` doubles, `s` must be a live handle,
/// and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn inflare_model_train(
    data: *const f64,
    rows: usize,
    cols: usize,
    s: *const InflareSchedule,
    steps: usize,
    batch_size: usize,
    seed: u64,
    out: *mut *mut InflareModel,
) -> InflareStatus {
    guard(|| {
        let s = &handle(s, "schedule")?.0;
        let pc = PointCloud::new("ffi", matrix(data, rows, cols, "data")?.to_owned())?;
        let config = TrainConfig { steps, batch_size, seed, ..TrainConfig::default() };
        let model = train(&pc, &EigenFrame::identity(cols), s, &config)?;
        store(out, InflareModel(model))
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn inflare_model_free(m: *mut InflareModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Data dimension, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn inflare_model_dim(m: *const InflareModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.dim())
}

/// New schedule handle holding a copy of the model's schedule.
///
/// # Safety
/// `m` must be a live handle and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn inflare_model_schedule(
    m: *const InflareModel,
    out: *mut *mut InflareSchedule,
) -> InflareStatus {
    guard(|| store(out, InflareSchedule(handle(m, "model")?.0.schedule().clone())))
}

/// Denoiser output `D(x, t)` for whitened rows.
///
/// # Safety
/// `x` and `out` must each point to `rows * cols` doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn inflare_model_denoise(
    m: *const InflareModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    t: f64,
    out: *mut f64,
) -> InflareStatus {
    guard(|| {
        let m = &handle(m, "model")?.0;
        let y = m.denoise(matrix(x, rows, cols, "x")?, t)?;
        matrix_mut(out, rows, cols)?.assign(&y);
        Ok(())
    })
}

/// Integrate whitened rows through the model's flow on a uniform grid.
///
/// # Safety
/// `x` and `out` must each point to `rows * cols` doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn inflare_model_flow(
    m: *const InflareModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    direction: i32,
    solver: i32,
    step: f64,
    out: *mut f64,
) -> InflareStatus {
    guard(|| {
        let m = &handle(m, "model")?.0;
        let input = matrix(x, rows, cols, "x")?.to_owned();
        run_flow(
            m.schedule(),
            &NetworkScore::new(m),
            input.view(),
            direction,
            solver,
            step,
            matrix_mut(out, rows, cols)?,
        )
    })
}
