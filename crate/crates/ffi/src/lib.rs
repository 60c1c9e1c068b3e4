//! C ABI over `pinn-balls`.
//!
//! Models are opaque `PbModel` handles. Every fallible call returns a
//! `PbStatus`; on failure `pb_last_error_message` describes the error for the
//! calling thread. Panics never cross the boundary and surface as
//! `PB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pinn_balls::cli::RunConfig;
use pinn_balls::ensemble::EnsembleModel;
use pinn_balls::trainer::{build_density, build_model, evaluate, load_checkpoint, save_checkpoint, train, Reference};
use pinn_balls::Error;

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    UncoveredPoint = 4,
    Io = 5,
    Checkpoint = 6,
    Config = 7,
    TrainingAborted = 8,
    Numerical = 9,
    Panic = 10,
}

/// Opaque trained or loaded model.
pub struct PbModel {
    inner: EnsembleModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PbStatus {
    match e {
        Error::DimensionMismatch { .. } => PbStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::KindMismatch(_) | Error::NotOnBoundary { .. } => PbStatus::InvalidArgument,
        Error::UncoveredPoint { .. } => PbStatus::UncoveredPoint,
        Error::Io(_) => PbStatus::Io,
        Error::Checkpoint(_) | Error::Csv(_) => PbStatus::Checkpoint,
        Error::Config { .. } => PbStatus::Config,
        Error::TrainingAborted { .. } => PbStatus::TrainingAborted,
        _ => PbStatus::Numerical,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (PbStatus, String)>) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            PbStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            PbStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (PbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PbStatus, String) {
    (PbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(model: *const PbModel) -> Result<&'a EnsembleModel, (PbStatus, String)> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (PbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PbStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn box_model(out: *mut *mut PbModel, model: EnsembleModel) {
    // SAFETY: callers check `out` for null before producing the model.
    unsafe { *out = Box::into_raw(Box::new(PbModel { inner: model })) };
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len` bytes) and returns the full message length without the
/// terminator. Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn pb_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint written by `pb_model_save` or the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pb_model_load(path: *const c_char, out: *mut *mut PbModel) -> PbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        box_model(out, load_checkpoint(&path).map_err(lib_err)?);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pb_model_save(model: *const PbModel, path: *const c_char) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(path, "path")?;
        save_checkpoint(m, &path).map_err(lib_err)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pb_model_free(model: *mut PbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Spatial dimension of the inputs, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_model_input_dim(model: *const PbModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.mlp.input_dim)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_model_output_dim(model: *const PbModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.mlp.output_dim)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_model_num_params(model: *const PbModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_params())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_model_num_balls(model: *const PbModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_balls())
}

/// Evaluates the model at `n_points` row-major points of `input_dim`
/// coordinates, writing `n_points × output_dim` values to `out`.
///
/// # Safety
/// `points` and `out` must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pb_model_predict(
    model: *const PbModel,
    points: *const f64,
    n_points: usize,
    out: *mut f64,
) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        if n_points == 0 {
            return Ok(());
        }
        if points.is_null() || out.is_null() {
            return Err(null("points or out"));
        }
        let (d, o) = (m.mlp.input_dim, m.mlp.output_dim);
        let xs = std::slice::from_raw_parts(points, n_points * d);
        let ys = std::slice::from_raw_parts_mut(out, n_points * o);
        for (x, y) in xs.chunks_exact(d).zip(ys.chunks_exact_mut(o)) {
            y.copy_from_slice(&m.predict(x).map_err(lib_err)?);
        }
        Ok(())
    })
}

/// Value, gradient and Hessian at one point. Buffers hold `output_dim`,
/// `output_dim × input_dim` and `output_dim × input_dim²` doubles, row-major.
/// `grad` and `hess` may be null when not needed.
///
/// # Safety
/// Non-null buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pb_model_predict_bundle(
    model: *const PbModel,
    x: *const f64,
    value: *mut f64,
    grad: *mut f64,
    hess: *mut f64,
) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        if x.is_null() || value.is_null() {
            return Err(null("x or value"));
        }
        let x = std::slice::from_raw_parts(x, m.mlp.input_dim);
        let b = m.predict_bundle(x).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(value, b.value.len()).copy_from_slice(&b.value);
        if !grad.is_null() {
            std::slice::from_raw_parts_mut(grad, b.grad.len()).copy_from_slice(&b.grad);
        }
        if !hess.is_null() {
            std::slice::from_raw_parts_mut(hess, b.hess.len()).copy_from_slice(&b.hess);
        }
        Ok(())
    })
}

/// Gate weights of every ball at `x`, zero where a ball is inactive.
///
/// # Safety
/// `x` holds `input_dim` doubles and `lambda` has room for `num_balls`.
#[no_mangle]
pub unsafe extern "C" fn pb_model_gate(model: *const PbModel, x: *const f64, lambda: *mut f64) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        if x.is_null() || lambda.is_null() {
            return Err(null("x or lambda"));
        }
        let x = std::slice::from_raw_parts(x, m.mlp.input_dim);
        let out = std::slice::from_raw_parts_mut(lambda, m.n_balls());
        out.fill(0.0);
        let (active, lam) = m.partition.gate_values(x).map_err(lib_err)?;
        for (j, l) in active.into_iter().zip(lam) {
            out[j] = l;
        }
        Ok(())
    })
}

/// `‖pred − reference‖₂ / ‖reference‖₂` over `n` values.
///
/// # Safety
/// Both arrays hold `n` doubles; `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pb_relative_l2(pred: *const f64, reference: *const f64, n: usize, out: *mut f64) -> PbStatus {
    guard(|| {
        if pred.is_null() || reference.is_null() || out.is_null() {
            return Err(null("pred, reference or out"));
        }
        let p = std::slice::from_raw_parts(pred, n);
        let r = std::slice::from_raw_parts(reference, n);
        *out = pinn_balls::pde::relative_l2(p, r).map_err(lib_err)?;
        Ok(())
    })
}

/// Trains a model from configuration text in the `key = value` format of the
/// CLI. On success `*out` receives the model and, when `rel_l2` is non-null,
/// the final relative L2 error on the evaluation grid.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` valid for a write;
/// `rel_l2` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pb_train(config: *const c_char, out: *mut *mut PbModel, rel_l2: *mut f64) -> PbStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return Err(null("config or out"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|_| (PbStatus::InvalidArgument, "config is not valid UTF-8".to_string()))?;
        let cfg = RunConfig::parse(text).map_err(lib_err)?;
        let problem = cfg.problem_spec().map_err(lib_err)?;
        let mlp = cfg.mlp_spec().map_err(lib_err)?;
        let mut model =
            build_model(&problem, cfg.n_balls, mlp, cfg.coverage_factor, cfg.train.seed).map_err(lib_err)?;
        let mut density = build_density(&problem, &model, &cfg.train).map_err(lib_err)?;
        let (points, values) = problem.reference_grid(cfg.eval_grid).map_err(lib_err)?;
        let reference = Reference { points, values };
        train(&problem, &mut model, &mut density, &cfg.train, Some(&reference)).map_err(lib_err)?;
        if !rel_l2.is_null() {
            *rel_l2 = evaluate(&model, &reference).map_err(lib_err)?.0;
        }
        box_model(out, model);
        Ok(())
    })
}
