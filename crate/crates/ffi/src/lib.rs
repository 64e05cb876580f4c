//! C ABI over the `awgunet` library.
//!
//! Every function returns an [`AwguStatus`]; on failure a message is kept per
//! thread and read with [`awgu_last_error_message`]. Models are opaque
//! [`AwguModel`] handles released with [`awgu_model_free`]. Tensors are
//! contiguous `float` arrays in `(n, c, h, w)` row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use awgunet::metrics::{Confusion, Metrics};
use awgunet::model::{build_model, Checkpoint, ModelConfig, Network};
use awgunet::nn::{ParameterStore, Shape, Tensor};
use awgunet::wavelet::dwt_haar_forward;
use awgunet::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AwguStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Io = 5,
    Checkpoint = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque model handle: network structure plus parameters.
pub struct AwguModel {
    network: Network,
    params: ParameterStore<f32>,
}

/// The four overlap metrics, each in `[0, 1]`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AwguMetrics {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(AwguStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } | Error::OddDimension { .. } => AwguStatus::Shape,
            Error::InvalidArgument { .. } | Error::Dataset(_) => AwguStatus::InvalidArgument,
            Error::Config { .. } | Error::DuplicateParameter(_) => AwguStatus::Config,
            Error::Io { .. } | Error::Image { .. } => AwguStatus::Io,
            Error::Checkpoint(_) => AwguStatus::Checkpoint,
            Error::NonFinite { .. } | Error::MissingGradient(_) => AwguStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: AwguStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AwguStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AwguStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AwguStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(AwguStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(s, what)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(AwguStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn boxed(network: Network, params: ParameterStore<f32>, out: *mut *mut AwguModel) {
    let handle = Box::new(AwguModel { network, params });
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(handle) };
}

/// Builds a freshly initialised model from `key = value` config text. Keys
/// not given take the full-size (512x512) defaults.
///
/// # Safety
/// `config_text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn awgu_model_from_config(config_text: *const c_char, out: *mut *mut AwguModel) -> AwguStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = c_str(config_text, "config_text")?;
        let config = ModelConfig::from_text(text)?;
        let (network, params) = build_model::<f32>(&config)?;
        boxed(network, params, out);
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn awgu_model_load(path: *const c_char, out: *mut *mut AwguModel) -> AwguStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = c_str(path, "path")?;
        let (network, params) = Checkpoint::load(path)?.into_model()?;
        boxed(network, params, out);
        Ok(())
    })
}

/// Saves weights (without optimizer state) as a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn awgu_model_save(model: *const AwguModel, path: *const c_char) -> AwguStatus {
    guard(|| {
        non_null(model, "model")?;
        let path = c_str(path, "path")?;
        let m = &*model;
        Checkpoint::new(m.network.config().clone(), m.params.clone(), false).save(path)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn awgu_model_free(model: *mut AwguModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// Expected input channels, height and width.
///
/// # Safety
/// `model` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn awgu_model_input_size(
    model: *const AwguModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> AwguStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(channels, "channels")?;
        non_null(height, "height")?;
        non_null(width, "width")?;
        let cfg = (*model).network.config();
        *channels = cfg.input_channels;
        *height = cfg.input_size.0;
        *width = cfg.input_size.1;
        Ok(())
    })
}

/// Number of scalar parameters.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn awgu_model_param_count(model: *const AwguModel, out: *mut usize) -> AwguStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).params.param_count();
        Ok(())
    })
}

/// Foreground probabilities for `n` images of the model's input size.
/// `out_prob` receives `n * h * w` values.
///
/// # Safety
/// `image` must hold `n * c * h * w` floats and `out_prob` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn awgu_model_predict(
    model: *const AwguModel,
    image: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out_prob: *mut f32,
    out_len: usize,
) -> AwguStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(image, "image")?;
        non_null(out_prob, "out_prob")?;
        let shape = Shape::new(n, c, h, w);
        if out_len != n * h * w {
            return Err(fail(
                AwguStatus::InvalidArgument,
                format!("out_len {out_len}, expected {}", n * h * w),
            ));
        }
        let input = Tensor::new(shape, std::slice::from_raw_parts(image, shape.numel()).to_vec())?;
        let m = &*model;
        let prob = m.network.predict(&m.params, &input)?;
        ptr::copy_nonoverlapping(prob.data().as_ptr(), out_prob, out_len);
        Ok(())
    })
}

/// Metrics of one prediction against one binary target (`> 0.5` is
/// foreground); predictions `>= threshold` are foreground.
///
/// # Safety
/// `pred` and `target` must each hold `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn awgu_metrics_evaluate(
    pred: *const f32,
    target: *const f32,
    len: usize,
    threshold: f64,
    out: *mut AwguMetrics,
) -> AwguStatus {
    guard(|| {
        non_null(pred, "pred")?;
        non_null(target, "target")?;
        non_null(out, "out")?;
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(fail(AwguStatus::InvalidArgument, format!("threshold {threshold} outside (0, 1)")));
        }
        let p = std::slice::from_raw_parts(pred, len);
        let t = std::slice::from_raw_parts(target, len);
        let m = Metrics::from_confusion(&Confusion::count(p, t, threshold));
        *out = AwguMetrics {
            dice: m.dice,
            iou: m.iou,
            precision: m.precision,
            recall: m.recall,
        };
        Ok(())
    })
}

/// Orthonormal single-level Haar transform. Output is `(n, 4c, h/2, w/2)`
/// with subbands LL, LH, HL, HH each occupying `c` channels; `h` and `w`
/// must be even.
///
/// # Safety
/// `x` must hold `n * c * h * w` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn awgu_haar_forward(
    x: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out: *mut f32,
    out_len: usize,
) -> AwguStatus {
    guard(|| {
        non_null(x, "x")?;
        non_null(out, "out")?;
        let shape = Shape::new(n, c, h, w);
        if out_len != shape.numel() {
            return Err(fail(
                AwguStatus::InvalidArgument,
                format!("out_len {out_len}, expected {}", shape.numel()),
            ));
        }
        let input = Tensor::new(shape, std::slice::from_raw_parts(x, shape.numel()).to_vec())?;
        let d = dwt_haar_forward(&input)?;
        ptr::copy_nonoverlapping(d.tensor.data().as_ptr(), out, out_len);
        Ok(())
    })
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn awgu_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, e.g. `"0.1.0"`. Static storage.
#[no_mangle]
pub extern "C" fn awgu_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}
