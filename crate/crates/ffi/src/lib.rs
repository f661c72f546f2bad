//! C interface to `mstcn`: load a checkpoint, score clips, generate a
//! synthetic dataset, and query the learning-rate schedule and receptive
//! field formulas.
//!
//! Every fallible function returns an [`MstcnStatus`]; on failure the
//! message is available from [`mstcn_last_error`] on the same thread.
//! Models are opaque handles released with [`mstcn_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mstcn::checkpoint;
use mstcn::config::RunConfig;
use mstcn::data::{collate, synth_generate, write_dataset, SequenceSample};
use mstcn::model::LipReader;
use mstcn::temporal::receptive_field_frames;
use mstcn::train::cosine_lr;
use mstcn::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MstcnStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// Bad argument or configuration.
    InvalidArgument = 2,
    /// File system failure.
    Io = 3,
    /// Malformed or incompatible file.
    Format = 4,
    /// Any other runtime failure.
    Runtime = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Trained classifier.
pub struct MstcnModel {
    inner: LipReader<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> MstcnStatus {
    match e {
        Error::Io { .. } | Error::Exists(_) => MstcnStatus::Io,
        Error::Format { .. } | Error::Incompatible(_) => MstcnStatus::Format,
        e if e.is_validation() => MstcnStatus::InvalidArgument,
        _ => MstcnStatus::Runtime,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (MstcnStatus, String)>) -> MstcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MstcnStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MstcnStatus::Panic
        }
    }
}

fn lift(e: Error) -> (MstcnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MstcnStatus, String) {
    (MstcnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MstcnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MstcnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn mstcn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mstcn_model_load(
    path: *const c_char,
    out: *mut *mut MstcnModel,
) -> MstcnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let (inner, _) = checkpoint::load(Path::new(path)).map_err(lift)?;
        *out = Box::into_raw(Box::new(MstcnModel { inner }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`mstcn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mstcn_model_free(model: *mut MstcnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mstcn_model_num_classes(model: *const MstcnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes())
}

/// Scores a batch of grayscale clips.
///
/// `frames` holds `batch x steps x height x width` values in `[0, 1]`,
/// already cropped to the model's input size. `lengths` (nullable) gives
/// the number of real frames per clip; frames past a clip's length are
/// ignored. `logits` receives `batch x num_classes` scores.
///
/// # Safety
/// All pointers must be valid for the sizes given.
#[no_mangle]
pub unsafe extern "C" fn mstcn_model_predict(
    model: *const MstcnModel,
    frames: *const f32,
    batch: usize,
    steps: usize,
    height: usize,
    width: usize,
    lengths: *const usize,
    logits: *mut f32,
) -> MstcnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if frames.is_null() {
            return Err(null("frames"));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        if batch == 0 || steps == 0 || height == 0 || width == 0 {
            return Err((
                MstcnStatus::InvalidArgument,
                "extents must be positive".into(),
            ));
        }
        let per = steps * height * width;
        let all = std::slice::from_raw_parts(frames, batch * per);
        let lens: Vec<usize> = if lengths.is_null() {
            vec![steps; batch]
        } else {
            std::slice::from_raw_parts(lengths, batch).to_vec()
        };
        let mut clips = Vec::with_capacity(batch);
        for (b, &len) in lens.iter().enumerate() {
            if len == 0 || len > steps {
                return Err((
                    MstcnStatus::InvalidArgument,
                    format!("clip {b}: length {len} outside 1..={steps}"),
                ));
            }
            let data = all[b * per..b * per + len * height * width].to_vec();
            clips.push(SequenceSample::new(data, len, height, width, 0, (0, len)).map_err(lift)?);
        }
        let batch_data = collate::<f32>(&clips, Some(steps)).map_err(lift)?;
        let out = model.inner.predict(&batch_data).map_err(lift)?;
        std::slice::from_raw_parts_mut(logits, out.numel()).copy_from_slice(out.data());
        Ok(())
    })
}

/// Writes a synthetic dataset to `out_dir`. `config_json` (nullable) is a
/// run configuration; its `data` section controls generation.
///
/// # Safety
/// String arguments must be NUL-terminated or null where allowed.
#[no_mangle]
pub unsafe extern "C" fn mstcn_generate_dataset(
    config_json: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    force: c_int,
) -> MstcnStatus {
    guard(|| {
        let dir = Path::new(str_arg(out_dir, "out_dir")?);
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_json(str_arg(config_json, "config_json")?).map_err(lift)?
        };
        cfg.data.validate().map_err(lift)?;
        let data = synth_generate(&cfg.data, seed).map_err(lift)?;
        std::fs::create_dir_all(dir)
            .map_err(|e| (MstcnStatus::Io, format!("{}: {e}", dir.display())))?;
        write_dataset(dir, &data, force != 0).map_err(lift)
    })
}

/// Cosine-annealed learning rate at progress `t` in `[0, 1]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mstcn_cosine_lr(
    t: f64,
    lr_max: f64,
    lr_min: f64,
    out: *mut f64,
) -> MstcnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = cosine_lr(t, lr_max, lr_min).map_err(lift)?;
        Ok(())
    })
}

/// Receptive field in frames of a single-branch stack of `blocks` blocks
/// with kernel size `kernel`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mstcn_receptive_field(
    kernel: usize,
    blocks: usize,
    out: *mut usize,
) -> MstcnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if kernel == 0 {
            return Err((
                MstcnStatus::InvalidArgument,
                "kernel must be positive".into(),
            ));
        }
        *out = receptive_field_frames(kernel, blocks);
        Ok(())
    })
}
