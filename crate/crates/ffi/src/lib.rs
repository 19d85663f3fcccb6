//! C ABI over the `leanstereo` crate.
//!
//! Models are opaque [`LsModel`] handles. Every function returns an
//! [`LsStatus`]; on failure [`ls_last_error_message`] describes the error on
//! the calling thread. Images are planar `[3, H, W]` `f32` in [0, 1];
//! disparity maps are row-major `[H, W]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use leanstereo::checkpoint::Checkpoint;
use leanstereo::config::RunConfig;
use leanstereo::data::{
    generate_synthetic_pair, read_pfm_disparity, write_pfm_disparity, StereoSample, SynthParams,
};
use leanstereo::evaluate::predict_sample;
use leanstereo::head::Mode;
use leanstereo::losses::validity_mask;
use leanstereo::metrics::MetricsAccumulator;
use leanstereo::{Error, LeanStereo, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Io = 5,
    Format = 6,
    Dataset = 7,
    Checkpoint = 8,
    Device = 9,
    EmptyMask = 10,
    Contract = 11,
    Panic = 12,
}

/// Opaque network handle.
pub struct LsModel {
    model: LeanStereo,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LsMetrics {
    pub epe: f64,
    pub d1: f64,
    pub px3: f64,
    pub px2: f64,
    pub px1: f64,
    pub valid_count: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(e: &Error) -> LsStatus {
    match e {
        Error::Shape(_) => LsStatus::Shape,
        Error::Contract(_) => LsStatus::Contract,
        Error::Config(_) => LsStatus::Config,
        Error::EmptyMask(_) => LsStatus::EmptyMask,
        Error::Parse { .. } | Error::Format { .. } | Error::Image(_) => LsStatus::Format,
        Error::Dataset(_) => LsStatus::Dataset,
        Error::Checkpoint(_) => LsStatus::Checkpoint,
        Error::Device(_) => LsStatus::Device,
        Error::Io { .. } => LsStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LsStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {}", what));
            LsStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            LsStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {}", msg));
            LsStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{} is not valid UTF-8", what)))
}

unsafe fn model_ref<'a>(m: *const LsModel) -> Result<&'a LsModel, Failure> {
    m.as_ref().ok_or(Failure::Null("model"))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(v);
    Ok(())
}

fn area(h: u32, w: u32) -> Result<usize, Failure> {
    if h == 0 || w == 0 {
        return Err(Failure::Arg(format!("empty image size {}x{}", h, w)));
    }
    (h as usize)
        .checked_mul(w as usize)
        .ok_or_else(|| Failure::Arg("image size overflows".into()))
}

/// Copy of the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ls_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// New randomly initialized network from a preset (`default`, `desk`, `kitti`).
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_new(
    preset: *const c_char,
    seed: u64,
    out: *mut *mut LsModel,
) -> LsStatus {
    guard(|| {
        let name = c_str(preset, "preset")?;
        let cfg = RunConfig::preset(name)?;
        let model = LeanStereo::new(&cfg.model, seed)?;
        write_out(out, Box::into_raw(Box::new(LsModel { model })), "out")
    })
}

/// Network restored from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_load(path: *const c_char, out: *mut *mut LsModel) -> LsStatus {
    guard(|| {
        let path = PathBuf::from(c_str(path, "path")?);
        let model = Checkpoint::load(&path)?.into_model()?;
        write_out(out, Box::into_raw(Box::new(LsModel { model })), "out")
    })
}

/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ls_model_save(model: *const LsModel, path: *const c_char) -> LsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = PathBuf::from(c_str(path, "path")?);
        Checkpoint::from_model(&m.model, 0).save(path)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_model_free(model: *mut LsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_param_count(model: *const LsModel, out: *mut u64) -> LsStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_out(out, m.model.param_count() as u64, "out")
    })
}

/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_max_disparity(model: *const LsModel, out: *mut u32) -> LsStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_out(out, m.model.max_disparity() as u32, "out")
    })
}

/// Inference MACs for one `height x width` pair (multiples of 32).
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_macs(
    model: *const LsModel,
    height: u32,
    width: u32,
    out: *mut u64,
) -> LsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let report = m
            .model
            .profile((height as usize, width as usize), Mode::Eval, 1)?;
        write_out(out, report.total_macs, "out")
    })
}

/// Disparity of the left view, any size; written to `disparity[H*W]`.
///
/// # Safety
/// `left` and `right` must hold `3*H*W` floats, `disparity` `H*W`.
#[no_mangle]
pub unsafe extern "C" fn ls_model_infer(
    model: *const LsModel,
    left: *const f32,
    right: *const f32,
    height: u32,
    width: u32,
    disparity: *mut f32,
) -> LsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let n = area(height, width)?;
        let (h, w) = (height as usize, width as usize);
        let l = Tensor::from_vec(&[3, h, w], input(left, 3 * n, "left")?.to_vec())?;
        let r = Tensor::from_vec(&[3, h, w], input(right, 3 * n, "right")?.to_vec())?;
        let sample = StereoSample {
            left: l,
            right: r,
            gt: Tensor::zeros(&[h, w]),
            valid: vec![false; n],
        };
        let pred = predict_sample(&m.model, &sample)?;
        output(disparity, n, "disparity")?.copy_from_slice(pred.data());
        Ok(())
    })
}

/// Metrics over pixels that are valid (`valid` may be null for all) and
/// have ground truth in `(0, max_disparity)`.
///
/// # Safety
/// `pred` and `gt` must hold `H*W` floats; `valid` null or `H*W` bytes.
#[no_mangle]
pub unsafe extern "C" fn ls_metrics(
    pred: *const f32,
    gt: *const f32,
    valid: *const u8,
    height: u32,
    width: u32,
    max_disparity: f32,
    out: *mut LsMetrics,
) -> LsStatus {
    guard(|| {
        let n = area(height, width)?;
        let shape = [height as usize, width as usize];
        let p = Tensor::from_vec(&shape, input(pred, n, "pred")?.to_vec())?;
        let g = Tensor::from_vec(&shape, input(gt, n, "gt")?.to_vec())?;
        let mut mask = validity_mask(&g, max_disparity);
        if !valid.is_null() {
            for (m, &v) in mask.iter_mut().zip(slice::from_raw_parts(valid, n)) {
                *m &= v != 0;
            }
        }
        let mut acc = MetricsAccumulator::default();
        acc.add(&p, &g, &mask)?;
        let r = acc.report()?;
        write_out(
            out,
            LsMetrics {
                epe: r.epe,
                d1: r.d1,
                px3: r.px3,
                px2: r.px2,
                px1: r.px1,
                valid_count: r.valid_count,
            },
            "out",
        )
    })
}

/// Read a single-channel PFM. The buffer of `H*W` floats is owned by the
/// caller and released with [`ls_buffer_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn ls_pfm_read(
    path: *const c_char,
    data: *mut *mut f32,
    height: *mut u32,
    width: *mut u32,
) -> LsStatus {
    guard(|| {
        let path = PathBuf::from(c_str(path, "path")?);
        if data.is_null() || height.is_null() || width.is_null() {
            return Err(Failure::Null("out"));
        }
        let d = read_pfm_disparity(&path)?;
        let (h, w) = (d.dim(0) as u32, d.dim(1) as u32);
        let buf = Box::into_raw(d.into_data().into_boxed_slice()) as *mut f32;
        data.write(buf);
        height.write(h);
        width.write(w);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `data` must hold `H*W` floats.
#[no_mangle]
pub unsafe extern "C" fn ls_pfm_write(
    path: *const c_char,
    data: *const f32,
    height: u32,
    width: u32,
) -> LsStatus {
    guard(|| {
        let path = PathBuf::from(c_str(path, "path")?);
        let n = area(height, width)?;
        let d = Tensor::from_vec(
            &[height as usize, width as usize],
            input(data, n, "data")?.to_vec(),
        )?;
        write_pfm_disparity(&path, &d)?;
        Ok(())
    })
}

/// Release a buffer returned by this library; `len` is its element count.
///
/// # Safety
/// `data` must be null or a buffer from this library of exactly `len` floats.
#[no_mangle]
pub unsafe extern "C" fn ls_buffer_free(data: *mut f32, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}

/// One synthetic pair into caller buffers: `left`/`right` `3*H*W`, `gt`
/// and `valid` `H*W`.
///
/// # Safety
/// All output pointers must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn ls_synth_generate(
    seed: u64,
    height: u32,
    width: u32,
    num_shapes: u32,
    d_min: u32,
    d_max: u32,
    left: *mut f32,
    right: *mut f32,
    gt: *mut f32,
    valid: *mut u8,
) -> LsStatus {
    guard(|| {
        let n = area(height, width)?;
        let p = SynthParams {
            height: height as usize,
            width: width as usize,
            num_shapes: num_shapes as usize,
            d_range: (d_min, d_max),
        };
        let s = generate_synthetic_pair(seed, &p)?;
        output(left, 3 * n, "left")?.copy_from_slice(s.left.data());
        output(right, 3 * n, "right")?.copy_from_slice(s.right.data());
        output(gt, n, "gt")?.copy_from_slice(s.gt.data());
        for (o, &v) in output(valid, n, "valid")?.iter_mut().zip(&s.valid) {
            *o = v as u8;
        }
        Ok(())
    })
}
