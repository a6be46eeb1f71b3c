//! C ABI for the local-style pipeline.
//!
//! Images, masks and configurations cross the boundary as opaque handles that
//! the caller frees with the matching `ls_*_free`. Every function returns an
//! [`LsStatus`]; on failure [`ls_last_error_message`] describes the error for
//! the calling thread. Panics are caught and reported as `LS_STATUS_PANIC`.
//!
//! Image pixels are planar RGB `f32` in `[0, 1]`, laid out `3 x height x width`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use local_style::cli::{build_encoders, build_segmenter, CliError};
use local_style::config::{read_pairs, RunConfig};
use local_style::engine::stylize_multi;
use local_style::eval::masked_clip_score;
use local_style::grounding::{
    parse_vlm_response, BackendGrounder, FixtureVlm, Grounder, HttpVlm, MaskGrounder, StyleDirective,
    VlmBackend,
};
use local_style::imaging::{load_image, load_mask, save_image, BinaryMask, ImageTensor};
use local_style::Error;

/// Result code of every `ls_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Parse = 4,
    Grounding = 5,
    Optimization = 6,
    Config = 7,
    Backend = 8,
    Panic = 9,
}

/// Opaque RGB image.
pub struct LsImage(ImageTensor);

/// Opaque binary mask.
pub struct LsMask(BinaryMask);

/// Opaque run configuration.
pub struct LsConfig(RunConfig);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> LsStatus {
    if e.is_parse_failure() {
        return LsStatus::Parse;
    }
    match e {
        Error::Grounding { .. } => LsStatus::Grounding,
        Error::Region { source, .. } => match status_of(source) {
            LsStatus::InvalidInput | LsStatus::Config | LsStatus::Io => LsStatus::Grounding,
            s => s,
        },
        Error::InvalidInput(_) | Error::EmptyRegion(_) | Error::DegenerateStyle(_) => LsStatus::InvalidInput,
        Error::Decode { .. } | Error::Io { .. } => LsStatus::Io,
        Error::Parse { .. } => LsStatus::Parse,
        Error::Backend(_) => LsStatus::Backend,
        Error::Divergence { .. } | Error::Tensor(_) => LsStatus::Optimization,
        Error::Config(_) | Error::Json(_) => LsStatus::Config,
        Error::RunFailed { .. } => LsStatus::Optimization,
    }
}

struct Failure(LsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Usage(m) => Failure(LsStatus::Config, m),
            CliError::Pipeline(e) => e.into(),
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(LsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            LsStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn string_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(LsStatus::InvalidInput, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is null or a valid, live handle.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller provides writable storage.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next `ls_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `3 * height * width` planar floats into a new image.
///
/// # Safety
/// `data` points to `3 * height * width` readable floats; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ls_image_new(
    height: usize,
    width: usize,
    data: *const f32,
    out: *mut *mut LsImage,
) -> LsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = 3usize
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Failure(LsStatus::InvalidInput, "image size overflows".into()))?;
        let pixels = std::slice::from_raw_parts(data, len).to_vec();
        out_ptr(out, LsImage(ImageTensor::new(height, width, pixels)?))
    })
}

/// Loads and resizes an image to `resolution x resolution`.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ls_image_load(path: *const c_char, resolution: usize, out: *mut *mut LsImage) -> LsStatus {
    guard(|| {
        let path = string_arg(path, "path")?;
        out_ptr(out, LsImage(load_image(path, resolution)?))
    })
}

/// # Safety
/// `img` is a live image handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ls_image_save(img: *const LsImage, path: *const c_char) -> LsStatus {
    guard(|| {
        let img = handle(img, "image")?;
        let path = string_arg(path, "path")?;
        Ok(save_image(&img.0, path)?)
    })
}

/// # Safety
/// `img` is null or a live image handle.
#[no_mangle]
pub unsafe extern "C" fn ls_image_height(img: *const LsImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `img` is null or a live image handle.
#[no_mangle]
pub unsafe extern "C" fn ls_image_width(img: *const LsImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// Copies the pixels into `out`, which must hold exactly `3 * height * width` floats.
///
/// # Safety
/// `img` is a live image handle; `out` points to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ls_image_copy_data(img: *const LsImage, out: *mut f32, len: usize) -> LsStatus {
    guard(|| {
        let img = handle(img, "image")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let data = img.0.data();
        if len != data.len() {
            return Err(Failure(
                LsStatus::InvalidInput,
                format!("buffer holds {len} floats, image has {}", data.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(data);
        Ok(())
    })
}

/// # Safety
/// `img` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_image_free(img: *mut LsImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Mask from `height * width` bytes, nonzero meaning inside.
///
/// # Safety
/// `data` points to `height * width` readable bytes; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ls_mask_new(height: usize, width: usize, data: *const u8, out: *mut *mut LsMask) -> LsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = height
            .checked_mul(width)
            .ok_or_else(|| Failure(LsStatus::InvalidInput, "mask size overflows".into()))?;
        let bits = std::slice::from_raw_parts(data, len).iter().map(|&b| (b != 0) as u8).collect();
        out_ptr(out, LsMask(BinaryMask::new(height, width, bits)?))
    })
}

/// Loads a mask image resized to `height x width`.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ls_mask_load(
    path: *const c_char,
    height: usize,
    width: usize,
    out: *mut *mut LsMask,
) -> LsStatus {
    guard(|| {
        let path = string_arg(path, "path")?;
        out_ptr(out, LsMask(load_mask(path, height, width)?))
    })
}

/// Number of foreground pixels.
///
/// # Safety
/// `mask` is null or a live mask handle.
#[no_mangle]
pub unsafe extern "C" fn ls_mask_count(mask: *const LsMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count())
}

/// # Safety
/// `mask` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_mask_free(mask: *mut LsMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Default configuration with endpoint defaults from the environment.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ls_config_new(out: *mut *mut LsConfig) -> LsStatus {
    guard(|| {
        let mut cfg = RunConfig::default();
        cfg.apply_env(|k| std::env::var(k).ok());
        out_ptr(out, LsConfig(cfg))
    })
}

/// Sets one configuration key, using the same names as the config file.
///
/// # Safety
/// `cfg` is a live handle; `key` and `value` are NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ls_config_set(cfg: *mut LsConfig, key: *const c_char, value: *const c_char) -> LsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        let key = string_arg(key, "key")?;
        let value = string_arg(value, "value")?;
        Ok(cfg.0.set(&key, &value)?)
    })
}

/// Applies a `key = value` file on top of the current values.
///
/// # Safety
/// `cfg` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ls_config_load_file(cfg: *mut LsConfig, path: *const c_char) -> LsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        let path = string_arg(path, "path")?;
        let pairs = read_pairs(path)?;
        Ok(cfg.0.apply(&pairs)?)
    })
}

/// # Safety
/// `cfg` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_config_free(cfg: *mut LsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

fn vlm_for(cfg: &RunConfig, fixture: Option<String>) -> Result<Option<Arc<dyn VlmBackend>>, Failure> {
    if let Some(path) = fixture {
        return Ok(Some(Arc::new(FixtureVlm::from_jsonl(PathBuf::from(path))?)));
    }
    Ok(cfg.vlm_endpoint.as_ref().map(|e| {
        Arc::new(HttpVlm::new(e.clone(), std::time::Duration::from_secs(cfg.timeout_secs))) as Arc<dyn VlmBackend>
    }))
}

/// Stylizes the region named by `prompt`.
///
/// With a `mask`, grounding's box and segmentation stages are skipped. The
/// VLM comes from `fixture_jsonl` when non-null, else from the configured
/// endpoint. `content` must match the configured resolution. Loss outputs
/// may be null.
///
/// # Safety
/// Handles are live or null where allowed; strings are NUL-terminated;
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ls_stylize(
    content: *const LsImage,
    prompt: *const c_char,
    mask: *const LsMask,
    cfg: *const LsConfig,
    fixture_jsonl: *const c_char,
    out: *mut *mut LsImage,
    initial_loss: *mut f64,
    final_loss: *mut f64,
) -> LsStatus {
    guard(|| {
        let content = handle(content, "content")?;
        let cfg = &handle(cfg, "config")?.0;
        let prompt = string_arg(prompt, "prompt")?;
        let fixture = (!fixture_jsonl.is_null())
            .then(|| string_arg(fixture_jsonl, "fixture"))
            .transpose()?;
        let directive = StyleDirective::new(prompt)?;
        let vlm = vlm_for(cfg, fixture)?;
        let grounder: Box<dyn Grounder> = match mask.as_ref() {
            Some(m) => Box::new(MaskGrounder {
                vlm,
                mask: m.0.clone(),
                format: cfg.box_format,
            }),
            None => Box::new(BackendGrounder {
                vlm: vlm.ok_or_else(|| Failure(LsStatus::Config, "no VLM backend configured".into()))?,
                seg: build_segmenter(cfg)?,
                format: cfg.box_format,
            }),
        };
        let enc = build_encoders(cfg)?;
        let result = stylize_multi(&content.0, &[directive], grounder.as_ref(), &cfg.engine, &enc)?;
        let region = &result.regions[0];
        if let Some(p) = initial_loss.as_mut() {
            *p = region.initial_loss.total;
        }
        if let Some(p) = final_loss.as_mut() {
            *p = region.final_loss.total;
        }
        out_ptr(out, LsImage(result.image))
    })
}

/// Masked-crop score of `image` against `style` with the offline encoders.
///
/// # Safety
/// Handles are live; `style` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ls_masked_clip_score(
    image: *const LsImage,
    mask: *const LsMask,
    style: *const c_char,
    cfg: *const LsConfig,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let image = handle(image, "image")?;
        let mask = handle(mask, "mask")?;
        let cfg = &handle(cfg, "config")?.0;
        let style = string_arg(style, "style")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = masked_clip_score(&image.0, &mask.0, &style, &build_encoders(cfg)?)?;
        Ok(())
    })
}

/// Parses a VLM reply into a normalized `x0, y0, x1, y1` box and a style
/// phrase. Free the phrase with [`ls_string_free`].
///
/// # Safety
/// `text` is NUL-terminated; `out_box` holds 4 writable doubles; `out_style` is writable.
#[no_mangle]
pub unsafe extern "C" fn ls_parse_vlm_response(
    text: *const c_char,
    out_box: *mut f64,
    out_style: *mut *mut c_char,
) -> LsStatus {
    guard(|| {
        let text = string_arg(text, "text")?;
        if out_box.is_null() || out_style.is_null() {
            return Err(null("output pointer"));
        }
        let r = parse_vlm_response(&text)?;
        let b = r.parsed_box;
        std::slice::from_raw_parts_mut(out_box, 4).copy_from_slice(&[b.x0, b.y0, b.x1, b.y1]);
        let style = CString::new(r.parsed_style)
            .map_err(|_| Failure(LsStatus::Parse, "style phrase contains NUL".into()))?;
        *out_style = style.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
