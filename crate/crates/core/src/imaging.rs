//! Image, mask and box primitives.
//!
//! Images are planar RGB (`CHW`) `f32` buffers with values in `[0, 1]`.
//! Masks are strictly binary. Boxes use the half-open `[x0, x1) x [y0, y1)`
//! convention so a box's width is `x1 - x0`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{GrayImage, ImageReader, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::resample;

pub const CHANNELS: usize = 3;

/// Planar RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image from planar `CHW` data.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "image must have non-zero area, got {width}x{height}"
            )));
        }
        if data.len() != CHANNELS * height * width {
            return Err(Error::InvalidInput(format!(
                "expected {} values for a {width}x{height} RGB image, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidInput(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(height, width, |c, _, _| rgb[c])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape<T: Shape2>(&self, other: &T) -> bool {
        self.height == other.height() && self.width == other.width()
    }

    /// `(1, 3, H, W)` tensor in the requested dtype.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> candle_core::Result<Tensor> {
        Tensor::from_slice(&self.data, (1, CHANNELS, self.height, self.width), device)?
            .to_dtype(dtype)
    }

    /// Reads back a `(1, 3, H, W)` or `(3, H, W)` tensor, clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 => t.squeeze(0)?,
            _ => t.clone(),
        };
        let (c, h, w) = t.dims3()?;
        if c != CHANNELS {
            return Err(Error::InvalidInput(format!("expected 3 channels, got {c}")));
        }
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pixel value".into()));
        }
        Self::new(h, w, data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Largest absolute per-channel difference over pixels where `mask == value`.
    pub fn max_abs_diff_where(&self, other: &ImageTensor, mask: &BinaryMask, value: bool) -> f32 {
        assert!(self.same_shape(other) && self.same_shape(mask));
        let n = self.height * self.width;
        let mut worst = 0f32;
        for c in 0..CHANNELS {
            for i in 0..n {
                if mask.data[i] == value as u8 {
                    worst = worst.max((self.data[c * n + i] - other.data[c * n + i]).abs());
                }
            }
        }
        worst
    }
}

/// Anything with a pixel grid.
pub trait Shape2 {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
}

impl Shape2 for ImageTensor {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
}

impl Shape2 for BinaryMask {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
}

/// Strictly binary region mask, row-major, 1 = foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "mask buffer of length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self::new(height, width, data)
    }

    /// Binarizes soft values with `v >= threshold` as foreground.
    pub fn from_soft(height: usize, width: usize, values: &[f32], threshold: f32) -> Result<Self> {
        Self::new(
            height,
            width,
            values.iter().map(|&v| (v >= threshold) as u8).collect(),
        )
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![1; height * width])
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn from_box(height: usize, width: usize, b: &BoundingBox) -> Result<Self> {
        Self::from_fn(height, width, |y, x| b.contains(x, y))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn union(&self, other: &BinaryMask) -> Result<Self> {
        check_shape(self, other, "mask union")?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect(),
        })
    }

    /// `(1, 1, H, W)` tensor of 0/1 values.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> candle_core::Result<Tensor> {
        let v: Vec<f32> = self.data.iter().map(|&b| b as f32).collect();
        Tensor::from_vec(v, (1, 1, self.height, self.width), device)?.to_dtype(dtype)
    }

    /// Hex SHA-256 of the row-major 0/1 bytes prefixed by the dimensions.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update(&self.data);
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Pixel box, half-open on both axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidInput(format!(
                "degenerate box [{x0},{x1})x[{y0},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Box in `[0, 1]` image-relative coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl NormalizedBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![x0, y0, x1, y1].into_iter().all(in_unit) {
            return Err(Error::InvalidInput(format!(
                "normalized box ({x0}, {y0}, {x1}, {y1}) leaves [0, 1]"
            )));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidInput(format!(
                "degenerate normalized box ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }
}

fn check_shape<A: Shape2, B: Shape2>(a: &A, b: &B, what: &str) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::InvalidInput(format!(
            "{what}: shape mismatch {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Decodes an RGB raster and bilinearly resizes it to `target x target`.
/// Aspect ratio is not preserved.
pub fn load_image(path: impl AsRef<Path>, target_resolution: usize) -> Result<ImageTensor> {
    let rgb = decode_rgb(path.as_ref())?;
    from_rgb8(&rgb, target_resolution)
}

/// Decodes at native resolution.
pub fn load_image_native(path: impl AsRef<Path>) -> Result<ImageTensor> {
    raw_rgb(&decode_rgb(path.as_ref())?)
}

fn decode_rgb(path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

fn raw_rgb(rgb: &RgbImage) -> Result<ImageTensor> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("image has zero area".into()));
    }
    let n = w * h;
    let mut data = vec![0f32; CHANNELS * n];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..CHANNELS {
            data[c * n + i] = px.0[c] as f32 / 255.0;
        }
    }
    ImageTensor::new(h, w, data)
}

/// 8-bit RGB raster to an image, resized to `target x target` when `target > 0`.
pub fn from_rgb8(rgb: &RgbImage, target: usize) -> Result<ImageTensor> {
    let raw = raw_rgb(rgb)?;
    if target == 0 {
        return Ok(raw);
    }
    resize(&raw, target, target)
}

/// Bilinear resize to `out_h x out_w`.
pub fn resize(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidInput("resize target has zero area".into()));
    }
    let mut data = Vec::with_capacity(CHANNELS * out_h * out_w);
    for c in 0..CHANNELS {
        data.extend(resample::resize_plane(
            img.plane(c),
            img.height,
            img.width,
            out_h,
            out_w,
        ));
    }
    ImageTensor::new(out_h, out_w, data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Quantizes with `round(v * 255)` (half up) after clamping into `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn to_rgb8(img: &ImageTensor) -> RgbImage {
    RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            quantize(img.get(0, y, x)),
            quantize(img.get(1, y, x)),
            quantize(img.get(2, y, x)),
        ])
    })
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_rgb8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| write_error(path, e))
}

fn write_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    }
}

/// PNG bytes of the 8-bit quantized image.
pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    to_rgb8(img)
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::InvalidInput(format!("png encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

/// Decodes PNG/JPEG bytes at native resolution.
pub fn decode_image_bytes(bytes: &[u8]) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    raw_rgb(&img.to_rgb8())
}

/// Loads an 8-bit mask (foreground where the gray value is `>= 128`), resampled to
/// `height x width` if needed.
pub fn load_mask(path: impl AsRef<Path>, height: usize, width: usize) -> Result<BinaryMask> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    let gray = reader
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("mask has zero area".into()));
    }
    let bits: Vec<f32> = gray.pixels().map(|p| (p.0[0] >= 128) as u8 as f32).collect();
    let values = resample::resize_plane(&bits, h, w, height, width);
    BinaryMask::from_soft(height, width, &values, 0.5)
}

/// Writes the mask as an 8-bit gray PNG, 255 for foreground.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    })
    .save_with_format(path, image::ImageFormat::Png)
    .map_err(|e| write_error(path, e))
}

/// Hadamard product with the mask broadcast over channels.
pub fn apply_mask(img: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    check_shape(img, mask, "apply_mask")?;
    let n = img.height * img.width;
    let mut data = img.data.clone();
    for c in 0..CHANNELS {
        for (i, &m) in mask.data.iter().enumerate() {
            if m == 0 {
                data[c * n + i] = 0.0;
            }
        }
    }
    ImageTensor::new(img.height, img.width, data)
}

/// `stylized ⊙ M + content ⊙ (1 − M)`. Background pixels are copied from `content`.
pub fn composite(
    stylized: &ImageTensor,
    content: &ImageTensor,
    mask: &BinaryMask,
) -> Result<ImageTensor> {
    check_shape(stylized, content, "composite")?;
    check_shape(stylized, mask, "composite")?;
    let n = mask.height * mask.width;
    let mut data = content.data.clone();
    for c in 0..CHANNELS {
        for (i, &m) in mask.data.iter().enumerate() {
            if m == 1 {
                data[c * n + i] = stylized.data[c * n + i];
            }
        }
    }
    ImageTensor::new(mask.height, mask.width, data)
}

/// Smallest box containing every foreground pixel.
pub fn tight_bbox(mask: &BinaryMask) -> Result<BoundingBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::EmptyRegion("mask has no foreground pixels".into()));
    }
    BoundingBox::new(x0, y0, x1, y1)
}

/// Extracts `bbox` and bilinearly resizes it to `out_size x out_size`.
pub fn crop_resize(img: &ImageTensor, bbox: &BoundingBox, out_size: usize) -> Result<ImageTensor> {
    if bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 {
        return Err(Error::InvalidInput("crop box has zero area".into()));
    }
    if !bbox.fits(img.width, img.height) {
        return Err(Error::InvalidInput(format!(
            "crop box {:?} exceeds {}x{} image",
            bbox, img.width, img.height
        )));
    }
    let (bw, bh) = (bbox.width(), bbox.height());
    let mut data = Vec::with_capacity(CHANNELS * bw * bh);
    for c in 0..CHANNELS {
        let plane = img.plane(c);
        for y in bbox.y0..bbox.y1 {
            data.extend_from_slice(&plane[y * img.width + bbox.x0..y * img.width + bbox.x1]);
        }
    }
    let crop = ImageTensor::new(bh, bw, data)?;
    resize(&crop, out_size, out_size)
}
