//! Grayscale raster type and file I/O.
//!
//! Pixels are `f64` everywhere inside the crate. Files are 8-bit: binary PGM
//! (`P5`, maxval ≤ 255) or PNG. Loading divides by the maximum sample value so
//! frames land in `[0, 1]`; saving clamps to `[0, 1]` and rounds to the
//! nearest byte.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use ::image::{ColorType, DynamicImage, ImageFormat};

use crate::error::{Error, Result};

/// Row-major real-valued raster.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// All-zero image. Panics if either dimension is zero.
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", "dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(
                "image",
                format!(
                    "buffer has {} pixels, expected {}x{}",
                    pixels.len(),
                    width,
                    height
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::new(width, height);
        for row in 0..height {
            for col in 0..width {
                img.pixels[row * width + col] = f(row, col);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.pixels.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }

    /// Largest absolute pixel difference. Panics on mismatched dimensions.
    pub fn max_abs_diff(&self, other: &GrayImage) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Loads an 8-bit PGM (P5) or PNG, normalized into `[0, 1]`.
///
/// The format is sniffed from the file contents. RGB PNGs are reduced to gray
/// by averaging the three channels; alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes, path)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes, path)
    } else {
        Err(Error::format(path, "unrecognized image format (expected P5 PGM or PNG)"))
    }
}

/// Writes `img` as PGM or PNG depending on the file extension.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !img.is_finite() {
        return Err(Error::invalid("image", "cannot save non-finite pixels"));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let bytes = match ext.as_deref() {
        Some("pgm") => encode_pgm(img),
        Some("png") => encode_png(img)?,
        _ => {
            return Err(Error::format(
                path,
                "unsupported extension (use .pgm or .png)",
            ))
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Clamp to `[0, 1]` and round to the nearest 8-bit level.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_bytes(img: &GrayImage) -> Vec<u8> {
    img.pixels.iter().map(|&v| quantize(v)).collect()
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(to_bytes(img));
    out
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let buf = ::image::GrayImage::from_raw(img.width as u32, img.height as u32, to_bytes(img))
        .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(buf)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Numerical(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let decoded = ::image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("malformed PNG: {e}")))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels: Vec<f64> = match decoded.color() {
        ColorType::L8 => decoded
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        ColorType::La8 => decoded
            .to_luma_alpha8()
            .pixels()
            .map(|p| p.0[0] as f64 / 255.0)
            .collect(),
        ColorType::Rgb8 | ColorType::Rgba8 => decoded
            .to_rgb8()
            .pixels()
            .map(|p| (p.0[0] as f64 + p.0[1] as f64 + p.0[2] as f64) / (3.0 * 255.0))
            .collect(),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported bit depth ({other:?}); only 8-bit images are accepted"),
            ))
        }
    };
    GrayImage::from_vec(w, h, pixels)
}

/// Parses a binary PGM. Header tokens are separated by whitespace and may be
/// interleaved with `#` comments; exactly one whitespace byte precedes the
/// raster.
fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut pos = 2; // past "P5"
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, format!("malformed header: missing {name}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields[i] = text
            .parse()
            .map_err(|_| Error::format(path, format!("malformed header: bad {name} '{text}'")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(path, "malformed header: zero dimension"));
    }
    if maxval == 0 {
        return Err(Error::format(path, "malformed header: maxval is zero"));
    }
    if maxval > 255 {
        return Err(Error::format(
            path,
            format!("unsupported bit depth (maxval {maxval}); only 8-bit PGM is accepted"),
        ));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "malformed header: no separator before raster"));
    }
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::format(path, format!("truncated raster: expected {n} bytes")))?;
    let scale = maxval as f64;
    GrayImage::from_vec(width, height, raster.iter().map(|&b| b as f64 / scale).collect())
}
