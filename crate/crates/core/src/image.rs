//! 8-bit single-channel raster images and their on-disk formats: 8-bit
//! grayscale PNG and binary PGM (P5, maxval 255). Color PNGs are folded to
//! luma on load; 16-bit inputs are rejected.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, FileKind, Result};
use crate::util::atomic_write;

/// 8-bit grayscale image, row-major pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageGray8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageGray8 {
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be nonzero, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(ImageGray8 {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::from_pixels(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }
}

/// Luma conversion, round half up of `0.299 R + 0.587 G + 0.114 B`
/// (computed exactly in integer arithmetic).
pub fn to_grayscale(width: usize, height: usize, rgb: &[u8]) -> Result<ImageGray8> {
    if rgb.len() != width * height * 3 {
        return Err(Error::ShapeMismatch(format!(
            "RGB buffer length {} does not match {width}x{height}x3",
            rgb.len()
        )));
    }
    let pixels = rgb
        .chunks_exact(3)
        .map(|p| {
            let (r, g, b) = (p[0] as u32, p[1] as u32, p[2] as u32);
            ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
        })
        .collect();
    ImageGray8::from_pixels(width, height, pixels)
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Loads a PNG or binary PGM, sniffing the format from the file content.
pub fn load_image(path: &Path) -> Result<ImageGray8> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(&bytes, path)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes, path)
    } else {
        Err(Error::UnsupportedImage(format!(
            "{}: not a PNG or binary PGM (P5) file",
            path.display()
        )))
    }
}

/// Saves by extension: `.png` or `.pgm`. The write is atomic.
pub fn save_image(img: &ImageGray8, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" => encode_png(img)?,
        "pgm" => encode_pgm(img),
        other => {
            return Err(Error::UnsupportedImage(format!(
                "{}: unsupported output extension '{other}' (use .png or .pgm)",
                path.display()
            )))
        }
    };
    atomic_write(path, &bytes)
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<ImageGray8> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::UnsupportedImage(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedImage(format!(
            "{}: bit depth {:?} not supported, images must be 8-bit",
            path.display(),
            info.bit_depth
        )));
    }
    let color = info.color_type;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| {
        Error::UnsupportedImage(format!("{}: image too large", path.display()))
    })?];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Truncated {
            kind: FileKind::Image,
            detail: format!("{}: {e}", path.display()),
        })?;
    buf.truncate(frame.buffer_size());
    match color {
        png::ColorType::Grayscale => ImageGray8::from_pixels(w, h, buf),
        png::ColorType::GrayscaleAlpha => {
            let pixels = buf.chunks_exact(2).map(|p| p[0]).collect();
            ImageGray8::from_pixels(w, h, pixels)
        }
        png::ColorType::Rgb => to_grayscale(w, h, &buf),
        png::ColorType::Rgba => {
            let rgb: Vec<u8> = buf
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect();
            to_grayscale(w, h, &rgb)
        }
        png::ColorType::Indexed => Err(Error::UnsupportedImage(format!(
            "{}: indexed PNG not supported",
            path.display()
        ))),
    }
}

fn encode_png(img: &ImageGray8) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
    }
    Ok(out)
}

/// Writes an 8-bit RGB PNG (used by the colormap export).
pub fn save_rgb_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::ShapeMismatch(format!(
            "RGB buffer length {} does not match {width}x{height}x3",
            rgb.len()
        )));
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        writer
            .write_image_data(rgb)
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
    }
    atomic_write(path, &out)
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<ImageGray8> {
    let mut pos = 2; // past "P5"
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        // skip whitespace and '#' comment lines between header tokens
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::UnsupportedImage(format!(
                "{}: malformed PGM header",
                path.display()
            )));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::UnsupportedImage(format!("{}: malformed PGM header", path.display()))
            })?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedImage(format!(
            "{}: PGM maxval {maxval} not supported, only 8-bit (255)",
            path.display()
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::UnsupportedImage(format!(
            "{}: malformed PGM header",
            path.display()
        )));
    }
    pos += 1;
    let need = w * h;
    if bytes.len() < pos + need {
        return Err(Error::Truncated {
            kind: FileKind::Image,
            detail: format!(
                "{}: PGM raster has {} of {need} bytes",
                path.display(),
                bytes.len() - pos
            ),
        });
    }
    ImageGray8::from_pixels(w, h, bytes[pos..pos + need].to_vec())
}

fn encode_pgm(img: &ImageGray8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}
