//! "Hot" false-color export for grayscale results.
//!
//! The 256-entry table is a piecewise-linear black -> red -> yellow ->
//! white ramp, fixed as:
//!
//! ```text
//! r(v) = round(255 * v / 96)           for v <  96, else 255
//! g(v) = 0                             for v <  96
//!        round(255 * (v -  96) / 96)   for v < 192, else 255
//! b(v) = 0                             for v < 192
//!        round(255 * (v - 192) / 63)   otherwise
//! ```
//!
//! so 0 maps to black, 255 to white, and every channel is monotone in v.

use crate::image::ImageGray8;

/// RGB triple for one 8-bit gray value.
pub fn hot_entry(v: u8) -> [u8; 3] {
    let v = v as f64;
    let r = if v < 96.0 {
        (255.0 * v / 96.0).round()
    } else {
        255.0
    };
    let g = if v < 96.0 {
        0.0
    } else if v < 192.0 {
        (255.0 * (v - 96.0) / 96.0).round()
    } else {
        255.0
    };
    let b = if v < 192.0 {
        0.0
    } else {
        (255.0 * (v - 192.0) / 63.0).round()
    };
    [r as u8, g as u8, b as u8]
}

/// Maps a grayscale image through the hot table, producing packed RGB
/// bytes (3 per pixel, row-major).
pub fn apply_hot(img: &ImageGray8) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels().len() * 3);
    for &p in img.pixels() {
        out.extend_from_slice(&hot_entry(p));
    }
    out
}
