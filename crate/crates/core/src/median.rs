//! Classical median-filter baseline, the in-repo stand-in for heavyweight
//! patch-based denoisers in benchmark comparisons.

use crate::error::{Error, Result};
use crate::image::ImageGray8;

/// Replaces each pixel by the median of its k x k neighborhood; borders
/// are handled by clamping (edge replication). `k` must be odd and fit in
/// the image.
pub fn median_filter(img: &ImageGray8, k: usize) -> Result<ImageGray8> {
    if k % 2 == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "median window must be odd, got {k}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if k > w || k > h {
        return Err(Error::InvalidArgument(format!(
            "median window {k} exceeds image {w}x{h}"
        )));
    }
    let r = (k / 2) as isize;
    let mut out = Vec::with_capacity(w * h);
    let mut window = Vec::with_capacity(k * k);
    for y in 0..h as isize {
        for x in 0..w as isize {
            window.clear();
            for dy in -r..=r {
                let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                    window.push(img.get(sx, sy));
                }
            }
            window.sort_unstable();
            out.push(window[window.len() / 2]);
        }
    }
    ImageGray8::from_pixels(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_unchanged() {
        let img = ImageGray8::constant(9, 7, 83).unwrap();
        assert_eq!(median_filter(&img, 3).unwrap(), img);
    }

    #[test]
    fn single_salt_pixel_removed() {
        let mut img = ImageGray8::constant(9, 9, 0).unwrap();
        img.set(4, 4, 255);
        let out = median_filter(&img, 3).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn center_of_ascending_grid_is_five() {
        let img = ImageGray8::from_pixels(3, 3, (1..=9).collect()).unwrap();
        let out = median_filter(&img, 3).unwrap();
        assert_eq!(out.get(1, 1), 5);
    }

    #[test]
    fn even_window_rejected() {
        let img = ImageGray8::constant(8, 8, 0).unwrap();
        assert!(median_filter(&img, 4).is_err());
    }

    #[test]
    fn oversized_window_rejected() {
        let img = ImageGray8::constant(4, 4, 0).unwrap();
        assert!(median_filter(&img, 5).is_err());
    }

    #[test]
    fn idempotent_on_sparse_binary_noise() {
        // sparse salt field: one pass removes the isolated specks, a second
        // pass then changes nothing
        let mut img = ImageGray8::constant(48, 48, 0).unwrap();
        for i in 0..40 {
            let x = (i * 53) % 48;
            let y = (i * 31) % 48;
            img.set(x, y, 255);
        }
        let once = median_filter(&img, 3).unwrap();
        let twice = median_filter(&once, 3).unwrap();
        assert_eq!(once, twice);
    }
}
