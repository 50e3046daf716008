//! Preprocessing pipeline: bilinear resize to the training resolution,
//! lossless quarter-turn rotations, the x4 rotation augmentation, and
//! overlapping patch extraction.

use crate::error::{Error, Result};
use crate::image::ImageGray8;

pub const TRAIN_SIZE: usize = 256;
pub const DEFAULT_PATCH: usize = 64;
pub const DEFAULT_STRIDE: usize = 32;

/// Rotation applied to a source image during augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugTag {
    R0,
    R90,
    R180,
    R270,
}

impl AugTag {
    pub const ALL: [AugTag; 4] = [AugTag::R0, AugTag::R90, AugTag::R180, AugTag::R270];

    pub fn as_str(&self) -> &'static str {
        match self {
            AugTag::R0 => "r0",
            AugTag::R90 => "r90",
            AugTag::R180 => "r180",
            AugTag::R270 => "r270",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "r0" => Ok(AugTag::R0),
            "r90" => Ok(AugTag::R90),
            "r180" => Ok(AugTag::R180),
            "r270" => Ok(AugTag::R270),
            other => Err(Error::InvalidArgument(format!(
                "unknown augmentation tag '{other}'"
            ))),
        }
    }

    fn quarter_turns(&self) -> u8 {
        match self {
            AugTag::R0 => 0,
            AugTag::R90 => 1,
            AugTag::R180 => 2,
            AugTag::R270 => 3,
        }
    }
}

/// Bilinear resize with half-pixel-centered sampling and edge clamping.
/// The source must be at least 2x2.
pub fn resize_bilinear(img: &ImageGray8, out_w: usize, out_h: usize) -> Result<ImageGray8> {
    let (sw, sh) = (img.width(), img.height());
    if sw < 2 || sh < 2 {
        return Err(Error::InvalidArgument(format!(
            "resize source must be at least 2x2, got {sw}x{sh}"
        )));
    }
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(
            "resize target dimensions must be nonzero".into(),
        ));
    }
    let scale_x = sw as f64 / out_w as f64;
    let scale_y = sh as f64 / out_h as f64;
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for dy in 0..out_h {
        let sy = (dy as f64 + 0.5) * scale_y - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        let y0c = (y0 as isize).clamp(0, sh as isize - 1) as usize;
        let y1c = (y0 as isize + 1).clamp(0, sh as isize - 1) as usize;
        for dx in 0..out_w {
            let sx = (dx as f64 + 0.5) * scale_x - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let x0c = (x0 as isize).clamp(0, sw as isize - 1) as usize;
            let x1c = (x0 as isize + 1).clamp(0, sw as isize - 1) as usize;
            let p00 = img.get(x0c, y0c) as f64;
            let p01 = img.get(x1c, y0c) as f64;
            let p10 = img.get(x0c, y1c) as f64;
            let p11 = img.get(x1c, y1c) as f64;
            let v = (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01)
                + fy * ((1.0 - fx) * p10 + fx * p11);
            pixels.push((v + 0.5).floor() as u8);
        }
    }
    ImageGray8::from_pixels(out_w, out_h, pixels)
}

/// Exact lossless rotation by `quarter_turns` * 90 degrees clockwise
/// (a pure index permutation, no interpolation).
pub fn rotate(img: &ImageGray8, quarter_turns: u8) -> ImageGray8 {
    let (w, h) = (img.width(), img.height());
    match quarter_turns % 4 {
        0 => img.clone(),
        1 => {
            // out (h x w): out[y][x] = in[h-1-x][y]
            let mut pixels = Vec::with_capacity(w * h);
            for y in 0..w {
                for x in 0..h {
                    pixels.push(img.get(y, h - 1 - x));
                }
            }
            ImageGray8::from_pixels(h, w, pixels).expect("dimensions preserved")
        }
        2 => {
            let mut pixels = img.pixels().to_vec();
            pixels.reverse();
            ImageGray8::from_pixels(w, h, pixels).expect("dimensions preserved")
        }
        3 => {
            // out (h x w): out[y][x] = in[x][w-1-y]
            let mut pixels = Vec::with_capacity(w * h);
            for y in 0..w {
                for x in 0..h {
                    pixels.push(img.get(w - 1 - y, x));
                }
            }
            ImageGray8::from_pixels(h, w, pixels).expect("dimensions preserved")
        }
        _ => unreachable!(),
    }
}

/// Emits the four rotations of every input, in order r0, r90, r180, r270,
/// quadrupling the dataset.
pub fn augment_dataset(images: &[ImageGray8]) -> Vec<(AugTag, ImageGray8)> {
    let mut out = Vec::with_capacity(images.len() * 4);
    for img in images {
        for tag in AugTag::ALL {
            out.push((tag, rotate(img, tag.quarter_turns())));
        }
    }
    out
}

/// All size x size windows at the given stride in top-left raster order.
/// When the stride does not divide the span, a final window anchored to
/// the image edge is added so coverage is complete.
pub fn extract_patches(img: &ImageGray8, size: usize, stride: usize) -> Result<Vec<ImageGray8>> {
    let (w, h) = (img.width(), img.height());
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "patch size and stride must be nonzero".into(),
        ));
    }
    if size > w || size > h {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} exceeds image {w}x{h}"
        )));
    }
    let offsets = |span: usize| {
        let mut v: Vec<usize> = (0..=span - size).step_by(stride).collect();
        if *v.last().expect("at least offset 0") != span - size {
            v.push(span - size);
        }
        v
    };
    let ys = offsets(h);
    let xs = offsets(w);
    let mut patches = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            let mut pixels = Vec::with_capacity(size * size);
            for row in y..y + size {
                pixels.extend_from_slice(&img.row(row)[x..x + size]);
            }
            patches.push(ImageGray8::from_pixels(size, size, pixels)?);
        }
    }
    Ok(patches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ImageGray8 {
        ImageGray8::from_pixels(w, h, (0..w * h).map(|i| (i % 251) as u8).collect()).unwrap()
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = ramp(7, 5);
        assert_eq!(resize_bilinear(&img, 7, 5).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageGray8::constant(3, 3, 137).unwrap();
        for (w, h) in [(2, 2), (9, 4), (256, 256)] {
            let out = resize_bilinear(&img, w, h).unwrap();
            assert!(out.pixels().iter().all(|&p| p == 137));
        }
    }

    #[test]
    fn resize_checkerboard_matches_hand_computed_table() {
        // independently hand-computed for half-pixel-centered sampling
        let img = ImageGray8::from_pixels(2, 2, vec![0, 255, 255, 0]).unwrap();
        let out = resize_bilinear(&img, 4, 4).unwrap();
        let expected: &[u8] = &[
            0, 64, 191, 255, //
            64, 96, 159, 191, //
            191, 159, 96, 64, //
            255, 191, 64, 0,
        ];
        assert_eq!(out.pixels(), expected);
    }

    #[test]
    fn resize_stays_in_source_range() {
        let img = ImageGray8::from_pixels(3, 2, vec![10, 200, 30, 90, 15, 180]).unwrap();
        let out = resize_bilinear(&img, 11, 7).unwrap();
        assert!(out.pixels().iter().all(|&p| (10..=200).contains(&p)));
    }

    #[test]
    fn resize_rejects_degenerate_source() {
        let img = ImageGray8::constant(1, 5, 0).unwrap();
        assert!(resize_bilinear(&img, 4, 4).is_err());
    }

    #[test]
    fn rotation_group_laws() {
        let img = ramp(5, 3);
        let r90 = rotate(&img, 1);
        assert_eq!((r90.width(), r90.height()), (3, 5));
        assert_eq!(rotate(&rotate(&rotate(&r90, 1), 1), 1), img);
        let r180 = rotate(&img, 2);
        assert_eq!(rotate(&r180, 2), img);
        assert_eq!(rotate(&r90, 1), r180);
    }

    #[test]
    fn rotation_is_a_permutation() {
        let img = ramp(4, 6);
        let mut a = img.pixels().to_vec();
        let mut b = rotate(&img, 1).pixels().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn augmentation_quadruples_with_ordered_tags() {
        let imgs = vec![ramp(4, 4), ramp(3, 3)];
        let out = augment_dataset(&imgs);
        assert_eq!(out.len(), 8);
        let tags: Vec<&str> = out.iter().take(4).map(|(t, _)| t.as_str()).collect();
        assert_eq!(tags, ["r0", "r90", "r180", "r270"]);
        assert_eq!(out[0].1, imgs[0]);
    }

    #[test]
    fn patch_grid_count_for_default_geometry() {
        let img = ramp(256, 256);
        let patches = extract_patches(&img, 64, 32).unwrap();
        assert_eq!(patches.len(), 49);
    }

    #[test]
    fn patch_equal_to_image_when_size_matches() {
        let img = ramp(16, 16);
        let patches = extract_patches(&img, 16, 8).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0], img);
    }

    #[test]
    fn patches_are_bit_exact_windows_and_edge_anchored() {
        let img = ramp(10, 7);
        let patches = extract_patches(&img, 4, 3).unwrap();
        // x offsets: 0, 3, 6 -> last window would end at 10 ✓; y offsets: 0, 3 (ends 7) ✓
        assert_eq!(patches.len(), 3 * 2);
        for (i, &y) in [0usize, 3].iter().enumerate() {
            for (j, &x) in [0usize, 3, 6].iter().enumerate() {
                let p = &patches[i * 3 + j];
                for yy in 0..4 {
                    for xx in 0..4 {
                        assert_eq!(p.get(xx, yy), img.get(x + xx, y + yy));
                    }
                }
            }
        }
        // non-dividing stride adds an edge-anchored final window
        let patches = extract_patches(&img, 4, 4).unwrap();
        // x offsets 0, 4, then edge 6; y offsets 0, then edge 3
        assert_eq!(patches.len(), 3 * 2);
        let last = patches.last().unwrap();
        for yy in 0..4 {
            for xx in 0..4 {
                assert_eq!(last.get(xx, yy), img.get(6 + xx, 3 + yy));
            }
        }
    }

    #[test]
    fn oversized_patch_rejected() {
        let img = ramp(8, 8);
        assert!(extract_patches(&img, 9, 1).is_err());
    }
}
