//! PSNR and SSIM image-quality metrics and the per-image evaluation
//! report, matching the 8-bit benchmark protocol (peak 255, canonical SSIM
//! constants).

use std::time::Instant;

use crate::error::{Error, Result};
use crate::image::ImageGray8;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Quality of one image against its reference. `psnr_db` is
/// `f64::INFINITY` for identical images (formatted as "inf").
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub elapsed: f64,
}

/// Reports for a (noisy, denoised) pair against the same clean reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairReport {
    pub noisy: QualityReport,
    pub denoised: QualityReport,
    /// `denoised.psnr_db - noisy.psnr_db`; 0 when both are infinite.
    pub psnr_gain: f64,
}

fn check_dims(a: &ImageGray8, b: &ImageGray8) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio `10 log10(255^2 / MSE)` in decibels;
/// identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageGray8, b: &ImageGray8) -> Result<f64> {
    check_dims(a, b)?;
    let mut sq = 0.0f64;
    for (&x, &y) in a.pixels().iter().zip(b.pixels()) {
        let d = x as f64 - y as f64;
        sq += d * d;
    }
    let mse = sq / a.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Mean local SSIM with an 11x11 Gaussian window (sd 1.5) over every
/// position where the full window fits. Requires both dimensions >= 11.
pub fn ssim(a: &ImageGray8, b: &ImageGray8) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }

    let kernel = gaussian_kernel();
    let xf: Vec<f64> = a.pixels().iter().map(|&p| p as f64).collect();
    let yf: Vec<f64> = b.pixels().iter().map(|&p| p as f64).collect();
    let xx: Vec<f64> = xf.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = yf.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xf.iter().zip(&yf).map(|(x, y)| x * y).collect();

    let mx = filter_valid(&xf, w, h, &kernel);
    let my = filter_valid(&yf, w, h, &kernel);
    let exx = filter_valid(&xx, w, h, &kernel);
    let eyy = filter_valid(&yy, w, h, &kernel);
    let exy = filter_valid(&xy, w, h, &kernel);

    let mut sum = 0.0f64;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let sx = exx[i] - ux * ux;
        let sy = eyy[i] - uy * uy;
        let sxy = exy[i] - ux * uy;
        let num = (2.0 * ux * uy + SSIM_C1) * (2.0 * sxy + SSIM_C2);
        let den = (ux * ux + uy * uy + SSIM_C1) * (sx + sy + SSIM_C2);
        sum += num / den;
    }
    Ok(sum / mx.len() as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filtering, keeping only positions where the window
/// fits; output is (h - 10) x (w - 10).
fn filter_valid(data: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    // horizontal pass: h rows of ow values
    let mut horiz = vec![0.0f64; h * ow];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let dst = &mut horiz[y * ow..(y + 1) * ow];
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                acc += g * row[x + k];
            }
            *d = acc;
        }
    }
    // vertical pass
    let oh = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                acc += g * horiz[(y + k) * ow + x];
            }
            dst[x] = acc;
        }
    }
    out
}

/// Scores `noisy` and `denoised` against the clean reference, with the
/// PSNR gain of denoising. The elapsed fields record the metric
/// computation time for each pair.
pub fn evaluate_pair(
    clean: &ImageGray8,
    noisy: &ImageGray8,
    denoised: &ImageGray8,
) -> Result<PairReport> {
    check_dims(clean, noisy)?;
    check_dims(clean, denoised)?;
    let t0 = Instant::now();
    let psnr_noisy = psnr(noisy, clean)?;
    let ssim_noisy = ssim(noisy, clean)?;
    let t1 = Instant::now();
    let psnr_denoised = psnr(denoised, clean)?;
    let ssim_denoised = ssim(denoised, clean)?;
    let t2 = Instant::now();
    let psnr_gain = if psnr_denoised.is_infinite() && psnr_noisy.is_infinite() {
        0.0
    } else {
        psnr_denoised - psnr_noisy
    };
    Ok(PairReport {
        noisy: QualityReport {
            psnr_db: psnr_noisy,
            ssim: ssim_noisy,
            elapsed: (t1 - t0).as_secs_f64(),
        },
        denoised: QualityReport {
            psnr_db: psnr_denoised,
            ssim: ssim_denoised,
            elapsed: (t2 - t1).as_secs_f64(),
        },
        psnr_gain,
    })
}

/// One line of the machine-readable records file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub filename: String,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub ssim_noisy: f64,
    pub ssim_denoised: f64,
    pub elapsed_seconds: f64,
}

pub const RECORDS_HEADER: &str =
    "filename,psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised,elapsed_seconds";

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// Renders the records file: fixed header plus one comma-separated row per
/// image. Output is deterministic for deterministic inputs.
pub fn records_to_csv(rows: &[RecordRow]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.3}\n",
            r.filename,
            fmt_db(r.psnr_noisy),
            fmt_db(r.psnr_denoised),
            r.ssim_noisy,
            r.ssim_denoised,
            r.elapsed_seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ImageGray8 {
        ImageGray8::from_pixels(w, h, (0..w * h).map(|i| ((i * 7) % 256) as u8).collect()).unwrap()
    }

    #[test]
    fn identical_images_hit_the_sentinel() {
        let img = ramp(16, 16);
        assert!(psnr(&img, &img).unwrap().is_infinite());
    }

    #[test]
    fn uniform_offset_sixteen_closed_form() {
        let a = ImageGray8::constant(32, 32, 100).unwrap();
        let b = ImageGray8::constant(32, 32, 116).unwrap();
        let v = psnr(&a, &b).unwrap();
        assert!((v - 24.0484).abs() < 1e-3, "psnr {v}");
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = ramp(20, 14);
        let b = ImageGray8::constant(20, 14, 90).unwrap();
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_dimension_mismatch_rejected() {
        let a = ramp(8, 8);
        let b = ramp(8, 9);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_self_is_exactly_one() {
        let img = ramp(32, 24);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn ssim_symmetric() {
        let a = ramp(24, 24);
        let mut b = a.clone();
        for (i, p) in b.pixels_mut().iter_mut().enumerate() {
            *p = p.wrapping_add((i % 17) as u8);
        }
        let x = ssim(&a, &b).unwrap();
        let y = ssim(&b, &a).unwrap();
        assert!((x - y).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ramp(10, 16);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_of_inverted_ramp_is_negative_and_matches_direct_computation() {
        // mid-contrast horizontal ramp and its negative
        let w = 24;
        let h = 16;
        let a = ImageGray8::from_pixels(
            w,
            h,
            (0..w * h).map(|i| (64 + (i % w) * 5) as u8).collect(),
        )
        .unwrap();
        let b = ImageGray8::from_pixels(w, h, a.pixels().iter().map(|&p| 255 - p).collect())
            .unwrap();
        let fast = ssim(&a, &b).unwrap();
        assert!(fast < 0.0, "ssim of inverted image should be negative, got {fast}");

        // independent direct windowed computation (no separable filtering)
        let kernel = gaussian_kernel();
        let mut sum = 0.0;
        let mut count = 0usize;
        for cy in 0..h - SSIM_WINDOW + 1 {
            for cx in 0..w - SSIM_WINDOW + 1 {
                let (mut mx, mut my) = (0.0f64, 0.0f64);
                let (mut exx, mut eyy, mut exy) = (0.0f64, 0.0f64, 0.0f64);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let g = kernel[dy] * kernel[dx];
                        let x = a.get(cx + dx, cy + dy) as f64;
                        let y = b.get(cx + dx, cy + dy) as f64;
                        mx += g * x;
                        my += g * y;
                        exx += g * x * x;
                        eyy += g * y * y;
                        exy += g * x * y;
                    }
                }
                let sx = exx - mx * mx;
                let sy = eyy - my * my;
                let sxy = exy - mx * my;
                sum += ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (sx + sy + SSIM_C2));
                count += 1;
            }
        }
        let direct = sum / count as f64;
        assert!(
            (fast - direct).abs() < 1e-9,
            "separable {fast} vs direct {direct}"
        );
    }

    #[test]
    fn ssim_invariant_under_shared_luminance_shift() {
        let a = ramp(24, 24);
        let mut b = a.clone();
        for (i, p) in b.pixels_mut().iter_mut().enumerate() {
            *p = p.wrapping_add(((i * 3) % 11) as u8);
        }
        let base = ssim(&a, &b).unwrap();
        let shift = |img: &ImageGray8| {
            ImageGray8::from_pixels(
                img.width(),
                img.height(),
                img.pixels().iter().map(|&p| p.saturating_add(20).min(235)).collect(),
            )
            .unwrap()
        };
        // keep the shift saturation-free
        let a2 = shift(&a);
        let b2 = shift(&b);
        let shifted = ssim(&a2, &b2).unwrap();
        assert!(
            (base - shifted).abs() < 2e-2,
            "ssim drifted: {base} vs {shifted}"
        );
    }

    #[test]
    fn evaluate_pair_gains() {
        let clean = ramp(16, 16);
        let mut noisy = clean.clone();
        noisy.pixels_mut()[0] ^= 0x40;
        // denoised == clean -> infinite gain
        let r = evaluate_pair(&clean, &noisy, &clean).unwrap();
        assert!(r.denoised.psnr_db.is_infinite());
        assert!(r.psnr_gain.is_infinite());
        assert_eq!(r.denoised.ssim, 1.0);
        // denoised == noisy -> zero gain
        let r = evaluate_pair(&clean, &noisy, &noisy).unwrap();
        assert_eq!(r.psnr_gain, 0.0);
        // gain is exactly the difference of the two PSNRs
        assert_eq!(r.psnr_gain, r.denoised.psnr_db - r.noisy.psnr_db);
    }

    #[test]
    fn records_csv_fixed_header_and_inf() {
        let rows = vec![RecordRow {
            filename: "a.png".into(),
            psnr_noisy: 20.5,
            psnr_denoised: f64::INFINITY,
            ssim_noisy: 0.5,
            ssim_denoised: 1.0,
            elapsed_seconds: 0.0,
        }];
        let csv = records_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RECORDS_HEADER);
        assert_eq!(lines.next().unwrap(), "a.png,20.5000,inf,0.500000,1.000000,0.000");
    }
}
