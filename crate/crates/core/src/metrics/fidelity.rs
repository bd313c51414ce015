use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::MetricsError;

const WINDOW: u32 = 8;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Fidelity of an inpainted image against its original. MSE and MAE are on
/// [0,1]-scaled intensities multiplied by 10³; PSNR uses a peak of 1.0 and is
/// `+inf` for identical images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub psnr: f64,
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
}

pub fn fidelity(original: &RgbImage, inpainted: &RgbImage) -> Result<Fidelity, MetricsError> {
    if original.dimensions() != inpainted.dimensions() {
        return Err(MetricsError::DimensionMismatch { a: original.dimensions(), b: inpainted.dimensions() });
    }
    let (a, b) = (original.as_raw(), inpainted.as_raw());
    if a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = a.len() as f64;
    let (mut sq, mut abs) = (0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        let d = (x as i64 - y as i64).unsigned_abs();
        sq += d * d;
        abs += d;
    }
    let mse = sq as f64 / (255.0 * 255.0) / n;
    let mae = abs as f64 / 255.0 / n;
    let psnr = if sq == 0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() };
    let ssim = (0..3).map(|c| ssim_channel(original, inpainted, c)).sum::<f64>() / 3.0;
    Ok(Fidelity { psnr, mse: mse * 1e3, mae: mae * 1e3, ssim })
}

/// Summed-area table over `f(pixel)` with a zero border row/column.
fn integral(w: usize, h: usize, f: impl Fn(usize, usize) -> u64) -> Vec<u64> {
    let mut t = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += f(x, y);
            t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
        }
    }
    t
}

/// Mean SSIM over all `WINDOW`×`WINDOW` windows (stride 1) of one channel,
/// with uniform weights and population statistics. Images smaller than the
/// window along an axis use the full extent on that axis.
fn ssim_channel(a: &RgbImage, b: &RgbImage, c: usize) -> f64 {
    let (w, h) = (a.width() as usize, a.height() as usize);
    let (ww, wh) = (WINDOW.min(a.width()) as usize, WINDOW.min(a.height()) as usize);
    let (ra, rb) = (a.as_raw(), b.as_raw());
    let px = |r: &[u8], x: usize, y: usize| r[(y * w + x) * 3 + c] as u64;
    let sa = integral(w, h, |x, y| px(ra, x, y));
    let sb = integral(w, h, |x, y| px(rb, x, y));
    let saa = integral(w, h, |x, y| px(ra, x, y).pow(2));
    let sbb = integral(w, h, |x, y| px(rb, x, y).pow(2));
    let sab = integral(w, h, |x, y| px(ra, x, y) * px(rb, x, y));
    let rect = |t: &[u64], x: usize, y: usize| {
        let s = w + 1;
        t[(y + wh) * s + x + ww] + t[y * s + x] - t[y * s + x + ww] - t[(y + wh) * s + x]
    };
    let count = (ww * wh) as f64;
    let scale = 255.0 * 255.0 * count;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y in 0..=(h - wh) {
        for x in 0..=(w - ww) {
            let (xa, xb) = (rect(&sa, x, y) as f64, rect(&sb, x, y) as f64);
            let mu_a = xa / (255.0 * count);
            let mu_b = xb / (255.0 * count);
            // Exact integer numerators: n·Σx² − (Σx)² is n² times the population variance.
            let var_a = (count * rect(&saa, x, y) as f64 - xa * xa) / (scale * count);
            let var_b = (count * rect(&sbb, x, y) as f64 - xb * xb) / (scale * count);
            let cov = (count * rect(&sab, x, y) as f64 - xa * xb) / (scale * count);
            total += ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2))
                / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
            windows += 1;
        }
    }
    total / windows as f64
}
