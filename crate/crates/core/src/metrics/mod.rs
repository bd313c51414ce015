//! Forensic localization/detection metrics and image fidelity metrics.
//!
//! Everything here is a pure function of its inputs.

mod auc;
mod bbox;
mod fidelity;

use image::GrayImage;
use serde::{Deserialize, Serialize};

pub use auc::{localization_auc, roc_auc, ScoreHistogram, LOC_GRID};
pub use bbox::{bbox_iou, mask_to_bbox, BBox};
pub use fidelity::{fidelity, Fidelity};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("length mismatch: {0} scores, {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("need at least one positive and one negative ({positives} positives, {negatives} negatives)")]
    DegenerateClasses { positives: usize, negatives: usize },
    #[error("empty localization map")]
    EmptyMap,
    #[error("score is NaN")]
    NotANumber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Inpainted,
    Authentic,
}

impl Label {
    pub fn is_inpainted(self) -> bool {
        self == Label::Inpainted
    }
}

/// Per-pixel manipulation probabilities, row-major, clamped to [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct LocMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl LocMap {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, MetricsError> {
        if data.len() != width as usize * height as usize {
            return Err(MetricsError::LengthMismatch(data.len(), width as usize * height as usize));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(MetricsError::NotANumber);
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { width, height, data })
    }

    /// 8-bit grayscale map, value / 255.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Bilinear resize with pixel-centre alignment and edge clamping.
    pub fn resize(&self, width: u32, height: u32) -> Self {
        if (width, height) == self.dimensions() || self.data.is_empty() {
            return Self { width, height, data: if self.data.is_empty() { vec![0.0; width as usize * height as usize] } else { self.data.clone() } };
        }
        let axis = |dst: u32, src: u32| -> Vec<(usize, usize, f64)> {
            (0..dst)
                .map(|i| {
                    let s = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(src as usize - 1);
                    (i0, i1, s - i0 as f64)
                })
                .collect()
        };
        let xs = axis(width, self.width);
        let ys = axis(height, self.height);
        let w = self.width as usize;
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = self.data[y0 * w + x0] * (1.0 - fx) + self.data[y0 * w + x1] * fx;
                let bottom = self.data[y1 * w + x0] * (1.0 - fx) + self.data[y1 * w + x1] * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Self { width, height, data }
    }
}

/// A detector's output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub image_id: String,
    pub loc_map: LocMap,
    pub det_score: f64,
}

/// Nearest-neighbour resize of a binary mask (pixel-centre sampling).
pub fn resize_mask_nearest(mask: &GrayImage, width: u32, height: u32) -> GrayImage {
    if mask.dimensions() == (width, height) {
        return mask.clone();
    }
    let (sw, sh) = mask.dimensions();
    let src = |d: u32, s: u32, n: u32| (((2 * d as u64 + 1) * s as u64) / (2 * n as u64)) as u32;
    GrayImage::from_fn(width, height, |x, y| *mask.get_pixel(src(x, sw, width), src(y, sh, height)))
}

fn count_iou(intersection: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

/// IoU between `{loc ≥ threshold}` and the mask's positive pixels (> 127).
/// Two empty sets give 1.0.
pub fn pixel_iou(loc: &LocMap, gt: &GrayImage, threshold: f64) -> Result<f64, MetricsError> {
    if loc.dimensions() != gt.dimensions() {
        return Err(MetricsError::DimensionMismatch { a: loc.dimensions(), b: gt.dimensions() });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, g) in loc.values().iter().zip(gt.as_raw()) {
        let (p, g) = (p >= threshold, *g > 127);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(count_iou(inter, union))
}

/// [`pixel_iou`] after bilinearly resizing the map to the mask's size.
pub fn pixel_iou_resized(loc: &LocMap, gt: &GrayImage, threshold: f64) -> Result<f64, MetricsError> {
    let (w, h) = gt.dimensions();
    pixel_iou(&loc.resize(w, h), gt, threshold)
}

/// Fraction of images where `score ≥ threshold` agrees with the label.
pub fn detection_accuracy(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == l.is_inpainted())
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Image-level score from a localization map: its maximum.
pub fn loc_map_to_det(loc: &LocMap) -> Result<f64, MetricsError> {
    loc.values().iter().copied().reduce(f64::max).ok_or(MetricsError::EmptyMap)
}
