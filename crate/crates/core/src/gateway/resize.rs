use image::imageops::FilterType;
use image::{DynamicImage, GenericImageView, GrayImage};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_DIM: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeTransform {
    pub original: [u32; 2],
    pub working: [u32; 2],
    pub scale: f64,
}

impl ResizeTransform {
    pub fn identity(width: u32, height: u32) -> Self {
        Self { original: [width, height], working: [width, height], scale: 1.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.original == self.working
    }
}

/// Target size for an image whose larger side must not exceed `max_dim`.
/// The minor side is rounded half-up.
pub fn working_size(width: u32, height: u32, max_dim: u32) -> ResizeTransform {
    let major = width.max(height);
    if major <= max_dim {
        return ResizeTransform::identity(width, height);
    }
    let scale_minor = |minor: u32| -> u32 {
        let num = 2 * minor as u64 * max_dim as u64 + major as u64;
        ((num / (2 * major as u64)) as u32).max(1)
    };
    let working = if width >= height {
        [max_dim, scale_minor(height)]
    } else {
        [scale_minor(width), max_dim]
    };
    ResizeTransform {
        original: [width, height],
        working,
        scale: max_dim as f64 / major as f64,
    }
}

/// Bilinear downscale so the larger side equals `max_dim`; a no-op when the
/// image already fits.
pub fn resize_for_inpainting(image: &DynamicImage, max_dim: u32) -> (DynamicImage, ResizeTransform) {
    let (w, h) = image.dimensions();
    let t = working_size(w, h, max_dim.max(1));
    if t.is_identity() {
        return (image.clone(), t);
    }
    let out = image.resize_exact(t.working[0], t.working[1], FilterType::Triangle);
    (out, t)
}

/// Nearest-neighbour resize, keeping masks binary.
pub fn resize_mask(mask: &GrayImage, t: &ResizeTransform) -> GrayImage {
    if mask.dimensions() == (t.working[0], t.working[1]) {
        return mask.clone();
    }
    image::imageops::resize(mask, t.working[0], t.working[1], FilterType::Nearest)
}
