//! PNG/base64 helpers and the binary mask convention (value > 127 is an
//! inpainted pixel).

use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{DynamicImage, GrayImage, ImageFormat, Luma, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("cannot decode image {context}: {source}")]
    Decode {
        context: String,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot encode image: {0}")]
    Encode(#[from] image::ImageError),
    #[error("invalid base64 payload: {0}")]
    Base64(#[from] base64::DecodeError),
}

pub fn open_rgb(path: impl AsRef<Path>) -> Result<RgbImage, ImageIoError> {
    let path = path.as_ref();
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| ImageIoError::Decode { context: path.display().to_string(), source })
}

/// Loads a mask and binarizes it.
pub fn open_mask(path: impl AsRef<Path>) -> Result<GrayImage, ImageIoError> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| ImageIoError::Decode { context: path.display().to_string(), source })?;
    Ok(binarize(&img.to_luma8()))
}

pub fn binarize(mask: &GrayImage) -> GrayImage {
    GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        Luma([if mask.get_pixel(x, y)[0] > 127 { 255 } else { 0 }])
    })
}

pub fn is_masked(mask: &GrayImage, x: u32, y: u32) -> bool {
    mask.get_pixel(x, y)[0] > 127
}

/// Fraction of pixels marked as inpainted.
pub fn area_fraction(mask: &GrayImage) -> f64 {
    let total = mask.width() as usize * mask.height() as usize;
    if total == 0 {
        return 0.0;
    }
    mask.pixels().filter(|p| p[0] > 127).count() as f64 / total as f64
}

pub fn png_bytes(img: &DynamicImage) -> Result<Vec<u8>, ImageIoError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn to_png_b64(img: &DynamicImage) -> Result<String, ImageIoError> {
    Ok(STANDARD.encode(png_bytes(img)?))
}

pub fn from_b64(data: &str) -> Result<DynamicImage, ImageIoError> {
    let bytes = STANDARD.decode(data.trim())?;
    image::load_from_memory(&bytes)
        .map_err(|source| ImageIoError::Decode { context: "base64 payload".into(), source })
}
