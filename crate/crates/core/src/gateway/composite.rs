use image::{GrayImage, RgbImage};

use crate::imageio::is_masked;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("dimension mismatch: original {original:?}, generated {generated:?}, mask {mask:?}")]
pub struct CompositeError {
    pub original: (u32, u32),
    pub generated: (u32, u32),
    pub mask: (u32, u32),
}

/// Copy-paste compositing: generated pixels inside the mask, original pixels
/// everywhere else, bit for bit.
pub fn composite_sp(original: &RgbImage, generated: &RgbImage, mask: &GrayImage) -> Result<RgbImage, CompositeError> {
    if original.dimensions() != generated.dimensions() || original.dimensions() != mask.dimensions() {
        return Err(CompositeError {
            original: original.dimensions(),
            generated: generated.dimensions(),
            mask: mask.dimensions(),
        });
    }
    let mut out = original.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if is_masked(mask, x, y) {
            *px = *generated.get_pixel(x, y);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use image::{Luma, Rgb};

    use super::*;

    #[test]
    fn empty_and_full_masks() {
        let a = RgbImage::from_pixel(5, 4, Rgb([10, 20, 30]));
        let b = RgbImage::from_pixel(5, 4, Rgb([200, 100, 0]));
        assert_eq!(composite_sp(&a, &b, &GrayImage::new(5, 4)).unwrap(), a);
        assert_eq!(composite_sp(&a, &b, &GrayImage::from_pixel(5, 4, Luma([255]))).unwrap(), b);
    }

    #[test]
    fn checkerboard_per_pixel() {
        let a = RgbImage::from_pixel(9, 7, Rgb([1, 2, 3]));
        let b = RgbImage::from_pixel(9, 7, Rgb([250, 251, 252]));
        let mask = GrayImage::from_fn(9, 7, |x, y| Luma([if (x + y) % 2 == 0 { 255 } else { 0 }]));
        let out = composite_sp(&a, &b, &mask).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                let expected = if (x + y) % 2 == 0 { [250, 251, 252] } else { [1, 2, 3] };
                assert_eq!(out.get_pixel(x, y).0, expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn mismatched_dims() {
        let a = RgbImage::new(4, 4);
        let err = composite_sp(&a, &RgbImage::new(4, 3), &GrayImage::new(4, 4)).unwrap_err();
        assert_eq!(err.generated, (4, 3));
    }
}
