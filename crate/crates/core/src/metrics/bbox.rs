use image::GrayImage;
use serde::{Deserialize, Serialize};

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max
    }

    pub fn area(&self) -> u64 {
        (self.x_max - self.x_min + 1) as u64 * (self.y_max - self.y_min + 1) as u64
    }

    fn contains(&self, x: u32, y: u32) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// Tight box around the mask's positive pixels (> 127); `None` when empty.
pub fn mask_to_bbox(mask: &GrayImage) -> Option<BBox> {
    let mut b: Option<BBox> = None;
    for (x, y, p) in mask.enumerate_pixels() {
        if p[0] <= 127 {
            continue;
        }
        b = Some(match b {
            None => BBox::new(x, y, x, y),
            Some(b) => BBox::new(b.x_min.min(x), b.y_min.min(y), b.x_max.max(x), b.y_max.max(y)),
        });
    }
    b
}

/// IoU between the pixel unions of two box sets. Invalid boxes are ignored;
/// two empty sets give 1.0.
pub fn bbox_iou(a: &[BBox], b: &[BBox]) -> f64 {
    let a: Vec<&BBox> = a.iter().filter(|b| b.is_valid()).collect();
    let b: Vec<&BBox> = b.iter().filter(|b| b.is_valid()).collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let all = || a.iter().chain(b.iter());

    // Rasterize on the compressed grid of box edges: each cell is either
    // fully inside or fully outside every box.
    let mut xs: Vec<u64> = all().flat_map(|b| [b.x_min as u64, b.x_max as u64 + 1]).collect();
    let mut ys: Vec<u64> = all().flat_map(|b| [b.y_min as u64, b.y_max as u64 + 1]).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let (mut inter, mut union) = (0u64, 0u64);
    for yw in ys.windows(2) {
        for xw in xs.windows(2) {
            let (cx, cy) = (xw[0] as u32, yw[0] as u32);
            let in_a = a.iter().any(|r| r.contains(cx, cy));
            let in_b = b.iter().any(|r| r.contains(cx, cy));
            let area = (xw[1] - xw[0]) * (yw[1] - yw[0]);
            if in_a && in_b {
                inter += area;
            }
            if in_a || in_b {
                union += area;
            }
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
