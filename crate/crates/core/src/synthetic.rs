//! Deterministic synthetic datasets and detector outputs for demos, smoke
//! runs and tests.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{eval_items, ground_truth, EvalError};
use crate::imageio::area_fraction;
use crate::manifest::{DatasetManifest, ImageRecord, ManifestError, MaskRecord, SourceDataset, Split};

const LABELS: [&str; 10] = ["person", "dog", "bicycle", "umbrella", "bench", "cup", "car", "kite", "chair", "boat"];

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_images: usize,
    pub width: u32,
    pub height: u32,
    /// Objects per image, each with a distinct label; at least 2.
    pub objects: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_images: 600, width: 48, height: 32, objects: 2, seed: 0 }
    }
}

fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    let d = Sha256::digest(format!("{seed}:{key}").as_bytes());
    ChaCha8Rng::from_seed(d.into())
}

/// Six in ten images go to train, one to val, two to in-domain test and one
/// to out-of-domain test.
fn split_for(i: usize) -> (Split, SourceDataset) {
    match i % 10 {
        0..=5 => (Split::Train, if i % 2 == 0 { SourceDataset::Coco } else { SourceDataset::Raise }),
        6 => (Split::Val, SourceDataset::Coco),
        7 | 8 => (Split::TestId, if i % 2 == 0 { SourceDataset::Coco } else { SourceDataset::Raise }),
        _ => (Split::TestOod, SourceDataset::OpenImages),
    }
}

fn save<P>(img: &image::ImageBuffer<P, Vec<u8>>, path: &Path) -> Result<(), SyntheticError>
where
    P: image::Pixel<Subpixel = u8> + image::PixelWithColorType,
{
    img.save(path).map_err(|source| SyntheticError::Image { path: path.to_path_buf(), source })
}

/// Writes `images/<id>.png` and `masks/<id>_<k>.png` under `dir` and returns
/// the manifest (paths relative to `dir`). Each object is a filled rectangle
/// in its own horizontal band, so masks never overlap.
pub fn generate_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<DatasetManifest, SyntheticError> {
    let objects = spec.objects.clamp(2, LABELS.len());
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|source| SyntheticError::Io { path: d.clone(), source })?;
    }
    let (w, h) = (spec.width.max(8), spec.height.max(8));
    let per_image: Vec<(ImageRecord, Vec<MaskRecord>)> = (0..spec.n_images)
        .into_par_iter()
        .map(|i| {
            let id = format!("syn{i:05}");
            let mut rng = rng_for(spec.seed, &id);
            let base = [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
            let img = RgbImage::from_fn(w, h, |x, y| {
                let n: u8 = rng.random_range(0..16);
                Rgb([
                    base[0].wrapping_add((x * 3) as u8).wrapping_add(n),
                    base[1].wrapping_add((y * 5) as u8),
                    base[2].wrapping_add(((x + y) * 2) as u8),
                ])
            });
            save(&img, &dir.join(format!("images/{id}.png")))?;

            let start = rng.random_range(0..LABELS.len());
            let band = w / objects as u32;
            let mut masks = Vec::new();
            for k in 0..objects {
                let x0 = k as u32 * band + rng.random_range(0..band / 3 + 1);
                let x1 = ((k as u32 + 1) * band).saturating_sub(1 + rng.random_range(0..band / 3 + 1)).max(x0);
                let y0 = rng.random_range(0..h / 3);
                let y1 = rng.random_range(h / 2..h);
                let mask = GrayImage::from_fn(w, h, |x, y| {
                    Luma([if (x0..=x1).contains(&x) && (y0..=y1).contains(&y) { 255 } else { 0 }])
                });
                let mask_path = format!("masks/{id}_{k}.png");
                save(&mask, &dir.join(&mask_path))?;
                masks.push(MaskRecord {
                    id: format!("{id}_m{k}"),
                    image_id: id.clone(),
                    object_label: LABELS[(start + k) % LABELS.len()].to_string(),
                    mask_path,
                    area_fraction: area_fraction(&mask),
                });
            }
            let labels: Vec<&str> = masks.iter().map(|m| m.object_label.as_str()).collect();
            let (split, source_dataset) = split_for(i);
            let record = ImageRecord {
                id: id.clone(),
                source_dataset,
                path: format!("images/{id}.png"),
                width: w,
                height: h,
                split,
                authentic: true,
                caption: Some(format!("a {} next to a {}", labels[0], labels[1])),
            };
            Ok((record, masks))
        })
        .collect::<Result<_, SyntheticError>>()?;

    let mut images = Vec::with_capacity(per_image.len());
    let mut masks = Vec::new();
    for (img, m) in per_image {
        images.push(img);
        masks.extend(m);
    }
    Ok(DatasetManifest::new(images, masks, Vec::new())?.with_base_dir(dir))
}

/// A stand-in detector: each test image's map is its ground truth mixed with
/// uniform noise of weight `noise` (0..1). Inpainted images score in
/// [1 - noise, 1], authentic ones in [0, noise]. Writes the `<id>.png` +
/// `<id>.score` directory convention.
pub fn write_synthetic_detector(
    manifest: &DatasetManifest,
    out_dir: &Path,
    noise: f64,
    seed: u64,
) -> Result<usize, SyntheticError> {
    std::fs::create_dir_all(out_dir).map_err(|source| SyntheticError::Io { path: out_dir.to_path_buf(), source })?;
    let items = eval_items(manifest);
    let noise = noise.clamp(0.0, 1.0);
    items
        .par_iter()
        .map(|item| {
            let gt = ground_truth(item)?;
            let mut rng = rng_for(seed, &item.id);
            let map = GrayImage::from_fn(gt.width(), gt.height(), |x, y| {
                let truth = if gt.get_pixel(x, y)[0] > 127 { 1.0 } else { 0.0 };
                let v: f64 = truth * (1.0 - noise) + noise * rng.random::<f64>();
                Luma([(v * 255.0).round() as u8])
            });
            let score = if item.label.is_inpainted() {
                1.0 - noise * rng.random::<f64>()
            } else {
                noise * rng.random::<f64>()
            };
            save(&map, &out_dir.join(format!("{}.png", item.id)))?;
            let score_path = out_dir.join(format!("{}.score", item.id));
            std::fs::write(&score_path, format!("{score:.6}\n"))
                .map_err(|source| SyntheticError::Io { path: score_path, source })?;
            Ok(())
        })
        .collect::<Result<Vec<()>, SyntheticError>>()
        .map(|v| v.len())
}
