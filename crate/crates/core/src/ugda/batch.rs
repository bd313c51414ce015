use std::collections::HashMap;

use image::DynamicImage;
use rayon::prelude::*;

use super::{assess, prefilter_by_quality, AssessError, PrefilterError, UgdaError, UgdaOutcome, VlmConfig};
use crate::chat::ChatEndpoint;
use crate::manifest::{DatasetManifest, ManifestError};

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Prefilter(#[from] PrefilterError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub manifest: DatasetManifest,
    /// Records whose assessment failed; they keep no outcome in the manifest.
    pub failures: Vec<(String, AssessError)>,
}

fn load_pair(manifest: &DatasetManifest, id: &str) -> Result<(DynamicImage, DynamicImage), UgdaError> {
    let rec = manifest.inpaint(id).ok_or_else(|| UgdaError::Image(format!("unknown record {id}")))?;
    let root = manifest
        .root_image(rec)
        .ok_or_else(|| UgdaError::Image(format!("record {id} has no root image")))?;
    let open = |p: &str| {
        image::open(manifest.resolve(p)).map_err(|e| UgdaError::Image(format!("{p}: {e}")))
    };
    Ok((open(&root.path)?, open(&rec.inpainted_path)?))
}

/// Prefilters test-split inpaintings by quality score and assesses the kept
/// fraction; the rest are marked `NOT_ASSESSED`. Pairs are assessed in
/// parallel, at most `concurrency` at a time.
pub fn assess_manifest(
    manifest: &DatasetManifest,
    scores: &HashMap<String, f64>,
    fraction: f64,
    vlm: &dyn ChatEndpoint,
    cfg: &VlmConfig,
    concurrency: usize,
) -> Result<BatchOutcome, BatchError> {
    let candidates: Vec<String> = manifest
        .inpaints
        .iter()
        .filter(|r| r.split.is_test())
        .map(|r| r.id.clone())
        .collect();
    let pre = prefilter_by_quality(&candidates, scores, fraction)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<(String, Result<UgdaOutcome, AssessError>)> = pool.install(|| {
        pre.selected
            .par_iter()
            .map(|id| {
                let outcome = load_pair(manifest, id)
                    .map_err(|error| AssessError { partial: UgdaOutcome::not_assessed(), error })
                    .and_then(|(orig, inp)| assess(&orig, &inp, vlm, cfg));
                (id.clone(), outcome)
            })
            .collect()
    });

    let mut outcomes: HashMap<String, UgdaOutcome> =
        pre.not_assessed.iter().map(|id| (id.clone(), UgdaOutcome::not_assessed())).collect();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(o) => {
                outcomes.insert(id, o);
            }
            Err(e) => {
                log::warn!("assessment of {id} failed: {}", e.error);
                failures.push((id, e));
            }
        }
    }

    let (images, masks, mut inpaints) = manifest.clone().into_parts();
    for rec in &mut inpaints {
        if let Some(o) = outcomes.remove(&rec.id) {
            rec.ugda = Some(o);
        }
    }
    let mut out = DatasetManifest::new(images, masks, inpaints)?;
    out.base_dir = manifest.base_dir.clone();
    Ok(BatchOutcome { manifest: out, failures })
}
